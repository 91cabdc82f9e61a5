//! Base-station power model and energy accounting over a sleep timeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::timeline::SleepTimeline;

/// Power-relevant operating modes, ordered from deepest sleep to fully on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingMode {
    Sm3,
    Sm2,
    Sm1,
    Active,
}

/// Which power a sleeping BS draws once an arrival has forced a wake-up but
/// the committed window has not yet elapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionPower {
    #[default]
    Destination,
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerModel {
    pub p_active_full: f64,
    pub p_idle: f64,
    pub p_sm1: f64,
    pub p_sm2: f64,
    pub p_sm3: f64,
    /// Joules charged per switching event.
    pub p_switch: f64,
    pub dur_sm1: f64,
    pub dur_sm2: f64,
    pub dur_sm3: f64,
    pub transition_power: TransitionPower,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            p_active_full: 702.6,
            p_idle: 114.5,
            p_sm1: 76.5,
            p_sm2: 8.6,
            p_sm3: 6.0,
            p_switch: 0.0,
            dur_sm1: 1.0 / 14_000.0,
            dur_sm2: 0.001,
            dur_sm3: 0.010,
            transition_power: TransitionPower::Destination,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        let ordered = self.p_active_full > self.p_idle
            && self.p_idle > self.p_sm1
            && self.p_sm1 > self.p_sm2
            && self.p_sm2 > self.p_sm3
            && self.p_sm3 > 0.0;
        if !ordered {
            return Err(Error::InvalidParameter(
                "powers must satisfy active > idle > sm1 > sm2 > sm3 > 0".into(),
            ));
        }
        if !(self.dur_sm1 > 0.0 && self.dur_sm1 < self.dur_sm2 && self.dur_sm2 < self.dur_sm3) {
            return Err(Error::InvalidParameter(
                "sleep durations must increase with depth".into(),
            ));
        }
        if self.p_switch < 0.0 {
            return Err(Error::InvalidParameter("p_switch must be >= 0".into()));
        }
        Ok(())
    }

    /// Power draw in watts. `load_fraction` only matters in active mode.
    pub fn instantaneous_power(&self, mode: OperatingMode, load_fraction: f64) -> f64 {
        match mode {
            OperatingMode::Active => {
                assert!(
                    (0.0..=1.0).contains(&load_fraction),
                    "load fraction {load_fraction} outside [0, 1]"
                );
                self.p_idle + load_fraction * (self.p_active_full - self.p_idle)
            }
            OperatingMode::Sm1 => self.p_sm1,
            OperatingMode::Sm2 => self.p_sm2,
            OperatingMode::Sm3 => self.p_sm3,
        }
    }

    pub fn switching_energy(&self, switch_count: u64) -> f64 {
        switch_count as f64 * self.p_switch
    }

    /// Minimum residence of a sleep mode, in whole ticks of `tick_seconds`.
    pub fn min_ticks(&self, mode: OperatingMode, tick_seconds: f64) -> u64 {
        let d = match mode {
            OperatingMode::Active => return 1,
            OperatingMode::Sm1 => self.dur_sm1,
            OperatingMode::Sm2 => self.dur_sm2,
            OperatingMode::Sm3 => self.dur_sm3,
        };
        ((d / tick_seconds).round() as u64).max(1)
    }

    /// Integrates a timeline into total energy, a no-sleep baseline over the
    /// same load profile, and per-mode dwell times.
    pub fn integrate(&self, timeline: &SleepTimeline) -> Result<EnergyReport> {
        let dt = timeline.tick_seconds;
        let l_max = timeline.l_max as f64;
        let slope = (self.p_active_full - self.p_idle) / l_max;
        let mut energy = 0.0;
        let mut baseline = 0.0;
        let mut dwell = ModeDwell::default();
        let mut cursor = timeline.intervals.first().map(|iv| iv.start);

        for iv in &timeline.intervals {
            if iv.end <= iv.start {
                return Err(Error::OverlappingIntervals(iv.start));
            }
            if let Some(c) = cursor {
                if iv.start < c {
                    return Err(Error::OverlappingIntervals(iv.start));
                }
            }
            cursor = Some(iv.end);

            let ticks = (iv.end - iv.start) as f64;
            let load = iv.load_rb as f64;
            baseline += (ticks * self.p_idle + load * slope) * dt;
            let seconds = ticks * dt;
            match iv.mode.operating() {
                OperatingMode::Active => {
                    energy += (ticks * self.p_idle + load * slope) * dt;
                    dwell.active += seconds;
                }
                OperatingMode::Sm1 => {
                    energy += seconds * self.p_sm1;
                    dwell.sm1 += seconds;
                }
                op => {
                    let waking = match (self.transition_power, iv.wake_tick) {
                        (TransitionPower::Destination, Some(w)) => iv.end.saturating_sub(w.max(iv.start)),
                        _ => 0,
                    } as f64;
                    let sleep_power = self.instantaneous_power(op, 0.0);
                    energy += ((ticks - waking) * sleep_power + waking * self.p_idle) * dt;
                    if op == OperatingMode::Sm2 {
                        dwell.sm2 += seconds;
                    } else {
                        dwell.sm3 += seconds;
                    }
                }
            }
        }

        let switch_count = timeline.switch_events.len() as u64;
        let energy_switching = self.switching_energy(switch_count);
        let energy_total = energy + energy_switching;
        let saving_fraction = if baseline > 0.0 {
            1.0 - energy_total / baseline
        } else {
            0.0
        };
        Ok(EnergyReport {
            energy_total,
            energy_no_sleep_baseline: baseline,
            energy_switching,
            saving_fraction,
            switch_count,
            dwell,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeDwell {
    pub active: f64,
    pub sm1: f64,
    pub sm2: f64,
    pub sm3: f64,
}

impl ModeDwell {
    pub fn total(&self) -> f64 {
        self.active + self.sm1 + self.sm2 + self.sm3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub energy_total: f64,
    pub energy_no_sleep_baseline: f64,
    pub energy_switching: f64,
    pub saving_fraction: f64,
    pub switch_count: u64,
    pub dwell: ModeDwell,
}

/// Normalized power-saving reward of a mode: 1 at the deepest sleep, 0 at or
/// above SM1 power.
pub fn normalized_saving(model: &PowerModel, power_watts: f64) -> f64 {
    ((model.p_sm1 - power_watts).max(0.0) / (model.p_sm1 - model.p_sm3)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::timeline::{BsMode, FmState, ModeInterval};

    fn one_interval(mode: BsMode, ticks: u64, load: u64) -> SleepTimeline {
        let mut tl = SleepTimeline::new(1.0 / 14_000.0, 100);
        tl.intervals.push(ModeInterval { start: 0, end: ticks, mode, load_rb: load, wake_tick: None });
        tl
    }

    #[test]
    fn table_powers() {
        let m = PowerModel::default();
        assert_eq!(m.instantaneous_power(OperatingMode::Active, 1.0), 702.6);
        assert_eq!(m.instantaneous_power(OperatingMode::Active, 0.0), 114.5);
        assert_eq!(m.instantaneous_power(OperatingMode::Sm1, 0.3), 76.5);
        assert_eq!(m.instantaneous_power(OperatingMode::Sm2, 0.0), 8.6);
        assert_eq!(m.instantaneous_power(OperatingMode::Sm3, 0.0), 6.0);
        m.validate().unwrap();
    }

    #[test]
    #[should_panic]
    fn load_outside_unit_interval() {
        PowerModel::default().instantaneous_power(OperatingMode::Active, 1.5);
    }

    #[test]
    fn switching_is_linear() {
        let mut m = PowerModel::default();
        assert_eq!(m.switching_energy(0), 0.0);
        m.p_switch = 1.0;
        assert_eq!(m.switching_energy(10), 10.0);
        assert_eq!(m.switching_energy(20), 2.0 * m.switching_energy(10));
    }

    #[test]
    fn min_ticks_match_windows() {
        let m = PowerModel::default();
        let ts = 1.0 / 14_000.0;
        assert_eq!(m.min_ticks(OperatingMode::Sm1, ts), 1);
        assert_eq!(m.min_ticks(OperatingMode::Sm2, ts), 14);
        assert_eq!(m.min_ticks(OperatingMode::Sm3, ts), 140);
    }

    #[test]
    fn one_second_of_sm3() {
        let m = PowerModel::default();
        let r = m.integrate(&one_interval(BsMode::Sm3, 14_000, 0)).unwrap();
        approx::assert_relative_eq!(r.energy_total, 6.0, max_relative = 1e-12);
        approx::assert_relative_eq!(r.energy_no_sleep_baseline, 114.5, max_relative = 1e-12);
        approx::assert_relative_eq!(r.saving_fraction, 1.0 - 6.0 / 114.5, max_relative = 1e-12);
        approx::assert_relative_eq!(r.dwell.total(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn full_load_second() {
        let m = PowerModel::default();
        let r = m
            .integrate(&one_interval(BsMode::Fm(FmState::Serving), 14_000, 14_000 * 100))
            .unwrap();
        approx::assert_relative_eq!(r.energy_total, 702.6, max_relative = 1e-12);
        assert_eq!(r.saving_fraction, 0.0);
    }

    #[test]
    fn wake_transition_power() {
        let mut tl = one_interval(BsMode::Sm3, 140, 0);
        tl.intervals[0].wake_tick = Some(40);
        let mut m = PowerModel::default();
        let dt = tl.tick_seconds;
        let dest = m.integrate(&tl).unwrap().energy_total;
        approx::assert_relative_eq!(dest, (40.0 * 6.0 + 100.0 * 114.5) * dt, max_relative = 1e-12);
        m.transition_power = TransitionPower::Source;
        let src = m.integrate(&tl).unwrap().energy_total;
        approx::assert_relative_eq!(src, 140.0 * 6.0 * dt, max_relative = 1e-12);
    }

    #[test]
    fn overlapping_rejected() {
        let mut tl = one_interval(BsMode::Sm3, 140, 0);
        tl.intervals.push(ModeInterval { start: 100, end: 300, mode: BsMode::Sm3, load_rb: 0, wake_tick: None });
        assert!(matches!(PowerModel::default().integrate(&tl), Err(Error::OverlappingIntervals(100))));
    }

    #[test]
    fn normalized_saving_values() {
        let m = PowerModel::default();
        assert_eq!(normalized_saving(&m, m.p_sm3), 1.0);
        assert_eq!(normalized_saving(&m, m.p_sm1), 0.0);
        assert_eq!(normalized_saving(&m, m.p_idle), 0.0);
        assert!((normalized_saving(&m, m.p_sm2) - 0.963_120_567).abs() < 1e-6);
    }

    #[test]
    fn switching_cost_can_make_saving_negative() {
        let mut tl = one_interval(BsMode::Fm(FmState::Idle), 14, 0);
        for k in 0..10 {
            tl.switch_events.push(crate::sim::timeline::SwitchEvent {
                tick: k,
                from: OperatingMode::Active,
                to: OperatingMode::Sm1,
            });
        }
        let m = PowerModel { p_switch: 1.0, ..PowerModel::default() };
        assert!(m.integrate(&tl).unwrap().saving_fraction < 0.0);
    }
}
