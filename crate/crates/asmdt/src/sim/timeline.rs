use serde::{Deserialize, Serialize};

use crate::power::{OperatingMode, PowerModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FmState {
    Serving,
    Idle,
    Sm1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "sub")]
pub enum BsMode {
    Fm(FmState),
    Sm2,
    Sm3,
}

impl BsMode {
    pub fn operating(self) -> OperatingMode {
        match self {
            BsMode::Fm(FmState::Serving | FmState::Idle) => OperatingMode::Active,
            BsMode::Fm(FmState::Sm1) => OperatingMode::Sm1,
            BsMode::Sm2 => OperatingMode::Sm2,
            BsMode::Sm3 => OperatingMode::Sm3,
        }
    }
}

/// A run of ticks `[start, end)` spent in one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeInterval {
    pub start: u64,
    pub end: u64,
    pub mode: BsMode,
    /// Resource blocks used, summed over the interval's ticks.
    pub load_rb: u64,
    /// First tick of a forced wake-up inside a sleep window.
    pub wake_tick: Option<u64>,
}

impl ModeInterval {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub tick: u64,
    pub from: OperatingMode,
    pub to: OperatingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayedUser {
    pub arrival_time: f64,
    pub service_start: f64,
    pub demand: f64,
}

impl DelayedUser {
    pub fn delay(&self) -> f64 {
        self.service_start - self.arrival_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepTimeline {
    pub tick_seconds: f64,
    pub l_max: u32,
    pub intervals: Vec<ModeInterval>,
    pub switch_events: Vec<SwitchEvent>,
    pub delayed_users: Vec<DelayedUser>,
    pub served_users: usize,
}

impl SleepTimeline {
    pub fn new(tick_seconds: f64, l_max: u32) -> Self {
        Self {
            tick_seconds,
            l_max,
            intervals: Vec::new(),
            switch_events: Vec::new(),
            delayed_users: Vec::new(),
            served_users: 0,
        }
    }

    pub fn horizon_ticks(&self) -> u64 {
        self.intervals.last().map_or(0, |iv| iv.end)
    }

    /// Appends one tick of FM operation, merging with the previous interval
    /// when the sub-state is unchanged.
    pub fn push_fm_tick(&mut self, tick: u64, state: FmState, load_rb: u32) {
        let mode = BsMode::Fm(state);
        self.note_mode(tick, mode.operating());
        if let Some(last) = self.intervals.last_mut() {
            if last.mode == mode && last.end == tick {
                last.end += 1;
                last.load_rb += load_rb as u64;
                return;
            }
        }
        self.intervals.push(ModeInterval {
            start: tick,
            end: tick + 1,
            mode,
            load_rb: load_rb as u64,
            wake_tick: None,
        });
    }

    pub fn push_window(&mut self, start: u64, end: u64, mode: BsMode, wake_tick: Option<u64>) {
        self.note_mode(start, mode.operating());
        self.intervals.push(ModeInterval {
            start,
            end,
            mode,
            load_rb: 0,
            wake_tick,
        });
    }

    fn note_mode(&mut self, tick: u64, mode: OperatingMode) {
        if let Some(prev) = self.intervals.last().map(|iv| iv.mode.operating()) {
            if prev != mode {
                self.switch_events.push(SwitchEvent { tick, from: prev, to: mode });
            }
        }
    }

    /// Intervals clipped to ticks `[start, end)` and shifted to start at 0.
    /// Switch events and users are not carried over.
    pub fn window(&self, start: u64, end: u64) -> SleepTimeline {
        let mut out = SleepTimeline::new(self.tick_seconds, self.l_max);
        let first = self.intervals.partition_point(|iv| iv.end <= start);
        for iv in self.intervals[first..].iter().take_while(|iv| iv.start < end) {
            let (s, e) = (iv.start.max(start), iv.end.min(end));
            let share = (e - s) as f64 / iv.len() as f64;
            out.intervals.push(ModeInterval {
                start: s - start,
                end: e - start,
                mode: iv.mode,
                load_rb: (iv.load_rb as f64 * share).round() as u64,
                wake_tick: iv.wake_tick.filter(|&w| w < e).map(|w| w.max(s) - start),
            });
        }
        out
    }

    /// Whether the intervals tile `[0, horizon)` without gaps or overlaps.
    pub fn is_partition(&self) -> bool {
        let mut cursor = 0;
        for iv in &self.intervals {
            if iv.start != cursor || iv.end <= iv.start {
                return false;
            }
            cursor = iv.end;
        }
        true
    }

    /// Whether every SM2/SM3 interval lasts at least its minimum duration.
    pub fn respects_min_durations(&self, model: &PowerModel) -> bool {
        self.intervals.iter().all(|iv| match iv.mode {
            BsMode::Sm2 | BsMode::Sm3 => iv.len() >= model.min_ticks(iv.mode.operating(), self.tick_seconds),
            BsMode::Fm(_) => true,
        })
    }

    /// Lengths, in ticks, of the maximal runs with zero served load.
    pub fn zero_load_runs(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut current = 0;
        for iv in &self.intervals {
            if iv.load_rb == 0 {
                current += iv.len();
            } else {
                if current > 0 {
                    runs.push(current);
                }
                current = 0;
            }
        }
        if current > 0 {
            runs.push(current);
        }
        runs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fm_ticks_merge() {
        let mut tl = SleepTimeline::new(1.0, 100);
        tl.push_fm_tick(0, FmState::Serving, 5);
        tl.push_fm_tick(1, FmState::Serving, 7);
        tl.push_fm_tick(2, FmState::Sm1, 0);
        tl.push_window(3, 143, BsMode::Sm3, None);
        assert_eq!(tl.intervals.len(), 3);
        assert_eq!(tl.intervals[0].load_rb, 12);
        assert_eq!(tl.switch_events.len(), 2);
        assert!(tl.is_partition());
        assert_eq!(tl.zero_load_runs(), vec![141]);
    }

    #[test]
    fn short_sleep_is_flagged() {
        let mut tl = SleepTimeline::new(1.0 / 14_000.0, 100);
        tl.push_window(0, 10, BsMode::Sm2, None);
        assert!(!tl.respects_min_durations(&PowerModel::default()));
    }
}
