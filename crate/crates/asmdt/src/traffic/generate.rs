use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::ipp::{DemandDistribution, IppParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub time: f64,
    /// Requested volume in bits.
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalStream {
    pub arrivals: Vec<Arrival>,
    pub on_intervals: Vec<(f64, f64)>,
    pub duration: f64,
    pub seed: u64,
}

impl ArrivalStream {
    pub fn empty(duration: f64) -> Self {
        Self {
            arrivals: Vec::new(),
            on_intervals: Vec::new(),
            duration,
            seed: 0,
        }
    }

    /// Appends `other` after the end of `self`, shifting its times.
    pub fn append(&mut self, other: ArrivalStream) {
        let offset = self.duration;
        self.arrivals.extend(other.arrivals.into_iter().map(|a| Arrival {
            time: a.time + offset,
            demand: a.demand,
        }));
        for (s, e) in other.on_intervals {
            match self.on_intervals.last_mut() {
                Some(last) if last.1 == offset && s == 0.0 => last.1 = e + offset,
                _ => self.on_intervals.push((s + offset, e + offset)),
            }
        }
        self.duration += other.duration;
    }

    /// The part of the stream inside `[start, end)`, re-based to time 0.
    pub fn window(&self, start: f64, end: f64) -> ArrivalStream {
        let end = end.min(self.duration);
        ArrivalStream {
            arrivals: self
                .arrivals
                .iter()
                .filter(|a| a.time >= start && a.time < end)
                .map(|a| Arrival { time: a.time - start, demand: a.demand })
                .collect(),
            on_intervals: self
                .on_intervals
                .iter()
                .filter(|iv| iv.1 > start && iv.0 < end)
                .map(|iv| (iv.0.max(start) - start, iv.1.min(end) - start))
                .collect(),
            duration: (end - start).max(0.0),
            seed: self.seed,
        }
    }

    pub fn total_demand(&self) -> f64 {
        self.arrivals.iter().map(|a| a.demand).sum()
    }

    pub fn is_on(&self, t: f64) -> bool {
        let i = self.on_intervals.partition_point(|iv| iv.1 < t);
        self.on_intervals.get(i).is_some_and(|iv| iv.0 <= t && t <= iv.1)
    }
}

/// Draws an IPP arrival stream over `[0, duration)`. The modulating chain
/// starts from its stationary law, so windows are statistically stationary.
pub fn generate_arrivals(params: &IppParams, duration: f64, seed: u64) -> ArrivalStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p_on, _) = params.stationary();
    let mut on = rng.random::<f64>() < p_on;
    let mut t = 0.0;
    let mut on_intervals = Vec::new();
    let mut arrivals = Vec::new();
    let arrival_gap = (params.lambda_on > 0.0).then(|| Exp::new(params.lambda_on).unwrap());
    let demand = Exp::new(1.0 / params.mean_demand).unwrap();

    while t < duration {
        let rate = if on { params.zeta } else { params.tau };
        let sojourn = if rate > 0.0 {
            Exp::new(rate).unwrap().sample(&mut rng)
        } else {
            f64::INFINITY
        };
        let end = (t + sojourn).min(duration);
        if on {
            on_intervals.push((t, end));
            if let Some(gap) = &arrival_gap {
                let mut a = t + gap.sample(&mut rng);
                while a < end {
                    let d = match params.demand_distribution {
                        DemandDistribution::Exponential => demand.sample(&mut rng),
                        DemandDistribution::Deterministic => params.mean_demand,
                    };
                    arrivals.push(Arrival { time: a, demand: d });
                    a += gap.sample(&mut rng);
                }
            }
        }
        t = end;
        on = !on;
    }
    ArrivalStream {
        arrivals,
        on_intervals,
        duration,
        seed,
    }
}

/// Arrival counts over consecutive intervals of length `interval`.
pub fn bin_counts(stream: &ArrivalStream, interval: f64) -> Vec<u64> {
    let n = (stream.duration / interval).floor() as usize;
    let mut counts = vec![0u64; n];
    for a in &stream.arrivals {
        let k = (a.time / interval) as usize;
        if k < n {
            counts[k] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_silent() {
        let p = IppParams::new(0.0, 0.1, 0.5, 1e3);
        assert!(generate_arrivals(&p, 100.0, 1).arrivals.is_empty());
    }

    #[test]
    fn deterministic_in_seed() {
        let p = IppParams::new(6.0, 0.1, 0.5, 1e3);
        assert_eq!(generate_arrivals(&p, 200.0, 9), generate_arrivals(&p, 200.0, 9));
        assert_ne!(generate_arrivals(&p, 200.0, 9), generate_arrivals(&p, 200.0, 10));
    }

    #[test]
    fn arrivals_inside_on_intervals() {
        let p = IppParams::new(6.0, 0.1, 0.5, 1e3);
        let s = generate_arrivals(&p, 500.0, 3);
        assert!(s.arrivals.windows(2).all(|w| w[0].time < w[1].time));
        assert!(s.arrivals.iter().all(|a| s.is_on(a.time)));
    }

    #[test]
    fn append_shifts_and_counts() {
        let p = IppParams::new(6.0, 0.1, 0.5, 1e3);
        let mut a = generate_arrivals(&p, 50.0, 1);
        let b = generate_arrivals(&p, 50.0, 2);
        let n = a.arrivals.len() + b.arrivals.len();
        a.append(b);
        assert_eq!(a.arrivals.len(), n);
        assert_eq!(a.duration, 100.0);
        assert!(a.arrivals.iter().all(|x| a.is_on(x.time)));
        assert_eq!(bin_counts(&a, 1.0).iter().sum::<u64>() as usize, n);
    }
}
