//! Threshold-N sleeping under IPP arrivals.
//!
//! The BS sleeps once the queue empties and wakes when N users have
//! accumulated, or earlier through the OFF-phase wake rate `lambda2`.
//! [`closed_forms`] evaluates the published product-form expressions as
//! written; [`numeric_oracle`] solves the same chain numerically and is the
//! reference the closed forms are compared against.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::twin::{stationary_dense, Generator, TAIL_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub lambda: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub zeta: f64,
    pub mu: f64,
    pub n: usize,
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lambda, self.tau, self.zeta, self.mu];
        if positive.iter().any(|r| !(*r > 0.0) || !r.is_finite()) || !(self.lambda2 >= 0.0) || !self.lambda2.is_finite() {
            return Err(Error::InvalidParameter("threshold rates must be positive (lambda2 non-negative)".into()));
        }
        if self.n < 1 {
            return Err(Error::InvalidParameter("threshold N must be at least 1".into()));
        }
        if self.mu <= self.lambda * self.p_on() {
            return Err(Error::InvalidParameter(format!(
                "unstable: mu {} <= mean arrival rate {}",
                self.mu,
                self.lambda * self.p_on()
            )));
        }
        Ok(())
    }

    pub fn p_on(&self) -> f64 {
        self.tau / (self.tau + self.zeta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResults {
    pub kappa: f64,
    pub nu10: f64,
    pub v_sleep: f64,
    pub u_sleep: f64,
    pub mean_delay: f64,
    pub empty_sleep_prob: f64,
    pub empty_sleep_duration: f64,
    pub f_m: f64,
}

pub fn kappa(p: &ThresholdParams) -> f64 {
    2.0 + p.zeta * p.lambda2 / (p.lambda * (p.tau + p.lambda2))
}

fn big_lambda(k: f64, m: i32) -> f64 {
    k.powi(m) - 2.0 * (k - 1.0) * (k.powi(m - 2) - 1.0) / (1.0 - 1.0 / k)
}

/// The product-form expressions, evaluated exactly as published.
pub fn closed_forms(p: &ThresholdParams) -> Result<ThresholdResults> {
    p.validate()?;
    let k = kappa(p);
    if (k - 1.0).abs() < f64::EPSILON {
        return Err(Error::InvalidParameter("kappa = 1".into()));
    }
    let n = p.n as i32;
    let u1 = p.p_on();
    let geo: f64 = (0..n).map(|m| k.powi(-m)).sum();
    let weighted: f64 = (0..n).map(|m| big_lambda(k, m) * k.powi(-m)).sum();
    let t2 = p.tau + p.lambda2;
    let nu10 = (p.mu - p.lambda * u1) / ((p.mu - p.lambda + p.mu * p.zeta / t2) * geo + p.lambda * weighted);
    let v_sleep = (1.0 + p.zeta / t2 * geo) * nu10;
    let tail = k.powi(-(n - 1));
    let u_sleep = ((t2 + p.zeta) / t2) * (k * (1.0 - tail) - f64::from(n) * (k - 1.0) * tail) / (k - 1.0).powi(2) * nu10;
    Ok(ThresholdResults {
        kappa: k,
        nu10,
        v_sleep,
        u_sleep,
        mean_delay: u_sleep / (p.lambda * u1),
        empty_sleep_prob: (p.tau + p.zeta + p.lambda2) / t2 * nu10,
        empty_sleep_duration: t2 / ((p.tau + p.zeta + p.lambda2) * nu10),
        f_m: 2.0 * nu10 * (p.lambda + p.zeta / t2 * p.lambda2) * geo,
    })
}

/// How an ON-phase arrival acts on a sleeping BS in the oracle chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SleepArrivals {
    /// One arrival stream at rate λ; it only wakes the BS at the N-th user.
    Single,
    /// Two competing streams at rate λ each, one accumulating and one
    /// waking immediately, matching the `(2λ + ζ)` outflow as printed.
    #[default]
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub results: ThresholdResults,
    /// Sleep mass with m users waiting, ON and OFF.
    pub nu_on: Vec<f64>,
    pub nu_off: Vec<f64>,
    pub max_users: usize,
    pub total_mass: f64,
    pub residual: f64,
    pub on_mass: f64,
    /// Waiting users from arrival flow times expected remaining sleep.
    pub little_users: f64,
}

struct Layout {
    n: usize,
    max_users: usize,
}

impl Layout {
    fn sleep(&self, on: bool, m: usize) -> usize {
        2 * m + usize::from(!on)
    }

    fn active(&self, on: bool, m: usize) -> usize {
        2 * self.n + 2 * (m - 1) + usize::from(!on)
    }

    fn size(&self) -> usize {
        2 * self.n + 2 * self.max_users
    }
}

fn oracle_generator(p: &ThresholdParams, lay: &Layout, arrivals: SleepArrivals) -> Generator {
    let mut g = Generator::new(lay.size());
    let n = lay.n;
    for m in 0..n {
        let (on, off) = (lay.sleep(true, m), lay.sleep(false, m));
        if arrivals == SleepArrivals::Double {
            g.add(on, lay.active(true, m + 1), p.lambda);
        }
        let next = if m + 1 < n { lay.sleep(true, m + 1) } else { lay.active(true, n) };
        g.add(on, next, p.lambda);
        g.add(on, off, p.zeta);
        g.add(off, on, p.tau);
        if m >= 1 {
            g.add(off, lay.active(false, m), p.lambda2);
        }
    }
    for m in 1..=lay.max_users {
        for on in [true, false] {
            let here = lay.active(on, m);
            g.add(here, lay.active(!on, m), if on { p.zeta } else { p.tau });
            if on && m < lay.max_users {
                g.add(here, lay.active(true, m + 1), p.lambda);
            }
            let down = if m > 1 { lay.active(on, m - 1) } else { lay.sleep(on, 0) };
            g.add(here, down, p.mu);
        }
    }
    g
}

/// Expected time until the chain leaves the sleep states, from each of them.
fn exit_times(g: &Generator, sleep_states: usize) -> Result<Vec<f64>> {
    let mut a = DMatrix::<f64>::zeros(sleep_states, sleep_states);
    for s in 0..sleep_states {
        a[(s, s)] = g.exit[s];
        for &(t, r) in &g.transitions[s] {
            if t < sleep_states {
                a[(s, t)] -= r;
            }
        }
    }
    let ones = DVector::from_element(sleep_states, 1.0);
    let t = a.lu().solve(&ones).ok_or(Error::NotIrreducible)?;
    Ok(t.iter().copied().collect())
}

const ORACLE_CAP: usize = 3200;

/// Solves the truncated chain and reads every quantity straight off the
/// stationary distribution. The truncation doubles until the last active
/// level is below the tail tolerance.
pub fn numeric_oracle(p: &ThresholdParams, max_users: usize, arrivals: SleepArrivals) -> Result<OracleReport> {
    p.validate()?;
    let mut lay = Layout {
        n: p.n,
        max_users: max_users.max(p.n + 1),
    };
    loop {
        let g = oracle_generator(p, &lay, arrivals);
        let x = stationary_dense(&g, lay.sleep(true, 0))?;
        let tail = x[lay.active(true, lay.max_users)] + x[lay.active(false, lay.max_users)];
        if tail >= TAIL_TOLERANCE {
            if lay.max_users * 2 > ORACLE_CAP {
                return Err(Error::Truncation { tail, max_users: lay.max_users });
            }
            lay.max_users *= 2;
            continue;
        }
        return report(p, &lay, &g, &x);
    }
}

fn report(p: &ThresholdParams, lay: &Layout, g: &Generator, x: &[f64]) -> Result<OracleReport> {
    let n = lay.n;
    let nu_on: Vec<f64> = (0..n).map(|m| x[lay.sleep(true, m)]).collect();
    let nu_off: Vec<f64> = (0..n).map(|m| x[lay.sleep(false, m)]).collect();
    let v_sleep: f64 = nu_on.iter().chain(&nu_off).sum();
    let u_sleep: f64 = (0..n).map(|m| m as f64 * (nu_on[m] + nu_off[m])).sum();
    let on_mass: f64 = x.iter().step_by(2).sum();

    let t = exit_times(g, 2 * n)?;
    let little_users: f64 = (0..n.saturating_sub(1)).map(|m| p.lambda * nu_on[m] * t[lay.sleep(true, m + 1)]).sum();

    let entry_flow = p.mu * (x[lay.active(true, 1)] + x[lay.active(false, 1)]);
    let empty = nu_on[0] + nu_off[0];
    let sleep_exit_flow: f64 = (0..2 * n)
        .map(|s| x[s] * g.transitions[s].iter().filter(|(t, _)| *t >= 2 * n).map(|(_, r)| r).sum::<f64>())
        .sum();

    Ok(OracleReport {
        results: ThresholdResults {
            kappa: kappa(p),
            nu10: nu_on[0],
            v_sleep,
            u_sleep,
            mean_delay: little_users / (p.lambda * on_mass),
            empty_sleep_prob: empty,
            empty_sleep_duration: if entry_flow > 0.0 { empty / entry_flow } else { 0.0 },
            f_m: entry_flow + sleep_exit_flow,
        },
        nu_on,
        nu_off,
        max_users: lay.max_users,
        total_mass: x.iter().sum(),
        residual: g.residual(x),
        on_mass,
        little_users,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub params: ThresholdParams,
    pub closed: ThresholdResults,
    pub oracle: ThresholdResults,
    pub rel_dev_v_sleep: f64,
    pub rel_dev_u_sleep: f64,
    pub rel_dev_nu10: f64,
    pub normalization_error: f64,
    pub little_gap: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

pub fn compare(p: &ThresholdParams, max_users: usize, arrivals: SleepArrivals) -> Result<ComparisonRow> {
    let closed = closed_forms(p)?;
    let oracle = numeric_oracle(p, max_users, arrivals)?;
    let o = oracle.results;
    Ok(ComparisonRow {
        params: *p,
        closed,
        oracle: o,
        rel_dev_v_sleep: rel(closed.v_sleep, o.v_sleep),
        rel_dev_u_sleep: rel(closed.u_sleep, o.u_sleep),
        rel_dev_nu10: rel(closed.nu10, o.nu10),
        normalization_error: (oracle.total_mass - 1.0).abs(),
        little_gap: (oracle.little_users - o.u_sleep).abs(),
    })
}

/// 27-point grid over arrival rate, OFF wake rate and threshold.
pub fn default_grid() -> Vec<ThresholdParams> {
    let mut grid = Vec::new();
    for lambda in [1.0, 3.0, 6.0] {
        for lambda2 in [0.0, 0.2, 1.0] {
            for n in [1, 3, 5] {
                grid.push(ThresholdParams {
                    lambda,
                    lambda2,
                    tau: 0.1,
                    zeta: 0.5,
                    mu: 10.0,
                    n,
                });
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda2: f64, n: usize) -> ThresholdParams {
        ThresholdParams {
            lambda: 1.0,
            lambda2,
            tau: 0.1,
            zeta: 0.5,
            mu: 5.0,
            n,
        }
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa(&params(0.0, 3)), 2.0);
        let mut p = params(1.0, 3);
        assert!((kappa(&p) - (2.0 + 0.5 / 1.1)).abs() < 1e-12);
        p.zeta = 1e-300;
        assert!((kappa(&p) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_threshold_sums_collapse() {
        let p = params(0.2, 1);
        let c = closed_forms(&p).unwrap();
        assert!((c.v_sleep - (1.0 + 0.5 / 0.3) * c.nu10).abs() < 1e-15);
    }

    #[test]
    fn oracle_is_normalized_and_obeys_little() {
        for arrivals in [SleepArrivals::Single, SleepArrivals::Double] {
            let r = numeric_oracle(&params(0.2, 3), 200, arrivals).unwrap();
            assert!((r.total_mass - 1.0).abs() < 1e-10);
            assert!(r.residual < 1e-10);
            assert!((r.little_users - r.results.u_sleep).abs() < 1e-8);
            assert!((r.on_mass - 0.1 / 0.6).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_sleep_mass_is_geometric() {
        let p = params(0.2, 4);
        let r = numeric_oracle(&p, 200, SleepArrivals::Double).unwrap();
        let k = kappa(&p);
        for m in 1..3 {
            assert!((r.nu_on[m - 1] / r.nu_on[m] - k).abs() < 1e-8);
            assert!((r.nu_on[m] - (p.tau + p.lambda2) / p.zeta * r.nu_off[m]).abs() < 1e-12);
        }
    }

    #[test]
    fn unstable_params_are_rejected() {
        let mut p = params(0.0, 2);
        p.mu = 0.1;
        assert!(closed_forms(&p).is_err());
        assert!(numeric_oracle(&p, 200, SleepArrivals::Double).is_err());
    }
}
