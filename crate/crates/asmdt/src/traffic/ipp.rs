use serde::{Deserialize, Serialize};

use super::trace::SlotStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandDistribution {
    #[default]
    Exponential,
    Deterministic,
}

impl DemandDistribution {
    /// Squared coefficient of variation, Var(ψ)/E(ψ)².
    pub fn scv(self) -> f64 {
        match self {
            DemandDistribution::Exponential => 1.0,
            DemandDistribution::Deterministic => 0.0,
        }
    }
}

/// Interrupted Poisson process with per-arrival demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IppParams {
    /// Arrival rate while ON, per second.
    pub lambda_on: f64,
    /// OFF to ON rate.
    pub tau: f64,
    /// ON to OFF rate.
    pub zeta: f64,
    /// Mean demand per arrival in bits.
    pub mean_demand: f64,
    #[serde(default)]
    pub demand_distribution: DemandDistribution,
}

impl IppParams {
    pub fn new(lambda_on: f64, tau: f64, zeta: f64, mean_demand: f64) -> Self {
        Self {
            lambda_on,
            tau,
            zeta,
            mean_demand,
            demand_distribution: DemandDistribution::Exponential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_on >= 0.0
            && self.tau > 0.0
            && self.zeta >= 0.0
            && self.mean_demand > 0.0
            && [self.lambda_on, self.tau, self.zeta, self.mean_demand].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("IPP parameters out of range: {self:?}")))
        }
    }

    /// Stationary (p_on, p_off) of the ON/OFF modulating chain.
    pub fn stationary(&self) -> (f64, f64) {
        let s = self.tau + self.zeta;
        let p_on = self.tau / s;
        (p_on, 1.0 - p_on)
    }

    pub fn mean_rate(&self) -> f64 {
        self.lambda_on * self.stationary().0
    }
}

/// Mean and variance of the arrival count in a window of `window` seconds.
/// `exact` selects the closed form over the large-window approximation.
pub fn count_moments(params: &IppParams, window: f64, exact: bool) -> (f64, f64) {
    let IppParams { lambda_on: l, tau, zeta, .. } = *params;
    let s = tau + zeta;
    let mean = l * tau * window / s;
    let var = if exact {
        let st = s * window;
        let shape = 1.0 - (-st).exp_m1() / -st;
        mean + 2.0 * l * l * tau * zeta * window / s.powi(3) * shape
    } else {
        mean * (1.0 + 2.0 * l * zeta / (s * s))
    };
    (mean, var)
}

/// Mean and variance of the aggregate demand over a window, using the
/// approximate count variance the fit is built on.
pub fn aggregate_moments(params: &IppParams, window: f64, exact: bool) -> (f64, f64) {
    let (eu, vu) = count_moments(params, window, exact);
    let ed = params.mean_demand;
    let vd = params.demand_distribution.scv() * ed * ed;
    (eu * ed, eu * vd + vu * ed * ed)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    /// When set, an infeasible dispersion is raised to `bound + clamp` instead
    /// of being reported.
    pub clamp: Option<f64>,
    pub demand_distribution: DemandDistribution,
}

fn dispersion_bound(tau: f64, zeta: f64, window: f64) -> f64 {
    2.0 * zeta / (tau * window * (tau + zeta))
}

/// Fits λ and E(ψ) so the slot's aggregate demand mean and variance over
/// `window` are reproduced, given τ and ζ.
pub fn fit_ipp(stats: &SlotStats, tau: f64, zeta: f64, window: f64, opts: FitOptions) -> Result<IppParams> {
    if !(stats.mean_rate > 0.0) || !(tau > 0.0) || !(zeta >= 0.0) || !(window > 0.0) {
        return Err(Error::InvalidParameter("fit needs positive mean, tau and window".into()));
    }
    let mean = stats.mean_rate * window;
    let var = stats.var_rate * window * window;
    fit_moments(mean, var, tau, zeta, window, opts)
}

pub(crate) fn fit_moments(mean: f64, var: f64, tau: f64, zeta: f64, window: f64, opts: FitOptions) -> Result<IppParams> {
    let s = tau + zeta;
    let dispersion = var / (mean * mean);
    let bound = dispersion_bound(tau, zeta, window);
    let mut bracket = dispersion - bound;
    if bracket <= 0.0 {
        match opts.clamp {
            Some(eps) if eps > 0.0 => bracket = eps,
            _ => return Err(Error::Infeasible { dispersion, bound }),
        }
    }
    let scv = opts.demand_distribution.scv();
    let lambda_on = (1.0 + scv) * s / (tau * window * bracket);
    let mean_demand = s * mean / (tau * lambda_on * window);
    Ok(IppParams {
        lambda_on,
        tau,
        zeta,
        mean_demand,
        demand_distribution: opts.demand_distribution,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityGrid {
    pub taus: Vec<f64>,
    pub zetas: Vec<f64>,
    /// `cells[i][j]` is feasibility at (taus[i], zetas[j]).
    pub cells: Vec<Vec<bool>>,
}

/// Evaluates fit feasibility for an aggregate mean/variance over a (τ, ζ) grid.
pub fn feasibility_map(mean: f64, variance: f64, window: f64, taus: &[f64], zetas: &[f64]) -> FeasibilityGrid {
    let dispersion = variance / (mean * mean);
    let cells = taus
        .iter()
        .map(|&t| zetas.iter().map(|&z| dispersion - dispersion_bound(t, z, window) > 0.0).collect())
        .collect();
    FeasibilityGrid {
        taus: taus.to_vec(),
        zetas: zetas.to_vec(),
        cells,
    }
}
