use serde::{Deserialize, Serialize};

use super::ipp::IppParams;
use crate::error::{Error, Result};

/// Default observation interval in seconds. Short intervals keep the
/// within-interval switching bias of the Poisson emission small.
pub const DEFAULT_INTERVAL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaumWelchResult {
    pub params: IppParams,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when every observation is zero; the ON rate is not identifiable.
    pub lambda_vanished: bool,
}

struct Model {
    rate: f64,
    /// Row-stochastic transition matrix over (ON, OFF).
    trans: [[f64; 2]; 2],
    init: [f64; 2],
}

fn switch_probs(tau: f64, zeta: f64, interval: f64) -> (f64, f64) {
    let s = tau + zeta;
    let e = -(-s * interval).exp_m1();
    (zeta / s * e, tau / s * e)
}

struct Posterior {
    log_likelihood: f64,
    gamma_on: Vec<f64>,
    xi: [[f64; 2]; 2],
    gamma_from: [f64; 2],
    gamma0: [f64; 2],
}

fn e_step(counts: &[u64], model: &Model, interval: f64, ln_fact: &[f64]) -> Posterior {
    let n = counts.len();
    let mean = model.rate * interval;
    let ln_mean = mean.ln();
    let emit = |k: u64| -> [f64; 2] {
        let on = if mean > 0.0 {
            (k as f64 * ln_mean - mean - ln_fact[k as usize]).exp()
        } else if k == 0 {
            1.0
        } else {
            0.0
        };
        [on, if k == 0 { 1.0 } else { 0.0 }]
    };

    let mut alpha = vec![[0.0; 2]; n];
    let mut scale = vec![0.0; n];
    let b = emit(counts[0]);
    alpha[0] = [model.init[0] * b[0], model.init[1] * b[1]];
    for t in 0..n {
        if t > 0 {
            let b = emit(counts[t]);
            let p = alpha[t - 1];
            for j in 0..2 {
                alpha[t][j] = (p[0] * model.trans[0][j] + p[1] * model.trans[1][j]) * b[j];
            }
        }
        let c = (alpha[t][0] + alpha[t][1]).max(f64::MIN_POSITIVE);
        scale[t] = c;
        alpha[t][0] /= c;
        alpha[t][1] /= c;
    }

    let mut beta = vec![[1.0; 2]; n];
    let mut xi = [[0.0; 2]; 2];
    let mut gamma_from = [0.0; 2];
    for t in (0..n.saturating_sub(1)).rev() {
        let b = emit(counts[t + 1]);
        let nb = beta[t + 1];
        for i in 0..2 {
            let mut acc = 0.0;
            for j in 0..2 {
                let w = model.trans[i][j] * b[j] * nb[j] / scale[t + 1];
                acc += w;
                xi[i][j] += alpha[t][i] * w;
            }
            beta[t][i] = acc;
        }
        gamma_from[0] += alpha[t][0] * beta[t][0];
        gamma_from[1] += alpha[t][1] * beta[t][1];
    }

    let gamma_on: Vec<f64> = (0..n)
        .map(|t| {
            let g0 = alpha[t][0] * beta[t][0];
            let g1 = alpha[t][1] * beta[t][1];
            g0 / (g0 + g1)
        })
        .collect();
    let g0 = gamma_on[0];
    Posterior {
        log_likelihood: scale.iter().map(|c| c.ln()).sum(),
        gamma_on,
        xi,
        gamma_from,
        gamma0: [g0, 1.0 - g0],
    }
}

/// Maximum-likelihood re-estimation of (λ, τ, ζ) from arrival counts over
/// uniform intervals, by forward-backward EM on the two-state chain whose
/// OFF state emits nothing.
pub fn baum_welch(counts: &[u64], interval: f64, init: &IppParams, tol: f64, max_iter: usize) -> Result<BaumWelchResult> {
    init.validate()?;
    if !(interval > 0.0) || init.lambda_on <= 0.0 {
        return Err(Error::InvalidParameter("baum_welch needs interval > 0 and lambda > 0".into()));
    }
    if counts.iter().all(|&c| c == 0) {
        return Ok(BaumWelchResult {
            params: *init,
            log_likelihood: Vec::new(),
            iterations: 0,
            converged: false,
            lambda_vanished: true,
        });
    }

    let kmax = *counts.iter().max().unwrap() as usize;
    let mut ln_fact = vec![0.0; kmax + 1];
    for k in 1..=kmax {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }

    let (a01, a10) = switch_probs(init.tau, init.zeta, interval);
    let (p_on, p_off) = init.stationary();
    let mut model = Model {
        rate: init.lambda_on,
        trans: [[1.0 - a01, a01], [a10, 1.0 - a10]],
        init: [p_on, p_off],
    };
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter {
        let post = e_step(counts, &model, interval, &ln_fact);
        let ll = post.log_likelihood;
        if let Some(&prev) = history.last() {
            if ll - prev < tol {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);

        let on_mass: f64 = post.gamma_on.iter().sum();
        let on_counts: f64 = post.gamma_on.iter().zip(counts).map(|(g, &c)| g * c as f64).sum();
        model.rate = on_counts / (on_mass * interval);
        for i in 0..2 {
            if post.gamma_from[i] > 0.0 {
                let total = post.xi[i][0] + post.xi[i][1];
                model.trans[i] = [post.xi[i][0] / total, post.xi[i][1] / total];
            }
        }
        model.init = post.gamma0;
    }

    let a01 = model.trans[0][1];
    let a10 = model.trans[1][0];
    let s_disc = (a01 + a10).clamp(f64::MIN_POSITIVE, 1.0 - 1e-12);
    let total = -(-s_disc).ln_1p() / interval;
    let params = IppParams {
        lambda_on: model.rate,
        tau: a10 / s_disc * total,
        zeta: a01 / s_disc * total,
        mean_demand: init.mean_demand,
        demand_distribution: init.demand_distribution,
    };
    Ok(BaumWelchResult {
        params,
        iterations: history.len(),
        log_likelihood: history,
        converged,
        lambda_vanished: false,
    })
}
