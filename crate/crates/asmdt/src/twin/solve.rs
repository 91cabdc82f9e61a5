use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::chain::{ChainSpec, Generator};
use crate::error::{Error, Result};

/// Largest probability mass tolerated in the last active level.
pub const TAIL_TOLERANCE: f64 = 1e-12;
const MAX_USERS_CAP: usize = 800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    /// Sleep-state mass, `nu[mode][0]` with the source ON, `[1]` OFF.
    pub nu: [[f64; 2]; 3],
    /// Active-state mass, `u[m - 1]` for m users, ON then OFF.
    pub u: Vec<[f64; 2]>,
    pub residual: f64,
}

impl SteadyState {
    pub fn from_probs(probs: &[f64], residual: f64) -> Self {
        let mut nu = [[0.0; 2]; 3];
        for (i, row) in nu.iter_mut().enumerate() {
            *row = [probs[2 * i], probs[2 * i + 1]];
        }
        let u = probs[6..].chunks(2).map(|c| [c[0], c[1]]).collect();
        Self { nu, u, residual }
    }

    pub fn probs(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.nu.iter().flatten().copied().collect();
        out.extend(self.u.iter().flatten());
        out
    }

    pub fn total(&self) -> f64 {
        self.probs().iter().sum()
    }

    pub fn on_mass(&self) -> f64 {
        self.nu.iter().map(|r| r[0]).sum::<f64>() + self.u.iter().map(|r| r[0]).sum::<f64>()
    }

    pub fn tail(&self) -> f64 {
        self.u.last().map_or(0.0, |r| r[0] + r[1])
    }
}

fn reach(adj: &[Vec<usize>], root: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(s) = queue.pop_front() {
        for &t in &adj[s] {
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    seen
}

/// States in the closed class containing `root`. Errors if some state
/// reachable from it cannot get back.
fn recurrent_class(gen: &Generator, root: usize) -> Result<Vec<usize>> {
    let fwd: Vec<Vec<usize>> = gen.transitions.iter().map(|r| r.iter().map(|&(t, _)| t).collect()).collect();
    let mut rev = vec![Vec::new(); gen.n];
    for (s, row) in fwd.iter().enumerate() {
        for &t in row {
            rev[t].push(s);
        }
    }
    let down = reach(&fwd, root);
    let up = reach(&rev, root);
    if down.iter().zip(&up).any(|(&d, &u)| d && !u) {
        return Err(Error::NotIrreducible);
    }
    Ok((0..gen.n).filter(|&s| down[s]).collect())
}

/// Dense solve of `xQ = 0`, `Σx = 1` on the class of `root`; other states
/// get zero mass.
pub fn stationary_dense(gen: &Generator, root: usize) -> Result<Vec<f64>> {
    let class = recurrent_class(gen, root)?;
    let k = class.len();
    let mut pos = vec![usize::MAX; gen.n];
    for (p, &s) in class.iter().enumerate() {
        pos[s] = p;
    }
    // Transposed generator so that the unknown is a column vector.
    let mut a = DMatrix::<f64>::zeros(k, k);
    for (p, &s) in class.iter().enumerate() {
        a[(p, p)] -= gen.exit[s];
        for &(t, r) in &gen.transitions[s] {
            a[(pos[t], p)] += r;
        }
    }
    for c in 0..k {
        a[(k - 1, c)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k);
    rhs[k - 1] = 1.0;
    let x = a.lu().solve(&rhs).ok_or(Error::NotIrreducible)?;
    let mut probs = vec![0.0; gen.n];
    for (p, &s) in class.iter().enumerate() {
        probs[s] = x[p].max(0.0);
    }
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(probs)
}

/// Uniformized power iteration, independent of the dense path. Stops once
/// the balance residual drops to `tol`.
pub fn stationary_power(gen: &Generator, root: usize, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let class = recurrent_class(gen, root)?;
    let rate = 1.05 * gen.exit.iter().fold(0.0f64, |m, &e| m.max(e));
    let mut x = vec![0.0; gen.n];
    for &s in &class {
        x[s] = 1.0 / class.len() as f64;
    }
    let mut next = vec![0.0; gen.n];
    for it in 0..max_iter {
        for (s, v) in next.iter_mut().enumerate() {
            *v = x[s] * (1.0 - gen.exit[s] / rate);
        }
        for &s in &class {
            for &(t, r) in &gen.transitions[s] {
                next[t] += x[s] * r / rate;
            }
        }
        std::mem::swap(&mut x, &mut next);
        if it % 64 == 63 && gen.residual(&x) <= tol {
            break;
        }
    }
    let sum: f64 = x.iter().sum();
    x.iter_mut().for_each(|p| *p /= sum);
    Ok(x)
}

/// Root of the twin's recurrent class: one user, source ON.
const TWIN_ROOT: usize = 6;

pub fn steady_state(gen: &Generator) -> Result<SteadyState> {
    let probs = stationary_dense(gen, TWIN_ROOT)?;
    Ok(SteadyState::from_probs(&probs, gen.residual(&probs)))
}

pub fn steady_state_power(gen: &Generator, tol: f64, max_iter: usize) -> Result<SteadyState> {
    let probs = stationary_power(gen, TWIN_ROOT, tol, max_iter)?;
    Ok(SteadyState::from_probs(&probs, gen.residual(&probs)))
}

/// Solves the spec, doubling the truncation until the last active level
/// carries less than [`TAIL_TOLERANCE`]. Returns the spec actually used.
pub fn solve_spec(spec: &ChainSpec) -> Result<(ChainSpec, SteadyState)> {
    spec.validate()?;
    let mut spec = spec.clone();
    loop {
        let ss = steady_state(&spec.generator())?;
        let tail = ss.tail();
        if tail < TAIL_TOLERANCE {
            return Ok((spec, ss));
        }
        if spec.max_users * 2 > MAX_USERS_CAP {
            return Err(Error::Truncation { tail, max_users: spec.max_users });
        }
        spec.max_users *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_chain_matches_ipp_law() {
        let mut g = Generator::new(2);
        g.add(0, 1, 0.5);
        g.add(1, 0, 0.1);
        let p = stationary_dense(&g, 0).unwrap();
        assert!((p[0] - 0.1 / 0.6).abs() < 1e-14);
        assert!((p[1] - 0.5 / 0.6).abs() < 1e-14);
    }

    #[test]
    fn calibrated_chain_is_solved() {
        let (spec, ss) = solve_spec(&ChainSpec::calibrated(5.0)).unwrap();
        assert!(ss.residual <= 1e-10);
        assert!((ss.total() - 1.0).abs() <= 1e-10);
        assert!((ss.on_mass() - spec.tau / (spec.tau + spec.zeta)).abs() < 1e-10);
        assert!(ss.tail() < TAIL_TOLERANCE);
    }

    #[test]
    fn power_iteration_agrees() {
        let mut spec = ChainSpec::calibrated(3.0);
        spec.max_users = 30;
        spec.inter_sm[1][2] = 0.7;
        spec.entry_split = [0.2, 0.3, 0.5];
        let g = spec.generator();
        let a = steady_state(&g).unwrap().probs();
        let b = steady_state_power(&g, 1e-13, 10_000_000).unwrap().probs();
        let diff = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn unused_sleep_mode_is_pruned() {
        let mut spec = ChainSpec::calibrated(2.0);
        spec.entry_split = [0.5, 0.5, 0.0];
        let (_, ss) = solve_spec(&spec).unwrap();
        assert_eq!(ss.nu[2], [0.0, 0.0]);
        assert!(ss.residual <= 1e-10);
    }

    #[test]
    fn absorbing_sleep_is_not_irreducible() {
        let spec = ChainSpec::calibrated(0.0);
        assert!(matches!(steady_state(&spec.generator()), Err(Error::NotIrreducible)));
    }

    #[test]
    fn overloaded_chain_hits_the_cap() {
        let mut spec = ChainSpec::calibrated(40.0);
        spec.tau = 10.0;
        spec.zeta = 0.1;
        spec.mu = 5.0;
        assert!(matches!(solve_spec(&spec), Err(Error::Truncation { .. })));
    }
}
