//! Stacked LSTM encoder with a linear action-value head, hand-differentiated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACTIONS: usize = 3;
const CHECKPOINT_VERSION: u32 = 1;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One layer: gate pre-activations `z = W [x; h] + b`, gates ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input: usize,
    pub hidden: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmLayer {
    fn cols(&self) -> usize {
        self.input + self.hidden
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub layers: Vec<LstmLayer>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct StepCache {
    xh: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Activations of a full unroll, kept for back-propagation.
pub struct Unroll {
    caches: Vec<Vec<StepCache>>,
    top: Vec<Vec<f64>>,
    /// Steps at which the recurrent state was zeroed before the input.
    resets: Vec<bool>,
    pub q: Vec<[f64; ACTIONS]>,
}

impl Unroll {
    pub fn context(&self, t: usize) -> &[f64] {
        &self.top[t]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    input: usize,
    hidden: usize,
    layers: usize,
    actions: usize,
    network: QNetwork,
}

impl QNetwork {
    pub fn new(input: usize, hidden: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let inp = if l == 0 { input } else { hidden };
            let scale = 1.0 / ((inp + hidden) as f64).sqrt();
            let w = (0..4 * hidden * (inp + hidden)).map(|_| rng.random_range(-scale..scale)).collect();
            let mut b = vec![0.0; 4 * hidden];
            b[hidden..2 * hidden].fill(1.0);
            out.push(LstmLayer { input: inp, hidden, w, b });
        }
        let scale = 1.0 / (hidden as f64).sqrt();
        Self {
            layers: out,
            head_w: (0..ACTIONS * hidden).map(|_| rng.random_range(-scale..scale)).collect(),
            head_b: vec![0.0; ACTIONS],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.push(&l.w);
            v.push(&l.b);
        }
        v.push(&self.head_w);
        v.push(&self.head_b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            v.push(&mut l.w);
            v.push(&mut l.b);
        }
        v.push(&mut self.head_w);
        v.push(&mut self.head_b);
        v
    }

    pub fn zero_state(&self) -> LstmState {
        let n = self.layers.len();
        let h = self.hidden_size();
        LstmState {
            h: vec![vec![0.0; h]; n],
            c: vec![vec![0.0; h]; n],
        }
    }

    fn head(&self, h: &[f64]) -> [f64; ACTIONS] {
        let hid = h.len();
        let mut q = [0.0; ACTIONS];
        for (a, qa) in q.iter_mut().enumerate() {
            let row = &self.head_w[a * hid..(a + 1) * hid];
            *qa = self.head_b[a] + row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>();
        }
        q
    }

    fn layer_step(layer: &LstmLayer, x: &[f64], h: &mut [f64], c: &mut [f64]) -> StepCache {
        let hid = layer.hidden;
        let cols = layer.cols();
        let mut xh = Vec::with_capacity(cols);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h);
        let mut gates = layer.b.clone();
        for (r, g) in gates.iter_mut().enumerate() {
            let row = &layer.w[r * cols..(r + 1) * cols];
            *g += row.iter().zip(&xh).map(|(w, v)| w * v).sum::<f64>();
        }
        for k in 0..hid {
            gates[k] = sigmoid(gates[k]);
            gates[hid + k] = sigmoid(gates[hid + k]);
            gates[2 * hid + k] = gates[2 * hid + k].tanh();
            gates[3 * hid + k] = sigmoid(gates[3 * hid + k]);
        }
        let c_prev = c.to_vec();
        let mut tanh_c = vec![0.0; hid];
        for k in 0..hid {
            c[k] = gates[hid + k] * c_prev[k] + gates[k] * gates[2 * hid + k];
            tanh_c[k] = c[k].tanh();
            h[k] = gates[3 * hid + k] * tanh_c[k];
        }
        StepCache { xh, gates, c_prev, tanh_c }
    }

    /// Advances the recurrent state by one input and returns action values.
    pub fn step(&self, state: &mut LstmState, x: &[f64]) -> [f64; ACTIONS] {
        let mut input = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            Self::layer_step(layer, &input, &mut state.h[l], &mut state.c[l]);
            input.clone_from(&state.h[l]);
        }
        self.head(&input)
    }

    /// Runs a sequence from the zero state, keeping every activation.
    pub fn unroll(&self, xs: &[Vec<f64>]) -> Unroll {
        self.unroll_with_resets(xs, &vec![false; xs.len()])
    }

    /// Like [`unroll`](Self::unroll), but zeroes the state before every
    /// step flagged in `resets`, so one pass can span several episodes.
    pub fn unroll_with_resets(&self, xs: &[Vec<f64>], resets: &[bool]) -> Unroll {
        assert_eq!(xs.len(), resets.len(), "one reset flag per step");
        let mut state = self.zero_state();
        let mut caches = vec![Vec::with_capacity(xs.len()); self.layers.len()];
        let mut top = Vec::with_capacity(xs.len());
        let mut q = Vec::with_capacity(xs.len());
        for (x, &reset) in xs.iter().zip(resets) {
            if reset {
                state = self.zero_state();
            }
            let mut input = x.clone();
            for (l, layer) in self.layers.iter().enumerate() {
                let cache = Self::layer_step(layer, &input, &mut state.h[l], &mut state.c[l]);
                caches[l].push(cache);
                input.clone_from(&state.h[l]);
            }
            q.push(self.head(&input));
            top.push(input);
        }
        Unroll { caches, top, resets: resets.to_vec(), q }
    }

    /// Action values and context vector after a sequence of exactly
    /// `expected_len` states.
    pub fn forward(&self, xs: &[Vec<f64>], expected_len: usize) -> Result<([f64; ACTIONS], Vec<f64>)> {
        if xs.len() != expected_len || xs.is_empty() {
            return Err(Error::SequenceLength { expected: expected_len, got: xs.len() });
        }
        let mut state = self.zero_state();
        let mut q = [0.0; ACTIONS];
        for x in xs {
            q = self.step(&mut state, x);
        }
        let context = state.h.last().unwrap().clone();
        Ok((q, context))
    }

    /// Back-propagates `dq[t]` (gradient of the loss w.r.t. the action values
    /// at step t) through the unroll, accumulating into `grad`.
    pub fn backward(&self, unroll: &Unroll, dq: &[[f64; ACTIONS]], grad: &mut QNetwork) {
        let steps = unroll.top.len();
        let hid = self.hidden_size();
        let mut dh_above: Vec<Vec<f64>> = vec![vec![0.0; hid]; steps];
        for t in 0..steps {
            let h = &unroll.top[t];
            for a in 0..ACTIONS {
                let g = dq[t][a];
                if g == 0.0 {
                    continue;
                }
                grad.head_b[a] += g;
                let gw = &mut grad.head_w[a * hid..(a + 1) * hid];
                let w = &self.head_w[a * hid..(a + 1) * hid];
                for k in 0..hid {
                    gw[k] += g * h[k];
                    dh_above[t][k] += g * w[k];
                }
            }
        }

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let cols = layer.cols();
            let glayer = &mut grad.layers[l];
            let mut dh_next = vec![0.0; hid];
            let mut dc_next = vec![0.0; hid];
            let mut dx_below = vec![vec![0.0; layer.input]; steps];
            let mut dz = vec![0.0; 4 * hid];
            for t in (0..steps).rev() {
                let cache = &unroll.caches[l][t];
                let g = &cache.gates;
                for k in 0..hid {
                    let dh = dh_above[t][k] + dh_next[k];
                    let (i, f, c_hat, o) = (g[k], g[hid + k], g[2 * hid + k], g[3 * hid + k]);
                    let tc = cache.tanh_c[k];
                    let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                    dz[k] = dc * c_hat * i * (1.0 - i);
                    dz[hid + k] = dc * cache.c_prev[k] * f * (1.0 - f);
                    dz[2 * hid + k] = dc * i * (1.0 - c_hat * c_hat);
                    dz[3 * hid + k] = dh * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
                let mut dxh = vec![0.0; cols];
                for (r, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    glayer.b[r] += d;
                    let row = &layer.w[r * cols..(r + 1) * cols];
                    let grow = &mut glayer.w[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        grow[j] += d * cache.xh[j];
                        dxh[j] += d * row[j];
                    }
                }
                dx_below[t].copy_from_slice(&dxh[..layer.input]);
                if unroll.resets[t] {
                    dh_next.fill(0.0);
                    dc_next.fill(0.0);
                } else {
                    dh_next.copy_from_slice(&dxh[layer.input..]);
                }
            }
            dh_above = dx_below;
        }
    }

    pub fn to_checkpoint(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            input: self.input_size(),
            hidden: self.hidden_size(),
            layers: self.layers.len(),
            actions: ACTIONS,
            network: self.clone(),
        })?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let net = ck.network;
        let shapes_ok = ck.actions == ACTIONS
            && net.layers.len() == ck.layers
            && net.head_w.len() == ACTIONS * ck.hidden
            && net.head_b.len() == ACTIONS
            && net.layers.iter().enumerate().all(|(l, layer)| {
                let inp = if l == 0 { ck.input } else { ck.hidden };
                layer.input == inp
                    && layer.hidden == ck.hidden
                    && layer.w.len() == 4 * ck.hidden * (inp + ck.hidden)
                    && layer.b.len() == 4 * ck.hidden
            });
        if !shapes_ok {
            return Err(Error::Checkpoint("tensor shapes do not match metadata".into()));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_head_bias() {
        let mut net = QNetwork::new(4, 6, 2, 1).zeros_like();
        net.head_b = vec![0.1, -0.2, 0.3];
        let xs = vec![vec![0.5; 4]; 5];
        let (q, ctx) = net.forward(&xs, 5).unwrap();
        assert_eq!(q, [0.1, -0.2, 0.3]);
        assert_eq!(ctx.len(), 6);
    }

    #[test]
    fn forward_is_pure() {
        let net = QNetwork::new(3, 5, 2, 7);
        let xs: Vec<Vec<f64>> = (0..8).map(|t| vec![t as f64 * 0.1, 0.2, -0.3]).collect();
        assert_eq!(net.forward(&xs, 8).unwrap(), net.forward(&xs, 8).unwrap());
        assert!(matches!(net.forward(&xs, 9), Err(Error::SequenceLength { .. })));
    }

    #[test]
    fn unroll_matches_streaming() {
        let net = QNetwork::new(3, 5, 2, 7);
        let xs: Vec<Vec<f64>> = (0..6).map(|t| vec![(t as f64).sin(), 0.2, -0.3]).collect();
        let u = net.unroll(&xs);
        let mut s = net.zero_state();
        for (t, x) in xs.iter().enumerate() {
            assert_eq!(net.step(&mut s, x), u.q[t]);
        }
    }

    #[test]
    fn reset_splits_the_unroll() {
        let net = QNetwork::new(3, 4, 2, 9);
        let xs: Vec<Vec<f64>> = (0..7).map(|t| vec![(t as f64).cos(), 0.1 * t as f64, 0.5]).collect();
        let mut resets = vec![false; 7];
        resets[4] = true;
        let joined = net.unroll_with_resets(&xs, &resets);
        assert_eq!(joined.q[..4], net.unroll(&xs[..4]).q[..]);
        assert_eq!(joined.q[4..], net.unroll(&xs[4..]).q[..]);

        let dq: Vec<[f64; ACTIONS]> = (0..7).map(|t| [0.1 * t as f64, -0.2, 0.05]).collect();
        let mut g_joined = net.zeros_like();
        net.backward(&joined, &dq, &mut g_joined);
        let mut g_split = net.zeros_like();
        net.backward(&net.unroll(&xs[..4]), &dq[..4], &mut g_split);
        net.backward(&net.unroll(&xs[4..]), &dq[4..], &mut g_split);
        for (a, b) in g_joined.tensors().iter().zip(g_split.tensors()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = QNetwork::new(7, 10, 2, 3);
        let text = net.to_checkpoint().unwrap();
        assert_eq!(QNetwork::from_checkpoint(&text).unwrap(), net);
        let broken = text.replace("\"hidden\":10", "\"hidden\":11");
        assert!(QNetwork::from_checkpoint(&broken).is_err());
    }

    #[test]
    fn table_iv_size() {
        let net = QNetwork::new(7, 50, 2, 0);
        let expected = 4 * 50 * (7 + 50) + 200 + 4 * 50 * 100 + 200 + 150 + 3;
        assert_eq!(net.parameter_count(), expected);
    }
}
