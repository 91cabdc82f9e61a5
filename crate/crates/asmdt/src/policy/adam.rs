use serde::{Deserialize, Serialize};

use super::lstm::QNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: i32,
    m: QNetwork,
    v: QNetwork,
}

impl Adam {
    pub fn new(net: &QNetwork, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: net.zeros_like(),
            v: net.zeros_like(),
        }
    }

    pub fn apply(&mut self, net: &mut QNetwork, grad: &QNetwork) {
        self.t += 1;
        let AdamConfig { step, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let params = net.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grad.tensors()).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= step * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = QNetwork::new(3, 4, 2, 5);
        let before = net.clone();
        let zero = net.zeros_like();
        let mut opt = Adam::new(&net, AdamConfig::default());
        for _ in 0..5 {
            opt.apply(&mut net, &zero);
        }
        assert_eq!(net, before);
    }

    #[test]
    fn first_step_moves_by_step_size() {
        let mut net = QNetwork::new(2, 2, 1, 5);
        let before = net.clone();
        let mut grad = net.zeros_like();
        grad.head_b = vec![0.5, -2.0, 0.0];
        let mut opt = Adam::new(&net, AdamConfig::default());
        opt.apply(&mut net, &grad);
        assert!((before.head_b[0] - net.head_b[0] - 1e-3).abs() < 1e-9);
        assert!((net.head_b[1] - before.head_b[1] - 1e-3).abs() < 1e-9);
        assert_eq!(net.head_b[2], before.head_b[2]);
    }
}
