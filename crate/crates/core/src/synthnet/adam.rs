use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments over one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, 2);
        let mut theta = vec![1.0, -1.0];
        opt.step(&mut theta, &[3.0, -0.5]);
        // Bias-corrected first step is lr * g / (|g| + eps).
        assert!((theta[0] - 0.9).abs() < 1e-8);
        assert!((theta[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut opt = Adam::new(AdamConfig::default(), 3);
        let mut theta = vec![0.5, 0.25, -2.0];
        for _ in 0..10 {
            opt.step(&mut theta, &[0.0; 3]);
        }
        assert_eq!(theta, vec![0.5, 0.25, -2.0]);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, 1);
        let mut x = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0)];
            opt.step(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }
}
