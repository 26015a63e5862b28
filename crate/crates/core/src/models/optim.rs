use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::layers::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: i32,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    /// Applies one update to `params` from their accumulated gradients.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.moments.is_empty() {
            self.moments = params.iter().map(|p| (Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim()))).collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Multiplies the learning rate by `gamma` every `step_size` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub lr0: f64,
    pub gamma: f64,
    pub step_size: usize,
}

impl StepLr {
    /// Learning rate used during zero-based `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.gamma.powi((epoch / self.step_size.max(1)) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_lr_schedule() {
        let s = StepLr { lr0: 0.01, gamma: 0.5, step_size: 20 };
        assert_eq!(s.lr(0), 0.01);
        assert_eq!(s.lr(19), 0.01);
        assert_eq!(s.lr(20), 0.01 * 0.5);
        assert_eq!(s.lr(45), 0.01 * 0.25);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // With bias correction the first step is lr * sign(g) up to eps.
        let mut p = Param::new(Array2::from_elem((1, 2), 1.0));
        p.grad = Array2::from_shape_vec((1, 2), vec![3.0, -0.2]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p], 0.1);
        assert!((p.value[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p.value[[0, 1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Param::new(Array2::from_elem((1, 1), 5.0));
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            p.grad = p.value.mapv(|w| 2.0 * (w - 1.5));
            adam.step(&mut [&mut p], 0.05);
        }
        assert!((p.value[[0, 0]] - 1.5).abs() < 1e-3);
    }
}
