use serde::{Deserialize, Serialize};

use super::config::AdamConfig;
use crate::model::{Gaussian, PARAMS_PER_GAUSSIAN};

/// Bias-corrected first/second moment optimizer state for the Gaussian store and the
/// deformation field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub step: u64,
    m: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    v: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    field_m: Vec<f64>,
    field_v: Vec<f64>,
}

impl Adam {
    pub fn new(gaussians: usize, field_params: usize) -> Self {
        Adam {
            step: 0,
            m: vec![[0.0; PARAMS_PER_GAUSSIAN]; gaussians],
            v: vec![[0.0; PARAMS_PER_GAUSSIAN]; gaussians],
            field_m: vec![0.0; field_params],
            field_v: vec![0.0; field_params],
        }
    }

    /// Rebuild per-Gaussian moments after densification: `Some(i)` keeps the moments of old
    /// Gaussian `i`, `None` starts from zero.
    pub fn remap(&mut self, origin: &[Option<usize>]) {
        let zero = [0.0; PARAMS_PER_GAUSSIAN];
        self.m = origin.iter().map(|o| o.map_or(zero, |i| self.m[i])).collect();
        self.v = origin.iter().map(|o| o.map_or(zero, |i| self.v[i])).collect();
    }

    /// Advance the step counter; call once per iteration before the updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    fn corrections(&self, cfg: &AdamConfig) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
    }

    /// Update every Gaussian with per-slot learning rates `lr` (layout of `Gaussian::params`)
    /// and renormalize rotations.
    pub fn update_gaussians(
        &mut self,
        cfg: &AdamConfig,
        gaussians: &mut [Gaussian],
        grads: &[[f64; PARAMS_PER_GAUSSIAN]],
        lr: &[f64; PARAMS_PER_GAUSSIAN],
    ) {
        let (c1, c2) = self.corrections(cfg);
        for (i, g) in gaussians.iter_mut().enumerate() {
            let mut p = g.params();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..PARAMS_PER_GAUSSIAN {
                let d = grads[i][k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * d;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * d * d;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= lr[k] * mh / (vh.sqrt() + cfg.epsilon);
            }
            g.set_params(&p);
            g.normalize_rotation();
        }
    }

    pub fn update_field(&mut self, cfg: &AdamConfig, params: &mut [f64], grads: &[f64], lr: f64) {
        let (c1, c2) = self.corrections(cfg);
        for k in 0..params.len() {
            let d = grads[k];
            self.field_m[k] = cfg.beta1 * self.field_m[k] + (1.0 - cfg.beta1) * d;
            self.field_v[k] = cfg.beta2 * self.field_v[k] + (1.0 - cfg.beta2) * d * d;
            let mh = self.field_m[k] / c1;
            let vh = self.field_v[k] / c2;
            params[k] -= lr * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0, 2);
        let mut p = [1.0, -1.0];
        adam.begin_step();
        adam.update_field(&AdamConfig::default(), &mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(0, 1);
        let mut p = [5.0];
        for _ in 0..2000 {
            adam.begin_step();
            let g = [2.0 * (p[0] - 2.0)];
            adam.update_field(&AdamConfig::default(), &mut p, &g, 0.05);
        }
        assert!((p[0] - 2.0).abs() < 1e-3);
    }
}
