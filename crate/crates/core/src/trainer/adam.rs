//! Adam with bias correction and one learning rate per parameter family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ParamFamily, ParamLayout};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Initial position rate, multiplied by the scene extent.
    pub position_init: f64,
    pub position_final: f64,
    pub feature: f64,
    /// Rate for SH coefficients above degree 0, relative to `feature`.
    pub feature_rest_ratio: f64,
    pub opacity: f64,
    pub scaling: f64,
    pub rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            feature: 0.0025,
            feature_rest_ratio: 1.0 / 20.0,
            opacity: 0.01,
            scaling: 0.005,
            rotation: 0.001,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position_init,
            self.position_final,
            self.feature,
            self.feature_rest_ratio,
            self.opacity,
            self.scaling,
            self.rotation,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("learning rates must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    /// Log-linear decay from `position_init` to `position_final` over
    /// `max_steps`, scaled by `extent`.
    pub fn position_at(&self, step: usize, max_steps: usize, extent: f64) -> f64 {
        if max_steps == 0 || self.position_init == 0.0 || self.position_final == 0.0 {
            return self.position_init * extent;
        }
        let u = (step as f64 / max_steps as f64).clamp(0.0, 1.0);
        let log = self.position_init.ln() * (1.0 - u) + self.position_final.ln() * u;
        log.exp() * extent
    }
}

/// Moment buffers for a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update with a per-element learning rate.
    pub fn step_with(&mut self, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr(i) * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }

    pub fn step_uniform(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step_with(params, grads, |_| lr);
    }

    /// Keeps the moments of rows where `keep` is true; rows are `stride`
    /// wide.
    pub fn retain_rows(&mut self, stride: usize, keep: &[bool]) {
        let filter = |buf: &Vec<f64>| {
            buf.chunks_exact(stride)
                .zip(keep)
                .filter(|(_, &k)| k)
                .flat_map(|(row, _)| row.iter().copied())
                .collect::<Vec<_>>()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }

    /// Appends `rows` rows of zero moments.
    pub fn extend_rows(&mut self, stride: usize, rows: usize) {
        self.m.resize(self.m.len() + stride * rows, 0.0);
        self.v.resize(self.v.len() + stride * rows, 0.0);
    }

    /// Zeroes the moments of one column range in every row.
    pub fn reset_columns(&mut self, stride: usize, cols: std::ops::Range<usize>) {
        for row in self.m.chunks_exact_mut(stride) {
            row[cols.clone()].iter_mut().for_each(|v| *v = 0.0);
        }
        for row in self.v.chunks_exact_mut(stride) {
            row[cols.clone()].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Per-slot learning rate table for one Gaussian's parameter block.
pub fn slot_rates(layout: ParamLayout, rates: &LearningRates, position_lr: f64, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; layout.stride()];
    for fam in ParamFamily::ALL {
        let lr = match fam {
            ParamFamily::Position => position_lr,
            ParamFamily::Scaling => rates.scaling,
            ParamFamily::Rotation => rates.rotation,
            ParamFamily::Opacity => rates.opacity,
            ParamFamily::Features => rates.feature,
        };
        out[layout.range(fam)].iter_mut().for_each(|v| *v = lr);
    }
    // higher-order SH coefficients follow the DC block
    let rest = ParamLayout::SH + channels..layout.stride();
    out[rest].iter_mut().for_each(|v| *v = rates.feature * rates.feature_rest_ratio);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut adam = Adam::new(3);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step_uniform(&mut p, &[0.5, 0.5, 0.5], 0.1);
        let (m0, v0) = (adam.m.clone(), adam.v.clone());
        let before = p.clone();
        adam.step_uniform(&mut p, &[0.0; 3], 0.0);
        assert_eq!(p, before);
        for i in 0..3 {
            assert_eq!(adam.m[i], BETA1 * m0[i]);
            assert_eq!(adam.v[i], BETA2 * v0[i]);
        }
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut adam = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        let lr = 0.01;
        let mut last = p.clone();
        for _ in 0..5000 {
            last.copy_from_slice(&p);
            adam.step_uniform(&mut p, &[3.0, -0.2], lr);
        }
        assert!(((last[0] - p[0]) - lr).abs() < 1e-9);
        assert!(((p[1] - last[1]) - lr).abs() < 1e-9);
    }

    #[test]
    fn position_rate_decays_log_linearly() {
        let r = LearningRates::default();
        assert!((r.position_at(0, 100, 2.0) - 3.2e-4).abs() < 1e-15);
        assert!((r.position_at(100, 100, 2.0) - 3.2e-6).abs() < 1e-15);
        assert!((r.position_at(50, 100, 1.0) - 1.6e-5).abs() < 1e-15);
    }

    #[test]
    fn row_bookkeeping() {
        let mut adam = Adam::new(6);
        adam.m = vec![1., 2., 3., 4., 5., 6.];
        adam.v = adam.m.clone();
        adam.retain_rows(2, &[true, false, true]);
        assert_eq!(adam.m, vec![1., 2., 5., 6.]);
        adam.extend_rows(2, 1);
        assert_eq!(adam.v, vec![1., 2., 5., 6., 0., 0.]);
        adam.reset_columns(2, 1..2);
        assert_eq!(adam.m, vec![1., 0., 5., 0., 0., 0.]);
    }
}
