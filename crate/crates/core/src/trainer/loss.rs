//! Training loss between predicted and accumulated log-change images:
//! `(1 − λ) L1 + λ (1 − SSIM)`, with optional event-coverage masking.

use serde::{Deserialize, Serialize};

use super::ssim::{ssim_weighted, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Every pixel contributes to both terms.
    None,
    /// L1 over covered pixels, SSIM over the full image.
    #[default]
    L1Only,
    /// Both terms averaged over covered pixels.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub ssim_window: usize,
    pub mask_mode: MaskMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            ssim_window: DEFAULT_WINDOW,
            mask_mode: MaskMode::L1Only,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.ssim_window == 0 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "ssim_window must be odd, got {}",
                self.ssim_window
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: f64,
    pub l1: f64,
    pub ssim: f64,
    /// `dL/dpred`.
    pub grad_pred: Image,
    /// `dL/dtarget`, with the SSIM constants held fixed.
    pub grad_target: Image,
    /// Set when masking was requested but no pixel was covered.
    pub mask_fallback: bool,
}

/// Mixes the two terms.
pub fn combine(lambda: f64, l1: f64, ssim_loss: f64) -> f64 {
    (1.0 - lambda) * l1 + lambda * ssim_loss
}

/// SSIM constants derive from `max |target|`.
pub fn compute_loss(pred: &Image, target: &Image, mask: &[bool], cfg: &LossConfig) -> Result<LossOutput> {
    pred.check_shape(target, "loss input")?;
    let n = pred.num_pixels();
    if mask.len() != n {
        return Err(Error::Shape(format!("mask has {} entries for {n} pixels", mask.len())));
    }
    let ch = pred.channels;
    let covered = mask.iter().filter(|&&m| m).count();
    let mask_fallback = cfg.mask_mode != MaskMode::None && covered == 0;
    let masked = cfg.mask_mode != MaskMode::None && !mask_fallback;
    let l1_weights: Vec<f64> = if masked {
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    } else {
        vec![1.0; n]
    };
    let l1_count = l1_weights.iter().sum::<f64>() * ch as f64;

    let mut l1 = 0.0;
    let mut grad_pred = Image::new(pred.width, pred.height, ch);
    for p in 0..n {
        if l1_weights[p] == 0.0 {
            continue;
        }
        for c in 0..ch {
            let i = p * ch + c;
            let d = pred.data[i] - target.data[i];
            l1 += d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad_pred.data[i] = (1.0 - cfg.lambda) * sign / l1_count;
        }
    }
    l1 /= l1_count;
    let mut grad_target = grad_pred.map(|g| -g);

    let ssim_weights = (masked && cfg.mask_mode == MaskMode::Both).then_some(&l1_weights[..]);
    let s = ssim_weighted(pred, target, cfg.ssim_window, target.max_abs(), ssim_weights)?;
    for (g, d) in grad_pred.data.iter_mut().zip(&s.grad_a.data) {
        *g -= cfg.lambda * d;
    }
    for (g, d) in grad_target.data.iter_mut().zip(&s.grad_b.data) {
        *g -= cfg.lambda * d;
    }
    Ok(LossOutput {
        total: combine(cfg.lambda, l1, 1.0 - s.value),
        l1,
        ssim: s.value,
        grad_pred,
        grad_target,
        mask_fallback,
    })
}
