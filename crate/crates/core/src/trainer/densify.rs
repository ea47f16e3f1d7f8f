//! Adaptive density control: clone small Gaussians and split large ones
//! where the screen-space positional gradient is high, then prune
//! transparent or oversized ones.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use crate::error::{Error, Result};
use crate::render::CloudGradient;
use crate::scene::{logit, GaussianCloud, ParamLayout};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    /// Threshold on the mean NDC-space positional gradient norm.
    pub grad_threshold: f64,
    /// Largest scale, world units, below which a Gaussian is cloned rather
    /// than split. Defaults to 1% of the scene extent.
    pub scale_threshold: Option<f64>,
    /// Largest allowed scale, world units. Defaults to 10% of the extent.
    pub max_scale: Option<f64>,
    pub opacity_floor: f64,
    pub interval: usize,
    pub start_iteration: usize,
    pub stop_iteration: usize,
    pub split_factor: f64,
    pub split_children: usize,
    /// Opacity reset period; 0 disables resets.
    pub opacity_reset_interval: usize,
    pub reset_opacity: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 0.0002,
            scale_threshold: None,
            max_scale: None,
            opacity_floor: 0.005,
            interval: 100,
            start_iteration: 500,
            stop_iteration: 15_000,
            split_factor: 1.6,
            split_children: 2,
            opacity_reset_interval: 3000,
            reset_opacity: 0.01,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grad_threshold, self.opacity_floor, self.split_factor, self.reset_opacity]
            .iter()
            .chain(self.scale_threshold.iter())
            .chain(self.max_scale.iter())
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.interval == 0 || self.split_children == 0 || self.reset_opacity >= 1.0 {
            return Err(Error::Config(format!("invalid densification settings: {self:?}")));
        }
        Ok(())
    }

    pub fn scale_threshold_for(&self, extent: f64) -> f64 {
        self.scale_threshold.unwrap_or(0.01 * extent)
    }

    pub fn max_scale_for(&self, extent: f64) -> f64 {
        self.max_scale.unwrap_or(0.1 * extent)
    }

    /// Whether densification runs after iteration `iter` (1-based).
    pub fn is_refinement(&self, iter: usize) -> bool {
        iter >= self.start_iteration && iter <= self.stop_iteration && iter.is_multiple_of(self.interval)
    }

    pub fn is_opacity_reset(&self, iter: usize) -> bool {
        self.opacity_reset_interval > 0
            && iter <= self.stop_iteration
            && iter.is_multiple_of(self.opacity_reset_interval)
    }
}

/// Gradient statistics gathered between refinement steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    /// Sum of per-view NDC positional gradient norms.
    pub grad_norm_sum: Vec<f64>,
    /// Views in which each Gaussian was visible.
    pub views: Vec<u32>,
    /// Sum of world-space mean gradients.
    pub mean_grad_sum: Vec<Vector3<f64>>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_norm_sum: vec![0.0; n],
            views: vec![0; n],
            mean_grad_sum: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Adds one rendered view. Pixel gradients are converted to NDC by the
    /// half-extent of the image.
    pub fn record(&mut self, grad: &CloudGradient, width: usize, height: usize) {
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for i in 0..grad.len() {
            if !grad.visible[i] {
                continue;
            }
            let [gx, gy] = grad.mean2d[i];
            self.grad_norm_sum[i] += (gx * sx).hypot(gy * sy);
            self.views[i] += 1;
            let g = grad.gaussian(i);
            self.mean_grad_sum[i] += Vector3::new(g[0], g[1], g[2]);
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.views[i] == 0 {
            0.0
        } else {
            self.grad_norm_sum[i] / self.views[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones, splits, and prunes in place, keeping `adam` row-aligned with the
/// cloud. New Gaussians start with zero moments.
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    adam: &mut Adam,
    stats: &DensifyStats,
    cfg: &DensifyConfig,
    extent: f64,
    rng: &mut R,
) -> Result<DensifyReport> {
    let n = cloud.len();
    let stride = cloud.layout().stride();
    debug_assert_eq!(stats.len(), n);
    let tau_s = cfg.scale_threshold_for(extent);
    let mut report = DensifyReport::default();

    let hot: Vec<bool> = (0..n).map(|i| stats.mean_grad(i) >= cfg.grad_threshold).collect();
    let max_scale = |i: usize, c: &GaussianCloud| c.gaussians[i].scales().max();

    // clone small hot Gaussians, nudged along the descent direction
    let mut clones = Vec::new();
    for i in 0..n {
        if hot[i] && max_scale(i, cloud) <= tau_s {
            let mut g = cloud.gaussians[i].clone();
            let dir = -stats.mean_grad_sum[i];
            if let Some(d) = dir.try_normalize(1e-300) {
                g.mean += d * (0.5 * max_scale(i, cloud));
            }
            clones.push(g);
        }
    }
    report.cloned = clones.len();

    // split large hot Gaussians into children drawn from the parent density
    let mut children = Vec::new();
    let mut keep = vec![true; n];
    let shrink = cfg.split_factor.ln();
    for i in 0..n {
        if !(hot[i] && max_scale(i, cloud) > tau_s) {
            continue;
        }
        let parent = &cloud.gaussians[i];
        let rot = parent.rotation_matrix();
        let scales = parent.scales();
        for _ in 0..cfg.split_children {
            let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let mut g = parent.clone();
            g.mean = parent.mean + rot * scales.component_mul(&z);
            g.log_scales = parent.log_scales.map(|s| s - shrink);
            children.push(g);
        }
        keep[i] = false;
        report.split += 1;
    }

    cloud.gaussians.extend(clones);
    cloud.gaussians.extend(children);
    adam.extend_rows(stride, cloud.len() - n);
    keep.resize(cloud.len(), true);

    let too_large = cfg.max_scale_for(extent);
    for (i, g) in cloud.gaussians.iter().enumerate() {
        if g.opacity() < cfg.opacity_floor || g.scales().max() > too_large {
            keep[i] = false;
        }
    }
    let survivors = keep.iter().filter(|&&k| k).count();
    if survivors == 0 {
        return Err(Error::EmptyCloud(format!(
            "all {} Gaussians fell below opacity {} or exceeded scale {too_large}",
            cloud.len(),
            cfg.opacity_floor
        )));
    }
    report.pruned = keep.iter().filter(|&&k| !k).count() - report.split;
    let mut it = keep.iter();
    cloud.gaussians.retain(|_| *it.next().unwrap());
    adam.retain_rows(stride, &keep);
    Ok(report)
}

/// Caps every opacity at `value` and clears the opacity moments.
pub fn reset_opacity(cloud: &mut GaussianCloud, adam: &mut Adam, value: f64) {
    let cap = logit(value);
    for g in &mut cloud.gaussians {
        g.opacity_logit = g.opacity_logit.min(cap);
    }
    let stride = cloud.layout().stride();
    adam.reset_columns(stride, ParamLayout::OPACITY..ParamLayout::SH);
}
