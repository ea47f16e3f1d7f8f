//! Tile-based forward rasterization and its reverse-mode counterpart.
//!
//! Splats are binned into 16x16 pixel tiles by their 3σ footprint and sorted
//! per tile by view-space depth (ties broken by Gaussian index). Each pixel
//! composites front to back:
//!
//! ```text
//! α'_i = min(0.99, α_i · exp(-½ dᵀ Σ'⁻¹ d)),   d = pixel − mean2d
//! C    = Σ_i c_i α'_i T_i + T_final · background,   T_{i+1} = T_i (1 − α'_i)
//! ```
//!
//! skipping contributions with `α' < 1/255` and stopping before a splat
//! would push `T` below 1e-4. Tiles are independent
//! in both passes and gradient partials are reduced in tile order, so results
//! do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::project::{
    project_backward, project_with_cache, ProjectedSplat, Shading, SplatCache, SplatGrad2d,
    ViewTransform,
};
use crate::scene::{Camera, Gaussian3D, GaussianCloud, ParamLayout};
use crate::trajectory::Pose;

pub const TILE_SIZE: usize = 16;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions below this opacity are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub near: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            near: crate::scene::project::DEFAULT_NEAR,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    /// Linear intensity, `cloud.channels` channels.
    pub image: Image,
    /// Per-pixel transmittance left for the background.
    pub transmittance: Vec<f64>,
}

/// Everything the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct RenderGraphState {
    camera: Camera,
    view: ViewTransform,
    shading: Shading,
    background: [f64; 3],
    num_gaussians: usize,
    sh_len: usize,
    tiles_x: usize,
    tiles_y: usize,
    /// Gaussian index of each visible splat.
    ids: Vec<u32>,
    splats: Vec<ProjectedSplat>,
    caches: Vec<SplatCache>,
    /// Parameters of each visible Gaussian.
    sources: Vec<Gaussian3D>,
    /// Per-tile splat indices, front to back.
    tile_lists: Vec<Vec<u32>>,
    /// Per-pixel number of composited splats.
    n_contrib: Vec<u32>,
    final_t: Vec<f64>,
}

/// Parameter gradients for a whole cloud, flattened per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudGradient {
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    /// Screen-space gradient of each projected mean, in pixels.
    pub mean2d: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl CloudGradient {
    pub fn zeros(layout: ParamLayout, n: usize) -> Self {
        Self {
            layout,
            params: vec![0.0; layout.stride() * n],
            mean2d: vec![[0.0; 2]; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean2d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean2d.is_empty()
    }

    pub fn gaussian(&self, i: usize) -> &[f64] {
        let s = self.layout.stride();
        &self.params[i * s..(i + 1) * s]
    }

    pub fn scale(&mut self, k: f64) {
        self.params.iter_mut().for_each(|v| *v *= k);
    }
}

impl RenderGraphState {
    pub fn num_visible(&self) -> usize {
        self.splats.len()
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn tile_lists(&self) -> &[Vec<u32>] {
        &self.tile_lists
    }

    pub fn contributions(&self) -> &[u32] {
        &self.n_contrib
    }

    /// Re-composites the image from the retained splat lists.
    pub fn replay(&self) -> RenderedImage {
        composite(self)
    }
}

/// Renders `cloud` from the world-from-camera `pose`.
pub fn rasterize(
    cloud: &GaussianCloud,
    cam: &Camera,
    pose: &Pose,
    opts: &RenderOptions,
) -> (RenderedImage, RenderGraphState) {
    let view = ViewTransform::from_pose(pose);
    let shading = Shading {
        channels: cloud.channels,
        degree: cloud.active_sh_degree.min(cloud.sh_degree),
    };
    let projected: Vec<Option<(ProjectedSplat, SplatCache)>> = cloud
        .gaussians
        .par_iter()
        .map(|g| project_with_cache(g, shading, &view, cam, opts.near))
        .collect();

    let mut ids = Vec::new();
    let mut splats = Vec::new();
    let mut caches = Vec::new();
    let mut sources = Vec::new();
    for (i, p) in projected.into_iter().enumerate() {
        if let Some((s, c)) = p {
            ids.push(i as u32);
            splats.push(s);
            caches.push(c);
            sources.push(cloud.gaussians[i].clone());
        }
    }

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let clamp_x = |v: f64| (v / TILE_SIZE as f64).floor().clamp(0.0, (tiles_x - 1) as f64) as usize;
        let clamp_y = |v: f64| (v / TILE_SIZE as f64).floor().clamp(0.0, (tiles_y - 1) as f64) as usize;
        let (x0, x1) = (clamp_x(s.mean2d.x - s.radius), clamp_x(s.mean2d.x + s.radius));
        let (y0, y1) = (clamp_y(s.mean2d.y - s.radius), clamp_y(s.mean2d.y + s.radius));
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tile_lists[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    tile_lists.par_iter_mut().for_each(|list| {
        list.sort_by(|&a, &b| {
            splats[a as usize]
                .depth
                .total_cmp(&splats[b as usize].depth)
                .then(ids[a as usize].cmp(&ids[b as usize]))
        })
    });

    let mut state = RenderGraphState {
        camera: cam.clone(),
        view,
        shading,
        background: cloud.background,
        num_gaussians: cloud.len(),
        sh_len: cloud.sh_len(),
        tiles_x,
        tiles_y,
        ids,
        splats,
        caches,
        sources,
        tile_lists,
        n_contrib: Vec::new(),
        final_t: Vec::new(),
    };
    let (rendered, n_contrib) = composite_with_counts(&state);
    state.n_contrib = n_contrib;
    state.final_t = rendered.transmittance.clone();
    (rendered, state)
}

/// Compact per-tile splat record.
#[derive(Clone, Copy)]
struct TileSplat {
    mx: f64,
    my: f64,
    a: f64,
    b: f64,
    c: f64,
    alpha: f64,
    /// Falloff exponent below which `α'` drops under [`ALPHA_MIN`].
    min_power: f64,
    color: [f64; 3],
}

impl TileSplat {
    fn from(s: &ProjectedSplat) -> Self {
        Self {
            mx: s.mean2d.x,
            my: s.mean2d.y,
            a: s.conic[0],
            b: s.conic[1],
            c: s.conic[2],
            alpha: s.alpha,
            min_power: (ALPHA_MIN / s.alpha).ln(),
            color: s.color,
        }
    }

    /// Returns `(α', gaussian falloff, dx, dy, clamped)`, or `None` when
    /// the contribution is skipped.
    #[inline(always)]
    fn eval(&self, px: f64, py: f64) -> Option<(f64, f64, f64, f64, bool)> {
        let dx = px - self.mx;
        let dy = py - self.my;
        let power = -0.5 * (self.a * dx * dx + self.c * dy * dy) - self.b * dx * dy;
        if !(power >= self.min_power) {
            return None;
        }
        let falloff = power.exp();
        let raw = self.alpha * falloff;
        if raw < ALPHA_MIN {
            None
        } else if raw > ALPHA_MAX {
            Some((ALPHA_MAX, falloff, dx, dy, true))
        } else {
            Some((raw, falloff, dx, dy, false))
        }
    }
}

fn tile_bounds(state: &RenderGraphState, tile: usize) -> (usize, usize, usize, usize) {
    let (tx, ty) = (tile % state.tiles_x, tile / state.tiles_x);
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (
        x0,
        y0,
        (x0 + TILE_SIZE).min(state.camera.width),
        (y0 + TILE_SIZE).min(state.camera.height),
    )
}

fn composite(state: &RenderGraphState) -> RenderedImage {
    composite_with_counts(state).0
}

fn composite_with_counts(state: &RenderGraphState) -> (RenderedImage, Vec<u32>) {
    let (w, h) = (state.camera.width, state.camera.height);
    let ch = state.shading.channels;
    let bg = state.background;
    let tiles: Vec<(Vec<f64>, Vec<f64>, Vec<u32>)> = (0..state.tiles_x * state.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = tile_bounds(state, tile);
            let list: Vec<TileSplat> = state.tile_lists[tile]
                .iter()
                .map(|&k| TileSplat::from(&state.splats[k as usize]))
                .collect();
            let n = (x1 - x0) * (y1 - y0);
            let mut color = vec![0.0; n * ch];
            let mut trans = vec![0.0; n];
            let mut counts = vec![0u32; n];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = (y - y0) * (x1 - x0) + (x - x0);
                    let (px, py) = (x as f64, y as f64);
                    let mut t = 1.0;
                    let mut acc = [0.0; 3];
                    let mut used = 0u32;
                    for (i, s) in list.iter().enumerate() {
                        let Some((a, ..)) = s.eval(px, py) else {
                            continue;
                        };
                        let next = t * (1.0 - a);
                        if next < TRANSMITTANCE_MIN {
                            break;
                        }
                        let wgt = a * t;
                        for c in 0..ch {
                            acc[c] += s.color[c] * wgt;
                        }
                        t = next;
                        used = i as u32 + 1;
                    }
                    for c in 0..ch {
                        color[p * ch + c] = acc[c] + t * bg[c];
                    }
                    trans[p] = t;
                    counts[p] = used;
                }
            }
            (color, trans, counts)
        })
        .collect();

    let mut image = Image::new(w, h, ch);
    let mut transmittance = vec![0.0; w * h];
    let mut n_contrib = vec![0u32; w * h];
    for (tile, (color, trans, counts)) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = tile_bounds(state, tile);
        for y in y0..y1 {
            for x in x0..x1 {
                let p = (y - y0) * (x1 - x0) + (x - x0);
                let q = y * w + x;
                image.data[q * ch..(q + 1) * ch].copy_from_slice(&color[p * ch..(p + 1) * ch]);
                transmittance[q] = trans[p];
                n_contrib[q] = counts[p];
            }
        }
    }
    (
        RenderedImage {
            image,
            transmittance,
        },
        n_contrib,
    )
}

/// Reverse-mode pass: gradients of `Σ grad_pixels · image` with respect to
/// every Gaussian parameter of the rendered cloud.
pub fn rasterize_backward(state: &RenderGraphState, grad_pixels: &Image) -> Result<CloudGradient> {
    let (w, h, ch) = (state.camera.width, state.camera.height, state.shading.channels);
    if grad_pixels.width != w || grad_pixels.height != h || grad_pixels.channels != ch {
        return Err(Error::Shape(format!(
            "upstream gradient is {}x{}x{}, render is {w}x{h}x{ch}",
            grad_pixels.width, grad_pixels.height, grad_pixels.channels
        )));
    }
    let bg = state.background;

    let partials: Vec<Vec<SplatGrad2d>> = (0..state.tiles_x * state.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = tile_bounds(state, tile);
            let ids = &state.tile_lists[tile];
            let list: Vec<TileSplat> = ids
                .iter()
                .map(|&k| TileSplat::from(&state.splats[k as usize]))
                .collect();
            let mut grads = vec![SplatGrad2d::default(); list.len()];
            for y in y0..y1 {
                for x in x0..x1 {
                    let q = y * w + x;
                    let n = state.n_contrib[q] as usize;
                    let gpix = &grad_pixels.data[q * ch..(q + 1) * ch];
                    if n == 0 || gpix.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    let (px, py) = (x as f64, y as f64);
                    let mut t = state.final_t[q];
                    let mut behind = bg;
                    for i in (0..n).rev() {
                        let s = &list[i];
                        let Some((a, falloff, dx, dy, clamped)) = s.eval(px, py) else {
                            continue;
                        };
                        let t_before = t / (1.0 - a);
                        let g = &mut grads[i];
                        let mut d_a = 0.0;
                        for c in 0..ch {
                            g.color[c] += a * t_before * gpix[c];
                            d_a += (s.color[c] - behind[c]) * gpix[c];
                            behind[c] = a * s.color[c] + (1.0 - a) * behind[c];
                        }
                        d_a *= t_before;
                        t = t_before;
                        if clamped {
                            continue;
                        }
                        g.alpha += d_a * falloff;
                        let d_power = d_a * a;
                        g.conic[0] += -0.5 * dx * dx * d_power;
                        g.conic[1] += -dx * dy * d_power;
                        g.conic[2] += -0.5 * dy * dy * d_power;
                        g.mean2d[0] += d_power * (s.a * dx + s.b * dy);
                        g.mean2d[1] += d_power * (s.b * dx + s.c * dy);
                    }
                }
            }
            grads
        })
        .collect();

    // fixed tile order keeps the reduction deterministic
    let mut splat_grads = vec![SplatGrad2d::default(); state.splats.len()];
    for (tile, grads) in partials.iter().enumerate() {
        for (k, g) in state.tile_lists[tile].iter().zip(grads) {
            splat_grads[*k as usize].add(g);
        }
    }

    let layout = ParamLayout {
        sh_len: state.sh_len,
    };
    let stride = layout.stride();
    let per_splat: Vec<Vec<f64>> = (0..state.splats.len())
        .into_par_iter()
        .map(|k| {
            let mut out = vec![0.0; stride];
            project_backward(
                &state.sources[k],
                &state.splats[k],
                &state.caches[k],
                state.shading,
                &state.view,
                &state.camera,
                &splat_grads[k],
                &mut out,
            );
            out
        })
        .collect();

    let mut grad = CloudGradient::zeros(layout, state.num_gaussians);
    for (k, g) in per_splat.into_iter().enumerate() {
        let i = state.ids[k] as usize;
        grad.params[i * stride..(i + 1) * stride].copy_from_slice(&g);
        grad.mean2d[i] = splat_grads[k].mean2d;
        grad.visible[i] = true;
    }
    Ok(grad)
}

/// Adds `other` into `acc`; both must cover the same cloud.
pub fn accumulate_gradient(acc: &mut CloudGradient, other: &CloudGradient) {
    debug_assert_eq!(acc.params.len(), other.params.len());
    for (a, b) in acc.params.iter_mut().zip(&other.params) {
        *a += b;
    }
    for i in 0..acc.mean2d.len() {
        acc.mean2d[i][0] += other.mean2d[i][0];
        acc.mean2d[i][1] += other.mean2d[i][1];
        acc.visible[i] |= other.visible[i];
    }
}
