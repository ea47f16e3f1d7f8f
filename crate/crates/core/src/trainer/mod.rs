//! Fitting a Gaussian cloud to an event stream.
//!
//! Each iteration samples a window of events, accumulates it into a target
//! log-change image, renders the predicted change between the poses at the
//! window's first and last event, and takes one Adam step on the mixed
//! L1/SSIM loss. Density control and opacity resets run on a fixed schedule.

pub mod adam;
pub mod config;
pub mod densify;
pub mod loss;
pub mod ssim;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{Adam, LearningRates};
pub use config::{ThresholdConfig, TrainConfig};
pub use densify::{densify_and_prune, reset_opacity, DensifyConfig, DensifyReport, DensifyStats};
pub use loss::{compute_loss, LossConfig, LossOutput, MaskMode};
pub use ssim::{ssim, ssim_map, ssim_weighted};

use crate::error::{Error, Result};
use crate::event::{accumulate, sample_window, ContrastThresholds, EventStream, PixelRemap};
use crate::render::{accumulate_gradient, log_view_backward, render_log_diff, RenderOptions};
use crate::scene::{Camera, GaussianCloud};
use crate::trajectory::Trajectory;

pub const METRICS_HEADER: &str = "iter,loss,l1,ssim,num_gaussians,lr_pos";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    pub num_gaussians: usize,
    pub lr_pos: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.loss, self.l1, self.ssim, self.num_gaussians, self.lr_pos
        )
    }
}

pub fn write_metrics(rows: &[MetricsRow], out: &mut impl Write, header: bool) -> std::io::Result<()> {
    if header {
        writeln!(out, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub cloud: GaussianCloud,
    pub adam: Adam,
    pub thresholds: ContrastThresholds,
    /// Moments for `[positive, negative]`.
    pub threshold_adam: Adam,
    /// Completed iterations.
    pub iteration: usize,
    pub stats: DensifyStats,
    pub rng: ChaCha8Rng,
    /// Iterations whose loss mask was empty.
    pub mask_fallbacks: usize,
}

impl TrainState {
    pub fn new(cloud: GaussianCloud, cfg: &TrainConfig) -> Result<Self> {
        let mut cloud = cloud;
        if cloud.is_empty() {
            return Err(Error::EmptyCloud("initial cloud has no Gaussians".into()));
        }
        cloud.active_sh_degree = if cfg.sh_warmup_interval > 0 {
            0
        } else {
            cloud.sh_degree
        };
        Ok(Self {
            adam: Adam::new(cloud.to_params().len()),
            stats: DensifyStats::new(cloud.len()),
            cloud,
            thresholds: cfg.thresholds.initial()?,
            threshold_adam: Adam::new(2),
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            mask_fallbacks: 0,
        })
    }
}

/// Camera-center spread used to scale position rates and size thresholds.
pub fn scene_extent(trajectory: &Trajectory) -> f64 {
    let centers: Vec<_> = trajectory.spline().knots().iter().map(|k| k.translation).collect();
    let mean = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len() as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    let extent = 1.1 * radius;
    if extent > 1e-6 {
        extent
    } else {
        1.0
    }
}

pub struct Trainer<'a> {
    stream: &'a EventStream,
    trajectory: &'a Trajectory,
    camera: &'a Camera,
    cfg: TrainConfig,
    remap: Option<PixelRemap>,
    extent: f64,
    state: TrainState,
    metrics: Vec<MetricsRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        stream: &'a EventStream,
        trajectory: &'a Trajectory,
        camera: &'a Camera,
        cfg: TrainConfig,
        state: TrainState,
    ) -> Result<Self> {
        cfg.validate()?;
        camera.validate()?;
        if stream.is_empty() {
            return Err(Error::EmptyStream);
        }
        let (w, h) = stream.resolution();
        if w as usize != camera.width || h as usize != camera.height {
            return Err(Error::Shape(format!(
                "stream is {w}x{h} but camera is {}x{}",
                camera.width, camera.height
            )));
        }
        let expected_channels = if camera.bayer.is_mono() { 1 } else { 3 };
        if state.cloud.channels != expected_channels {
            return Err(Error::Shape(format!(
                "{:?} sensor needs a {expected_channels}-channel cloud, got {}",
                camera.bayer, state.cloud.channels
            )));
        }
        let remap = camera
            .distortion
            .iter()
            .any(|&k| k != 0.0)
            .then(|| camera.undistort_map());
        Ok(Self {
            stream,
            trajectory,
            camera,
            extent: scene_extent(trajectory),
            cfg,
            remap,
            state,
            metrics: Vec::new(),
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Rows produced by this trainer so far.
    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.cfg.iterations
    }

    /// Runs until `iterations` are complete or `stop_after` is reached.
    pub fn run(&mut self, stop_after: Option<usize>) -> Result<()> {
        let end = stop_after.map_or(self.cfg.iterations, |s| s.min(self.cfg.iterations));
        while self.state.iteration < end {
            self.step()?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<MetricsRow> {
        let cfg = &self.cfg;
        let st = &mut self.state;
        let iter = st.iteration + 1;
        let lr_pos = cfg.rates.position_at(st.iteration, cfg.position_steps(), self.extent);
        if cfg.sh_warmup_interval > 0 && iter.is_multiple_of(cfg.sh_warmup_interval) {
            st.cloud.active_sh_degree = (st.cloud.active_sh_degree + 1).min(st.cloud.sh_degree);
        }

        let window = sample_window(self.stream, &mut st.rng, cfg.window_min_frac, cfg.window_max_frac)?;
        let acc = accumulate(self.stream, window, &st.thresholds, self.remap.as_ref())?;
        let t0 = self.stream.at(window.start).expect("valid window").t;
        let t1 = self.stream.at(window.end).expect("valid window").t;
        let pose0 = self.trajectory.pose_at(t0)?;
        let pose1 = self.trajectory.pose_at(t1)?;
        let opts = RenderOptions { near: cfg.near };
        let diff = render_log_diff(&st.cloud, self.camera, &pose0, &pose1, &opts)?;
        let target = acc.to_image();
        let loss = compute_loss(&diff.prediction, &target, &acc.mask, &cfg.loss)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at iteration {iter}: window ({}, {}), t = [{t0}, {t1}] ns, {} Gaussians, l1 {}, ssim {}",
                window.start,
                window.end,
                st.cloud.len(),
                loss.l1,
                loss.ssim
            )));
        }
        if loss.mask_fallback {
            st.mask_fallbacks += 1;
            log::warn!("iteration {iter}: empty event mask, loss uses all pixels");
        }

        let mut grad = log_view_backward(&diff.end, self.camera, &loss.grad_pred)?;
        let from_start = log_view_backward(&diff.start, self.camera, &loss.grad_pred.map(|g| -g))?;
        if iter <= cfg.densify.stop_iteration {
            st.stats.record(&grad, self.camera.width, self.camera.height);
            st.stats.record(&from_start, self.camera.width, self.camera.height);
        }
        accumulate_gradient(&mut grad, &from_start);

        let layout = st.cloud.layout();
        let stride = layout.stride();
        let rates = adam::slot_rates(layout, &cfg.rates, lr_pos, st.cloud.channels);
        let mut params = st.cloud.to_params();
        st.adam.step_with(&mut params, &grad.params, |i| rates[i % stride]);
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite parameter after iteration {iter}: Gaussian {} slot {}",
                i / stride,
                i % stride
            )));
        }
        st.cloud.set_params(&params);
        for g in &mut st.cloud.gaussians {
            let norm = g.rotation.norm();
            if norm > 0.0 {
                g.rotation /= norm;
            }
        }

        if cfg.thresholds.learn {
            // D = Δ+ · positive_count − Δ− · negative_count
            let (mut dp, mut dn) = (0.0, 0.0);
            for (p, g) in loss.grad_target.data.iter().enumerate() {
                dp += g * acc.positive_counts[p] as f64;
                dn -= g * acc.negative_counts[p] as f64;
            }
            let mut th = [st.thresholds.positive, st.thresholds.negative];
            st.threshold_adam.step_uniform(&mut th, &[dp, dn], cfg.thresholds.learning_rate);
            st.thresholds = ContrastThresholds::new(
                th[0].max(cfg.thresholds.min),
                th[1].max(cfg.thresholds.min),
            )?;
        }

        if cfg.densify.is_refinement(iter) {
            let report = densify_and_prune(
                &mut st.cloud,
                &mut st.adam,
                &st.stats,
                &cfg.densify,
                self.extent,
                &mut st.rng,
            )?;
            log::debug!("iteration {iter}: {report:?}, {} Gaussians", st.cloud.len());
        }
        if cfg.densify.is_refinement(iter) || st.stats.len() != st.cloud.len() {
            st.stats = DensifyStats::new(st.cloud.len());
        }
        if cfg.densify.is_opacity_reset(iter) {
            reset_opacity(&mut st.cloud, &mut st.adam, cfg.densify.reset_opacity);
        }

        st.iteration = iter;
        let row = MetricsRow {
            iter,
            loss: loss.total,
            l1: loss.l1,
            ssim: loss.ssim,
            num_gaussians: st.cloud.len(),
            lr_pos,
        };
        self.metrics.push(row);
        Ok(row)
    }
}

/// Trains from `init` for `cfg.iterations` steps.
pub fn train(
    stream: &EventStream,
    trajectory: &Trajectory,
    camera: &Camera,
    init: GaussianCloud,
    cfg: &TrainConfig,
) -> Result<(TrainState, Vec<MetricsRow>)> {
    let state = TrainState::new(init, cfg)?;
    let mut trainer = Trainer::new(stream, trajectory, camera, cfg.clone(), state)?;
    trainer.run(None)?;
    let metrics = trainer.metrics().to_vec();
    Ok((trainer.into_state(), metrics))
}

pub fn write_metrics_file(rows: &[MetricsRow], path: impl AsRef<Path>, append: bool) -> Result<()> {
    let path = path.as_ref();
    let exists = path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    write_metrics(rows, &mut file, !(append && exists)).map_err(|e| Error::io(path, e))
}
