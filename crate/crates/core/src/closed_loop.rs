//! Simulated end-to-end scenario: a random ground-truth cloud, a circular
//! camera orbit, simulated events, and held-out views for scoring.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::evaluator::{evaluate, EvalReport};
use crate::event::{ContrastThresholds, EventStream};
use crate::render::{rasterize, RenderOptions};
use crate::scene::{init_from_points, init_random, Camera, ColoredPoint, GaussianCloud, InitOptions};
use crate::simulator::{wavy_orbit, render_gt_frames, simulate_events, RandomSceneSpec, SceneSpec};
use crate::trainer::{train, MetricsRow, TrainConfig, TrainState};
use crate::trajectory::{Interpolation, PoseSample, Trajectory};

/// Held-out PSNR a 3000-iteration run from 2000 random points must beat.
/// Training from the ground-truth cloud itself reaches about 29 dB.
pub const PSNR_BAR_DB: f64 = 22.0;
pub const SSIM_BAR: f64 = 0.80;

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopSetup {
    pub scene_seed: u64,
    pub gaussians: usize,
    pub scene_radius: f64,
    pub scale_range: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    pub knots: usize,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    /// Amplitude and periods per turn of a vertical oscillation.
    pub orbit_bob: f64,
    pub orbit_bob_cycles: u32,
    pub duration_ns: u64,
    pub threshold: f64,
    pub frame_rate: f64,
    pub held_out_views: usize,
    pub background: f64,
}

impl Default for ClosedLoopSetup {
    fn default() -> Self {
        Self {
            scene_seed: 7,
            gaussians: 50,
            scene_radius: 1.0,
            scale_range: [0.08, 0.3],
            width: 64,
            height: 64,
            fov_x: 0.9,
            knots: 60,
            orbit_radius: 3.0,
            orbit_height: 0.8,
            orbit_bob: 0.5,
            orbit_bob_cycles: 3,
            duration_ns: 6_000_000_000,
            threshold: 0.25,
            frame_rate: 1000.0,
            held_out_views: 8,
            background: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub setup: ClosedLoopSetup,
    pub gt: GaussianCloud,
    pub camera: Camera,
    pub knots: Vec<PoseSample>,
    pub trajectory: Trajectory,
    pub stream: EventStream,
    pub thresholds: ContrastThresholds,
    /// Held-out times, between knots.
    pub test_times: Vec<u64>,
    pub references: Vec<crate::image::Image>,
}

impl ClosedLoopSetup {
    pub fn scene(&self) -> SceneSpec {
        SceneSpec {
            sh_degree: 0,
            channels: 1,
            background: [self.background; 3],
            gaussians: Vec::new(),
            random: Some(RandomSceneSpec {
                count: self.gaussians,
                seed: self.scene_seed,
                radius: self.scene_radius,
                scale: self.scale_range,
                ..Default::default()
            }),
        }
    }

    pub fn build(&self) -> Result<ClosedLoop> {
        let gt = self.scene().build()?;
        let camera = Camera::with_fov(self.width, self.height, self.fov_x)?;
        let knots = wavy_orbit(
            self.knots,
            self.orbit_radius,
            self.orbit_height,
            self.orbit_bob,
            self.orbit_bob_cycles,
            0,
            self.duration_ns,
        )?;
        let trajectory = Trajectory::new(&knots, Interpolation::Cubic)?;
        let thresholds = ContrastThresholds::symmetric(self.threshold)?;
        let sim = simulate_events(&gt, &trajectory, &camera, &thresholds, self.frame_rate, (0, self.duration_ns))?;
        let n = self.held_out_views as u64;
        // offset by a third of a knot interval so no view sits on a knot
        let step = self.duration_ns / (self.knots as u64 - 1);
        let test_times: Vec<u64> = (0..n)
            .map(|k| (k * self.duration_ns / n + step / 3).min(self.duration_ns))
            .collect();
        let references = render_gt_frames(&gt, &trajectory, &camera, &test_times)?;
        Ok(ClosedLoop {
            setup: self.clone(),
            gt,
            camera,
            knots,
            trajectory,
            stream: sim.stream,
            thresholds,
            test_times,
            references,
        })
    }
}

impl ClosedLoop {
    pub fn init_options(&self, sh_degree: usize) -> InitOptions {
        InitOptions {
            sh_degree,
            channels: 1,
            background: self.gt.background,
        }
    }

    /// Uniform random points in the box bounding the ground-truth region.
    pub fn random_init(&self, count: usize, seed: u64, sh_degree: usize) -> Result<GaussianCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_random(
            count,
            Vector3::repeat(-1.0),
            Vector3::repeat(1.0),
            &mut rng,
            self.init_options(sh_degree),
        )
    }

    /// `count` points drawn from the ground-truth Gaussians, cycling through
    /// them, without color.
    pub fn guided_init(&self, count: usize, seed: u64, sh_degree: usize) -> Result<GaussianCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gts = &self.gt.gaussians;
        let points: Vec<ColoredPoint> = (0..count)
            .map(|i| {
                let g = &gts[i % gts.len()];
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                ColoredPoint {
                    position: g.mean + g.rotation_matrix() * g.scales().component_mul(&z),
                    color: None,
                }
            })
            .collect();
        init_from_points(&points, self.init_options(sh_degree))
    }

    /// Knots keeping every `every`-th pose plus the last.
    pub fn sparse_knots(&self, every: usize) -> Vec<PoseSample> {
        let mut out: Vec<PoseSample> = self.knots.iter().step_by(every.max(1)).cloned().collect();
        let last = self.knots.last().expect("orbit has knots");
        if out.last().map(|k| k.t) != Some(last.t) {
            out.push(last.clone());
        }
        out
    }

    pub fn train(
        &self,
        init: GaussianCloud,
        trajectory: &Trajectory,
        cfg: &TrainConfig,
    ) -> Result<(TrainState, Vec<MetricsRow>)> {
        train(&self.stream, trajectory, &self.camera, init, cfg)
    }

    /// Calibrated scores of `cloud` on the held-out views, rendered along
    /// the true trajectory.
    pub fn evaluate(&self, cloud: &GaussianCloud) -> Result<EvalReport> {
        let opts = RenderOptions::default();
        let pairs = self
            .test_times
            .iter()
            .zip(&self.references)
            .map(|(&t, reference)| {
                let pose = self.trajectory.pose_at(t)?;
                let (pred, _) = rasterize(cloud, &self.camera, &pose, &opts);
                Ok((format!("t{t}"), pred.image, reference.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        evaluate(&pairs)
    }

    /// Held-out PSNR of guided and random initialization with the same point
    /// budget, config, and seed. Returns `(guided, random)`.
    pub fn compare_init(&self, points: usize, seed: u64, cfg: &TrainConfig) -> Result<(f64, f64)> {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let guided = self.train(self.guided_init(points, seed, 0)?, &self.trajectory, &cfg)?.0;
        let random = self.train(self.random_init(points, seed, 0)?, &self.trajectory, &cfg)?.0;
        Ok((
            self.evaluate(&guided.cloud)?.mean_psnr_db,
            self.evaluate(&random.cloud)?.mean_psnr_db,
        ))
    }

    /// Held-out PSNR when training on every `every`-th knot with cubic and
    /// with linear interpolation. Returns `(cubic, linear)`.
    pub fn compare_interpolation(
        &self,
        every: usize,
        points: usize,
        seed: u64,
        cfg: &TrainConfig,
    ) -> Result<(f64, f64)> {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let knots = self.sparse_knots(every);
        let mut psnr = [0.0; 2];
        for (out, mode) in psnr.iter_mut().zip([Interpolation::Cubic, Interpolation::Linear]) {
            let trajectory = Trajectory::new(&knots, mode)?;
            let state = self.train(self.guided_init(points, seed, 0)?, &trajectory, &cfg)?.0;
            *out = self.evaluate(&state.cloud)?.mean_psnr_db;
        }
        Ok((psnr[0], psnr[1]))
    }
}
