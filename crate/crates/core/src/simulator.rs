//! Frame-differencing event simulator.
//!
//! Frames are rendered at a fixed rate along a trajectory, remosaiced and
//! converted to log intensity exactly as the trainer does. Each pixel keeps
//! a reference level; whenever a frame moves the log intensity at least one
//! threshold away from it, the pixel emits one event per whole threshold
//! crossed, timestamped by linear interpolation between the two frames.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{ContrastThresholds, Event, EventStream, Polarity};
use crate::image::Image;
use crate::render::{log_image, rasterize, remosaic, RenderOptions, LOG_EPS};
use crate::scene::{Camera, GaussianCloud};
use crate::trajectory::{Pose, PoseSample, Trajectory};

/// Per-frame log change, in thresholds, above which a pixel is counted as
/// undersampled.
pub const UNDERSAMPLING_STEPS: f64 = 4.0;

#[derive(Clone, Debug)]
pub struct Simulation {
    pub stream: EventStream,
    pub frame_times: Vec<u64>,
    /// Pixel-frame pairs whose log change exceeded four thresholds.
    pub undersampled: usize,
}

/// Frame times from `start` to `end` inclusive at `frame_rate` Hz.
pub fn frame_times(start: u64, end: u64, frame_rate: f64) -> Result<Vec<u64>> {
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(Error::Invalid(format!("frame rate must be positive, got {frame_rate}")));
    }
    if end < start {
        return Err(Error::Invalid(format!("interval end {end} precedes start {start}")));
    }
    let period = 1e9 / frame_rate;
    let count = ((end - start) as f64 / period).ceil() as u64;
    let mut times: Vec<u64> = (0..=count)
        .map(|k| (start + (k as f64 * period).round() as u64).min(end))
        .collect();
    times.dedup();
    Ok(times)
}

fn log_frame(cloud: &GaussianCloud, cam: &Camera, pose: &Pose, opts: &RenderOptions) -> Result<Vec<f64>> {
    let (rendered, _) = rasterize(cloud, cam, pose, opts);
    Ok(log_image(&remosaic(&rendered.image, cam.bayer)?, LOG_EPS).data)
}

/// Simulates events over `[start, end]` ns, which must lie inside the
/// trajectory.
pub fn simulate_events(
    gt: &GaussianCloud,
    trajectory: &Trajectory,
    cam: &Camera,
    thresholds: &ContrastThresholds,
    frame_rate: f64,
    interval: (u64, u64),
) -> Result<Simulation> {
    cam.validate()?;
    let spline = trajectory.spline();
    let (start, end) = interval;
    for t in [start, end] {
        if !spline.contains(t) {
            return Err(Error::OutOfRange {
                t_ns: t,
                first: spline.start(),
                last: spline.end(),
            });
        }
    }
    if cam.width > u16::MAX as usize + 1 || cam.height > u16::MAX as usize + 1 {
        return Err(Error::Invalid("sensor too large for 16-bit event coordinates".into()));
    }
    let times = frame_times(start, end, frame_rate)?;
    let poses = times
        .iter()
        .map(|&t| trajectory.pose_at(t))
        .collect::<Result<Vec<_>>>()?;
    let opts = RenderOptions::default();
    let frames = poses
        .par_iter()
        .map(|p| log_frame(gt, cam, p, &opts))
        .collect::<Result<Vec<_>>>()?;

    let (w, n) = (cam.width, cam.num_pixels());
    let per_pixel: Vec<(Vec<Event>, usize)> = (0..n)
        .into_par_iter()
        .map(|p| {
            let levels: Vec<f64> = frames.iter().map(|f| f[p]).collect();
            pixel_events(&levels, &times, thresholds, (p % w) as u16, (p / w) as u16)
        })
        .collect();

    let undersampled = per_pixel.iter().map(|(_, u)| u).sum();
    let mut events: Vec<Event> = per_pixel.into_iter().flat_map(|(e, _)| e).collect();
    // stable: events of one pixel keep their generation order
    events.sort_by_key(|e| e.t);
    if undersampled > 0 {
        log::warn!("{undersampled} pixel-frame changes exceed {UNDERSAMPLING_STEPS} thresholds; raise the frame rate");
    }
    Ok(Simulation {
        stream: EventStream::new(events, cam.width as u32, cam.height as u32)?,
        frame_times: times,
        undersampled,
    })
}

/// Events of one pixel whose log intensity is `levels[k]` at `times[k]`,
/// plus the number of frame steps that moved more than
/// [`UNDERSAMPLING_STEPS`] thresholds.
pub fn pixel_events(
    levels: &[f64],
    times: &[u64],
    thresholds: &ContrastThresholds,
    x: u16,
    y: u16,
) -> (Vec<Event>, usize) {
    assert_eq!(levels.len(), times.len(), "one level per frame time");
    let mut events = Vec::new();
    let mut undersampled = 0;
    let Some(&first) = levels.first() else {
        return (events, 0);
    };
    let max_step = thresholds.positive.max(thresholds.negative);
    let mut l_ref = first;
    for k in 1..levels.len() {
        let (l_prev, l) = (levels[k - 1], levels[k]);
        let (t_prev, t) = (times[k - 1], times[k]);
        if (l - l_prev).abs() > UNDERSAMPLING_STEPS * max_step {
            undersampled += 1;
        }
        let diff = l - l_ref;
        let (polarity, count) = if diff >= thresholds.positive {
            (Polarity::Positive, (diff / thresholds.positive).floor() as usize)
        } else if -diff >= thresholds.negative {
            (Polarity::Negative, (-diff / thresholds.negative).floor() as usize)
        } else {
            continue;
        };
        let step = thresholds.step(polarity);
        for j in 1..=count {
            let level = l_ref + j as f64 * step;
            let frac = if l != l_prev {
                ((level - l_prev) / (l - l_prev)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let te = t_prev + (frac * (t - t_prev) as f64).round() as u64;
            events.push(Event::new(te.min(t), x, y, polarity));
        }
        l_ref += count as f64 * step;
    }
    (events, undersampled)
}

/// Linear-intensity renders at the given times.
pub fn render_gt_frames(
    gt: &GaussianCloud,
    trajectory: &Trajectory,
    cam: &Camera,
    times: &[u64],
) -> Result<Vec<Image>> {
    let opts = RenderOptions::default();
    times
        .par_iter()
        .map(|&t| Ok(rasterize(gt, cam, &trajectory.pose_at(t)?, &opts).0.image))
        .collect()
}

/// World-from-camera pose at `eye` looking at `target`, with `up` mapped
/// toward the image's negative y axis.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Pose> {
    let z = (target - eye)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Invalid("eye coincides with target".into()))?;
    let x = z
        .cross(&up)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Invalid("view direction parallel to up".into()))?;
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Ok(Isometry3::from_parts(
        Translation3::from(eye),
        UnitQuaternion::from_rotation_matrix(&rot),
    ))
}

/// Circular orbit of `knots` poses around the origin at `radius`, raised
/// by `height` along +z, spanning `duration` ns and one full turn.
pub fn orbit(knots: usize, radius: f64, height: f64, start: u64, duration: u64) -> Result<Vec<PoseSample>> {
    wavy_orbit(knots, radius, height, 0.0, 0, start, duration)
}

/// [`orbit`] whose height also oscillates by `bob` through `cycles` full
/// periods per turn.
pub fn wavy_orbit(
    knots: usize,
    radius: f64,
    height: f64,
    bob: f64,
    cycles: u32,
    start: u64,
    duration: u64,
) -> Result<Vec<PoseSample>> {
    if knots < 2 || duration == 0 {
        return Err(Error::Invalid("an orbit needs at least 2 knots and a positive duration".into()));
    }
    (0..knots)
        .map(|i| {
            let u = i as f64 / (knots - 1) as f64;
            let theta = 2.0 * PI * u;
            let z = height + bob * (cycles as f64 * theta).sin();
            let eye = Vector3::new(radius * theta.cos(), radius * theta.sin(), z);
            let pose = look_at(eye, Vector3::zeros(), Vector3::z())?;
            let t = start + (u * duration as f64).round() as u64;
            Ok(PoseSample::from_pose(t, &pose))
        })
        .collect()
}

/// Explicit Gaussian entry of a scene file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
    /// `w, x, y, z`; normalized on load.
    #[serde(default = "identity_rotation")]
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

fn identity_rotation() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

/// Seeded random Gaussians inside a ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSceneSpec {
    pub count: usize,
    pub seed: u64,
    pub radius: f64,
    /// Log-uniform scale range.
    pub scale: [f64; 2],
    pub opacity: [f64; 2],
    pub color: [f64; 2],
}

impl Default for RandomSceneSpec {
    fn default() -> Self {
        Self {
            count: 50,
            seed: 0,
            radius: 0.8,
            scale: [0.04, 0.2],
            opacity: [0.6, 0.95],
            color: [0.05, 0.95],
        }
    }
}

/// Ground-truth scene description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub sh_degree: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_background")]
    pub background: [f64; 3],
    #[serde(default, rename = "gaussian")]
    pub gaussians: Vec<GaussianSpec>,
    pub random: Option<RandomSceneSpec>,
}

fn default_channels() -> usize {
    3
}

fn default_background() -> [f64; 3] {
    [0.3; 3]
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scene file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene serializes")
    }

    /// Explicit Gaussians first, then the random ones.
    pub fn build(&self) -> Result<GaussianCloud> {
        let mut cloud = GaussianCloud::new(self.sh_degree, self.channels, self.background)?;
        for g in &self.gaussians {
            let q = nalgebra::Quaternion::new(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]);
            if !(q.norm() > 0.0) || g.scale.iter().any(|s| !(*s > 0.0)) || !(g.opacity > 0.0 && g.opacity < 1.0) {
                return Err(Error::Config(format!("invalid scene Gaussian {g:?}")));
            }
            cloud.push(cloud.make_gaussian(
                Vector3::from(g.mean),
                Vector3::from(g.scale),
                UnitQuaternion::from_quaternion(q),
                g.opacity,
                g.color,
            ))?;
        }
        if let Some(r) = &self.random {
            let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
            for _ in 0..r.count {
                let g = random_gaussian(&cloud, r, &mut rng)?;
                cloud.push(g)?;
            }
        }
        if cloud.is_empty() {
            return Err(Error::Config("scene file defines no Gaussians".into()));
        }
        Ok(cloud)
    }
}

fn random_gaussian(
    cloud: &GaussianCloud,
    r: &RandomSceneSpec,
    rng: &mut ChaCha8Rng,
) -> Result<crate::scene::Gaussian3D> {
    let ordered = |v: [f64; 2]| v[0] <= v[1];
    if !(r.radius > 0.0 && r.scale[0] > 0.0 && ordered(r.scale) && ordered(r.opacity) && ordered(r.color))
        || !(r.opacity[0] > 0.0 && r.opacity[1] < 1.0)
    {
        return Err(Error::Config(format!("invalid random scene settings {r:?}")));
    }
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let mean = loop {
        let p = Vector3::new(uniform(-1.0, 1.0), uniform(-1.0, 1.0), uniform(-1.0, 1.0));
        if p.norm_squared() <= 1.0 {
            break p * r.radius;
        }
    };
    let (ls0, ls1) = (r.scale[0].ln(), r.scale[1].ln());
    let scale = Vector3::new(uniform(ls0, ls1), uniform(ls0, ls1), uniform(ls0, ls1)).map(f64::exp);
    let opacity = uniform(r.opacity[0], r.opacity[1]);
    let color = [
        uniform(r.color[0], r.color[1]),
        uniform(r.color[0], r.color[1]),
        uniform(r.color[0], r.color[1]),
    ];
    let q = nalgebra::Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    Ok(cloud.make_gaussian(mean, scale, UnitQuaternion::from_quaternion(q), opacity, color))
}
