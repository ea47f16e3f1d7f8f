//! File-level pipeline behind the command-line tool: simulate, train,
//! render, eval, and pose resampling.
//!
//! Every command writes its outputs under one directory together with a
//! `manifest.jsonl` listing each file's size and SHA-256. All randomness is
//! derived from a single root seed by hashing it with a fixed label.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalReport};
use crate::event::{read_events, write_events, ContrastThresholds};
use crate::image::{write_atomic, Image};
use crate::render::{rasterize, RenderOptions};
use crate::scene::{init_from_points, init_random, read_ply, Camera, GaussianCloud, InitOptions};
use crate::simulator::{render_gt_frames, simulate_events, SceneSpec};
use crate::trainer::{write_metrics_file, TrainConfig, TrainState, Trainer};
use crate::trajectory::{read_poses, write_poses, Interpolation, PoseSample, Trajectory};

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const CHECKPOINT_NAME: &str = "checkpoint.evs";
pub const METRICS_NAME: &str = "metrics.csv";

/// Seed for one consumer of randomness, derived from the root seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Files written by one command, relative to its output directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Hashes every file under `dir` except the manifest itself, sorted by
    /// path.
    pub fn scan(dir: &Path) -> Result<Self> {
        let mut files = BTreeMap::new();
        scan_dir(dir, dir, &mut files)?;
        Ok(Self {
            entries: files.into_values().collect(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Invalid(format!("manifest line: {e}"))))
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn get(&self, path: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    /// Scans `dir` and writes its manifest there.
    pub fn write_for(dir: &Path) -> Result<Self> {
        let manifest = Self::scan(dir)?;
        write_atomic(&dir.join(MANIFEST_NAME), manifest.to_jsonl().as_bytes())?;
        Ok(manifest)
    }
}

fn scan_dir(root: &Path, dir: &Path, out: &mut BTreeMap<String, ManifestEntry>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            scan_dir(root, &path, out)?;
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .expect("scanned path lies under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == MANIFEST_NAME || rel.ends_with(".tmp") {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        out.insert(
            rel.clone(),
            ManifestEntry {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            },
        );
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `view_0000.pfm`, `view_0001.pfm`, ...
pub fn view_name(k: usize) -> String {
    format!("view_{k:04}.pfm")
}

#[derive(Clone, Debug)]
pub struct SimulateRequest {
    pub scene: PathBuf,
    pub trajectory: PathBuf,
    pub camera: PathBuf,
    pub out: PathBuf,
    pub thresholds: ContrastThresholds,
    pub frame_rate: f64,
    /// Replaces the seed of a random scene section.
    pub seed: Option<u64>,
}

/// Writes `events.bin`, `poses.csv`, `camera.toml`, `scene.toml`, and one
/// ground-truth frame per pose under `frames/`.
pub fn simulate(req: &SimulateRequest) -> Result<Manifest> {
    let camera = Camera::load(&req.camera)?;
    let mut spec = SceneSpec::load(&req.scene)?;
    if let (Some(seed), Some(random)) = (req.seed, spec.random.as_mut()) {
        random.seed = derive_seed(seed, "scene");
    }
    let expected = if camera.bayer.is_mono() { 1 } else { 3 };
    if spec.channels != expected {
        return Err(Error::Config(format!(
            "scene has {} channels but the {:?} camera needs {expected}",
            spec.channels, camera.bayer
        )));
    }
    let gt = spec.build()?;
    let knots = read_poses(&req.trajectory)?;
    let trajectory = Trajectory::new(&knots, Interpolation::Cubic)?;
    let spline = trajectory.spline();
    let sim = simulate_events(
        &gt,
        &trajectory,
        &camera,
        &req.thresholds,
        req.frame_rate,
        (spline.start(), spline.end()),
    )?;
    log::info!("simulated {} events over {} frames", sim.stream.len(), sim.frame_times.len());

    let out = &req.out;
    create_dir(&out.join("frames"))?;
    write_events(&sim.stream, out.join("events.bin"))?;
    write_poses(&knots, out.join("poses.csv"))?;
    camera.save(out.join("camera.toml"))?;
    write_atomic(&out.join("scene.toml"), spec.to_toml().as_bytes())?;
    let times: Vec<u64> = knots.iter().map(|k| k.t).collect();
    for (k, frame) in render_gt_frames(&gt, &trajectory, &camera, &times)?.iter().enumerate() {
        frame.write_pfm(out.join("frames").join(view_name(k)))?;
    }
    Manifest::write_for(out)
}

/// Input files of a training run. Relative paths resolve against the
/// config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub events: PathBuf,
    pub poses: PathBuf,
    pub camera: PathBuf,
    #[serde(default = "default_interpolation")]
    pub interpolation: Interpolation,
}

fn default_interpolation() -> Interpolation {
    Interpolation::Cubic
}

/// Initial cloud: points from a PLY file when `ply` is set, otherwise
/// `points` uniform samples in the box `[bounds_min, bounds_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub ply: Option<PathBuf>,
    pub points: usize,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub sh_degree: usize,
    pub background: [f64; 3],
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            ply: None,
            points: 2000,
            bounds_min: [-1.0; 3],
            bounds_max: [1.0; 3],
            sh_degree: 3,
            background: [0.3; 3],
        }
    }
}

/// Training config file: a root seed plus `[data]`, `[init]`, and
/// `[train]` tables. The `[train]` seed is replaced by one derived from
/// the root seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.base_dir = base_dir.into();
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The `[train]` table with its seed derived from the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train"),
            ..self.train.clone()
        }
    }
}

/// Loaded inputs of a training run.
pub struct TrainingData {
    pub stream: crate::event::EventStream,
    pub trajectory: Trajectory,
    pub camera: Camera,
}

pub fn load_training_data(cfg: &RunConfig) -> Result<TrainingData> {
    let camera = Camera::load(cfg.resolve(&cfg.data.camera))?;
    let stream = read_events(
        cfg.resolve(&cfg.data.events),
        Some((camera.width as u32, camera.height as u32)),
    )?;
    let poses = read_poses(cfg.resolve(&cfg.data.poses))?;
    let trajectory = Trajectory::new(&poses, cfg.data.interpolation)?;
    Ok(TrainingData {
        stream,
        trajectory,
        camera,
    })
}

/// The initial cloud described by `[init]`, with as many channels as the
/// camera observes.
pub fn build_init(cfg: &RunConfig, camera: &Camera) -> Result<GaussianCloud> {
    let init = &cfg.init;
    let opts = InitOptions {
        sh_degree: init.sh_degree,
        channels: if camera.bayer.is_mono() { 1 } else { 3 },
        background: init.background,
    };
    match &init.ply {
        Some(ply) => init_from_points(&read_ply(cfg.resolve(ply))?, opts),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init"));
            init_random(
                init.points,
                Vector3::from(init.bounds_min),
                Vector3::from(init.bounds_max),
                &mut rng,
                opts,
            )
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainRequest {
    pub out: PathBuf,
    /// Continue from this checkpoint and append to the metrics file.
    pub resume: Option<PathBuf>,
    /// Stop once this many iterations are complete.
    pub stop_after: Option<usize>,
}

/// Writes `checkpoint.evs` and `metrics.csv` under the output directory.
pub fn train(cfg: &RunConfig, req: &TrainRequest) -> Result<Manifest> {
    let data = load_training_data(cfg)?;
    let train_cfg = cfg.train_config();
    let state = match &req.resume {
        Some(path) => checkpoint::load(path)?,
        None => TrainState::new(build_init(cfg, &data.camera)?, &train_cfg)?,
    };
    let start = state.iteration;
    let mut trainer = Trainer::new(&data.stream, &data.trajectory, &data.camera, train_cfg, state)?;
    trainer.run(req.stop_after)?;
    let state = trainer.state();
    log::info!(
        "iterations {start}..{} done, {} Gaussians",
        state.iteration,
        state.cloud.len()
    );

    create_dir(&req.out)?;
    checkpoint::save(state, req.out.join(CHECKPOINT_NAME))?;
    write_metrics_file(trainer.metrics(), req.out.join(METRICS_NAME), req.resume.is_some())?;
    Manifest::write_for(&req.out)
}

#[derive(Clone, Debug)]
pub struct RenderRequest {
    pub checkpoint: PathBuf,
    pub poses: PathBuf,
    pub camera: PathBuf,
    pub out: PathBuf,
    /// Average color channels into one.
    pub mono: bool,
}

/// Renders one `view_NNNN.pfm` per pose in the list.
pub fn render(req: &RenderRequest) -> Result<Manifest> {
    let state = checkpoint::load(&req.checkpoint)?;
    let camera = Camera::load(&req.camera)?;
    let poses = read_poses(&req.poses)?;
    if poses.is_empty() {
        return Err(Error::Invalid(format!("{}: no poses to render", req.poses.display())));
    }
    create_dir(&req.out)?;
    let opts = RenderOptions::default();
    for (k, sample) in poses.iter().enumerate() {
        let (rendered, _) = rasterize(&state.cloud, &camera, &sample.pose(), &opts);
        let image = if req.mono { to_mono(&rendered.image) } else { rendered.image };
        image.write_pfm(req.out.join(view_name(k)))?;
    }
    Manifest::write_for(&req.out)
}

/// Channel mean.
pub fn to_mono(image: &Image) -> Image {
    let c = image.channels;
    let data = image
        .data
        .chunks_exact(c)
        .map(|px| px.iter().sum::<f64>() / c as f64)
        .collect();
    Image::from_data(image.width, image.height, 1, data).expect("shape is consistent")
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pfm" | "png")) {
            let stem = path.file_stem().expect("file has a name").to_string_lossy().into_owned();
            if out.insert(stem.clone(), path).is_some() {
                return Err(Error::Invalid(format!("{}: two images named {stem}", dir.display())));
            }
        }
    }
    Ok(out)
}

/// Scores every render against the reference with the same file stem, and
/// writes `report.csv` and `summary.txt`.
pub fn eval(renders: &Path, references: &Path, out: &Path) -> Result<EvalReport> {
    let refs = image_files(references)?;
    let pairs = image_files(renders)?
        .into_iter()
        .map(|(name, path)| {
            let reference = refs
                .get(&name)
                .ok_or_else(|| Error::Invalid(format!("no reference image for {name}")))?;
            Ok((name, Image::read(&path)?, Image::read(reference)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&pairs)?;
    create_dir(out)?;
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&out.join("summary.txt"), report.summary().as_bytes())?;
    Manifest::write_for(out)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resampling {
    /// Evenly spaced samples including both ends.
    Count(usize),
    /// Samples every `1/rate` seconds from the first knot.
    Rate(f64),
}

/// Samples a pose file's trajectory at new times.
pub fn resample_poses(knots: &[PoseSample], mode: Interpolation, how: Resampling) -> Result<Vec<PoseSample>> {
    let trajectory = Trajectory::new(knots, mode)?;
    let (start, end) = (trajectory.spline().start(), trajectory.spline().end());
    let times: Vec<u64> = match how {
        Resampling::Count(n) if n >= 2 => (0..n)
            .map(|k| start + ((end - start) as f64 * k as f64 / (n - 1) as f64).round() as u64)
            .collect(),
        Resampling::Count(n) => return Err(Error::Config(format!("need at least 2 samples, got {n}"))),
        Resampling::Rate(rate) => crate::simulator::frame_times(start, end, rate)
            .map_err(|e| Error::Config(e.to_string()))?,
    };
    times
        .iter()
        .map(|&t| Ok(PoseSample::from_pose(t, &trajectory.pose_at(t)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "train"), derive_seed(7, "train"));
        assert_ne!(derive_seed(7, "train"), derive_seed(7, "init"));
        assert_ne!(derive_seed(7, "train"), derive_seed(8, "train"));
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_lines_round_trip() {
        let m = Manifest {
            entries: vec![ManifestEntry {
                path: "a/b.pfm".into(),
                bytes: 3,
                sha256: "00".into(),
            }],
        };
        assert_eq!(Manifest::from_jsonl(&m.to_jsonl()).unwrap(), m);
    }

    #[test]
    fn run_config_rejects_bad_lambda() {
        let text = "[data]\nevents = \"e.bin\"\nposes = \"p.csv\"\ncamera = \"c.toml\"\n[train.loss]\nlambda = 1.5\n";
        assert!(matches!(RunConfig::from_toml(text, "."), Err(Error::Config(_))));
    }

    #[test]
    fn resampling_by_count_hits_both_ends() {
        let knots = crate::simulator::orbit(5, 2.0, 0.5, 100, 1000).unwrap();
        let out = resample_poses(&knots, Interpolation::Cubic, Resampling::Count(9)).unwrap();
        assert_eq!(out.len(), 9);
        assert_eq!(out[0].t, 100);
        assert_eq!(out[8].t, 1100);
        assert!((out[4].translation - knots[2].translation).norm() < 1e-9);
    }
}
