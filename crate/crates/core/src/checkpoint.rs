//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` version, `u64` header length,
//! a JSON header, then the `f64` sections the header lists, little-endian
//! and in order. A checkpoint holds the cloud plus everything a resumed run
//! needs to continue bit-identically.

use std::path::Path;

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::ContrastThresholds;
use crate::image::write_atomic;
use crate::scene::GaussianCloud;
use crate::trainer::{Adam, DensifyStats, TrainState};

pub const MAGIC: &[u8; 8] = b"EVSPLAT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Section {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    iteration: usize,
    num_gaussians: usize,
    sh_degree: usize,
    active_sh_degree: usize,
    channels: usize,
    background: [f64; 3],
    thresholds: [f64; 2],
    adam_step: u64,
    threshold_adam_step: u64,
    mask_fallbacks: usize,
    /// Hex seed, stream, and word position of the ChaCha generator.
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    sections: Vec<Section>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

/// Serializes a training state.
pub fn encode(state: &TrainState) -> Vec<u8> {
    let cloud = &state.cloud;
    let stats = &state.stats;
    let mut sections: Vec<(&str, Vec<f64>)> = vec![
        ("params", cloud.to_params()),
        ("adam_m", state.adam.m.clone()),
        ("adam_v", state.adam.v.clone()),
        ("threshold_adam_m", state.threshold_adam.m.clone()),
        ("threshold_adam_v", state.threshold_adam.v.clone()),
        ("stats_grad_norm", stats.grad_norm_sum.clone()),
        ("stats_views", stats.views.iter().map(|&v| v as f64).collect()),
    ];
    sections.push((
        "stats_mean_grad",
        stats.mean_grad_sum.iter().flat_map(|v| [v.x, v.y, v.z]).collect(),
    ));
    let header = Header {
        iteration: state.iteration,
        num_gaussians: cloud.len(),
        sh_degree: cloud.sh_degree,
        active_sh_degree: cloud.active_sh_degree,
        channels: cloud.channels,
        background: cloud.background,
        thresholds: [state.thresholds.positive, state.thresholds.negative],
        adam_step: state.adam.step,
        threshold_adam_step: state.threshold_adam.step,
        mask_fallbacks: state.mask_fallbacks,
        rng_seed: hex(&state.rng.get_seed()),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        sections: sections
            .iter()
            .map(|(name, data)| Section {
                name: name.to_string(),
                len: data.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, data) in &sections {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Invalid(format!("checkpoint: {}", reason.into()))
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let json = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(e.to_string()))?;
    let mut pos = 20 + hlen;
    let mut sections = std::collections::HashMap::new();
    for s in &header.sections {
        let end = pos + 8 * s.len;
        let raw = bytes.get(pos..end).ok_or_else(|| bad(format!("truncated section {}", s.name)))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        sections.insert(s.name.as_str(), data);
        pos = end;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let mut take = |name: &str| sections.remove(name).ok_or_else(|| bad(format!("missing section {name}")));

    let mut cloud = GaussianCloud::new(header.sh_degree, header.channels, header.background)?;
    cloud.active_sh_degree = header.active_sh_degree.min(header.sh_degree);
    let layout = cloud.layout();
    let params = take("params")?;
    if params.len() != layout.stride() * header.num_gaussians {
        return Err(bad("parameter section size does not match header"));
    }
    cloud.gaussians = params.chunks_exact(layout.stride()).map(|c| layout.read(c)).collect();
    let n = cloud.len();
    let adam = Adam {
        m: take("adam_m")?,
        v: take("adam_v")?,
        step: header.adam_step,
    };
    let threshold_adam = Adam {
        m: take("threshold_adam_m")?,
        v: take("threshold_adam_v")?,
        step: header.threshold_adam_step,
    };
    let mean_grad = take("stats_mean_grad")?;
    let stats = DensifyStats {
        grad_norm_sum: take("stats_grad_norm")?,
        views: take("stats_views")?.into_iter().map(|v| v as u32).collect(),
        mean_grad_sum: mean_grad.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
    };
    if adam.len() != params.len() || adam.v.len() != params.len() || threshold_adam.len() != 2 || stats.len() != n
        || stats.grad_norm_sum.len() != n || stats.mean_grad_sum.len() != n
    {
        return Err(bad("optimizer sections do not match the cloud"));
    }

    use rand::SeedableRng;
    let seed = unhex(&header.rng_seed).ok_or_else(|| bad("bad rng seed"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng_stream);
    rng.set_word_pos(header.rng_word_pos.parse().map_err(|_| bad("bad rng position"))?);
    let [p, q] = header.thresholds;
    Ok(TrainState {
        cloud,
        adam,
        thresholds: ContrastThresholds::new(p, q).map_err(|e| bad(e.to_string()))?,
        threshold_adam,
        iteration: header.iteration,
        stats,
        rng,
        mask_fallbacks: header.mask_fallbacks,
    })
}

pub fn save(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(state))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
