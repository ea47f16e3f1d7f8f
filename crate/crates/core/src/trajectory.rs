//! Continuous camera trajectories from discrete pose samples.
//!
//! Translation is interpolated per axis by a natural cubic spline. Rotation
//! uses spherical cubic (squad) interpolation whose inner control quaternions
//! come from the neighbouring knots. Queries outside the knot range are errors.
//!
//! Poses are world-from-camera.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Pose = Isometry3<f64>;

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    pub t: u64,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl PoseSample {
    pub fn new(t: u64, translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            t,
            translation,
            rotation,
        }
    }

    pub fn from_pose(t: u64, pose: &Pose) -> Self {
        Self::new(t, pose.translation.vector, pose.rotation)
    }

    pub fn pose(&self) -> Pose {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }
}

/// Validates sample ordering and aligns each quaternion to the hemisphere of
/// its predecessor.
fn ingest(samples: &[PoseSample]) -> Result<Vec<PoseSample>> {
    if samples.len() < 2 {
        return Err(Error::Trajectory(format!(
            "need at least 2 pose samples, got {}",
            samples.len()
        )));
    }
    let mut out: Vec<PoseSample> = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let norm = s.rotation.quaternion().norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Trajectory(format!(
                "sample {i} quaternion has norm {norm}"
            )));
        }
        let mut q = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            *s.rotation.quaternion()
        } else {
            *s.rotation.quaternion() / norm
        };
        if let Some(prev) = out.last() {
            if s.t <= prev.t {
                return Err(Error::Trajectory(format!(
                    "sample {i} time {} does not increase past {}",
                    s.t, prev.t
                )));
            }
            if q.dot(prev.rotation.quaternion()) < 0.0 {
                q = -q;
            }
        }
        out.push(PoseSample::new(
            s.t,
            s.translation,
            UnitQuaternion::new_unchecked(q),
        ));
    }
    Ok(out)
}

/// Second derivatives of the natural cubic spline through `(ts, ys)`.
fn natural_second_derivatives(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = ts.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior unknowns m[1..n-1].
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for j in 0..k {
        let i = j + 1;
        let h0 = ts[i] - ts[i - 1];
        let h1 = ts[i + 1] - ts[i];
        diag[j] = 2.0 * (h0 + h1);
        upper[j] = h1;
        rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    for j in 1..k {
        let lower = ts[j + 1] - ts[j];
        let w = lower / diag[j - 1];
        diag[j] -= w * upper[j - 1];
        rhs[j] -= w * rhs[j - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for j in (0..k - 1).rev() {
        m[j + 1] = (rhs[j] - upper[j] * m[j + 2]) / diag[j];
    }
    m
}

fn quat_log(q: &Quaternion<f64>) -> Quaternion<f64> {
    // unit quaternion: log = (0, axis * angle)
    let v = q.imag();
    let s = v.norm();
    if s < 1e-15 {
        return Quaternion::from_imag(v);
    }
    let angle = s.atan2(q.w);
    Quaternion::from_imag(v * (angle / s))
}

fn quat_exp(q: &Quaternion<f64>) -> Quaternion<f64> {
    let v = q.imag();
    let theta = v.norm();
    if theta < 1e-15 {
        return Quaternion::from_parts(1.0, v);
    }
    Quaternion::from_parts(theta.cos(), v * (theta.sin() / theta))
}

/// Spherical linear interpolation without shortest-path flipping.
pub(crate) fn slerp_raw(a: &Quaternion<f64>, b: &Quaternion<f64>, u: f64) -> Quaternion<f64> {
    let dot = a.dot(b).clamp(-1.0, 1.0);
    let theta = dot.acos();
    let s = theta.sin();
    if s.abs() < 1e-12 {
        return (a * (1.0 - u) + b * u).normalize();
    }
    a * (((1.0 - u) * theta).sin() / s) + b * ((u * theta).sin() / s)
}

/// Shortest-arc slerp between unit quaternions.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, u: f64) -> UnitQuaternion<f64> {
    let (qa, mut qb) = (*a.quaternion(), *b.quaternion());
    if qa.dot(&qb) < 0.0 {
        qb = -qb;
    }
    UnitQuaternion::new_normalize(slerp_raw(&qa, &qb, u))
}

/// Continuous SE(3) trajectory through a list of pose samples.
#[derive(Clone, Debug)]
pub struct PoseSpline {
    knots: Vec<PoseSample>,
    /// Knot times in seconds relative to the first knot.
    times: Vec<f64>,
    /// Per-axis second derivatives of the translation spline.
    second: [Vec<f64>; 3],
    /// Squad inner control quaternions, one per knot.
    controls: Vec<Quaternion<f64>>,
}

impl PoseSpline {
    pub fn fit(samples: &[PoseSample]) -> Result<Self> {
        let knots = ingest(samples)?;
        let t0 = knots[0].t;
        let times: Vec<f64> = knots.iter().map(|k| (k.t - t0) as f64 * 1e-9).collect();
        let second = [0, 1, 2].map(|axis| {
            let ys: Vec<f64> = knots.iter().map(|k| k.translation[axis]).collect();
            natural_second_derivatives(&times, &ys)
        });
        let n = knots.len();
        let qs: Vec<Quaternion<f64>> = knots.iter().map(|k| *k.rotation.quaternion()).collect();
        let controls = (0..n)
            .map(|i| {
                if i == 0 || i == n - 1 {
                    return qs[i];
                }
                let inv = qs[i].conjugate();
                let next = quat_log(&(inv * qs[i + 1]));
                let prev = quat_log(&(inv * qs[i - 1]));
                (qs[i] * quat_exp(&((next + prev) * -0.25))).normalize()
            })
            .collect();
        Ok(Self {
            knots,
            times,
            second,
            controls,
        })
    }

    pub fn knots(&self) -> &[PoseSample] {
        &self.knots
    }

    pub fn start(&self) -> u64 {
        self.knots[0].t
    }

    pub fn end(&self) -> u64 {
        self.knots[self.knots.len() - 1].t
    }

    pub fn contains(&self, t: u64) -> bool {
        t >= self.start() && t <= self.end()
    }

    fn segment(&self, t: u64) -> Result<usize> {
        if !self.contains(t) {
            return Err(Error::OutOfRange {
                t_ns: t,
                first: self.start(),
                last: self.end(),
            });
        }
        // index of the last knot with time <= t, capped so a segment follows
        let i = self.knots.partition_point(|k| k.t <= t) - 1;
        Ok(i.min(self.knots.len() - 2))
    }

    pub fn pose_at(&self, t: u64) -> Result<Pose> {
        let i = self.segment(t)?;
        let (k0, k1) = (&self.knots[i], &self.knots[i + 1]);
        if t == k0.t {
            return Ok(k0.pose());
        }
        if t == k1.t {
            return Ok(k1.pose());
        }
        let ts = (t - self.knots[0].t) as f64 * 1e-9;
        let h = self.times[i + 1] - self.times[i];
        let b = (ts - self.times[i]) / h;
        let a = 1.0 - b;
        let translation = Vector3::from_fn(|axis, _| {
            let m = &self.second[axis];
            a * k0.translation[axis]
                + b * k1.translation[axis]
                + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
        });
        let q0 = k0.rotation.quaternion();
        let q1 = k1.rotation.quaternion();
        let outer = slerp_raw(q0, q1, b);
        let inner = slerp_raw(&self.controls[i], &self.controls[i + 1], b);
        let q = slerp_raw(&outer, &inner, 2.0 * b * (1.0 - b));
        Ok(Isometry3::from_parts(
            Translation3::from(translation),
            UnitQuaternion::new_normalize(q),
        ))
    }
}

/// Piecewise-linear translation with slerp rotation between bracketing samples.
pub fn linear_pose_at(samples: &[PoseSample], t: u64) -> Result<Pose> {
    if samples.len() < 2 {
        return Err(Error::Trajectory(format!(
            "need at least 2 pose samples, got {}",
            samples.len()
        )));
    }
    let (first, last) = (samples[0].t, samples[samples.len() - 1].t);
    if t < first || t > last {
        return Err(Error::OutOfRange {
            t_ns: t,
            first,
            last,
        });
    }
    let i = (samples.partition_point(|k| k.t <= t) - 1).min(samples.len() - 2);
    let (k0, k1) = (&samples[i], &samples[i + 1]);
    if k1.t <= k0.t {
        return Err(Error::Trajectory(format!(
            "sample {} time does not increase",
            i + 1
        )));
    }
    if t == k0.t {
        return Ok(k0.pose());
    }
    if t == k1.t {
        return Ok(k1.pose());
    }
    let u = (t - k0.t) as f64 / (k1.t - k0.t) as f64;
    let translation = k0.translation * (1.0 - u) + k1.translation * u;
    Ok(Isometry3::from_parts(
        Translation3::from(translation),
        slerp(&k0.rotation, &k1.rotation, u),
    ))
}

/// How poses are queried between samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Cubic,
    Linear,
}

/// A trajectory that answers pose queries with either interpolation scheme.
#[derive(Clone, Debug)]
pub struct Trajectory {
    spline: PoseSpline,
    mode: Interpolation,
}

impl Trajectory {
    pub fn new(samples: &[PoseSample], mode: Interpolation) -> Result<Self> {
        Ok(Self {
            spline: PoseSpline::fit(samples)?,
            mode,
        })
    }

    pub fn pose_at(&self, t: u64) -> Result<Pose> {
        match self.mode {
            Interpolation::Cubic => self.spline.pose_at(t),
            Interpolation::Linear => linear_pose_at(self.spline.knots(), t),
        }
    }

    pub fn spline(&self) -> &PoseSpline {
        &self.spline
    }

    pub fn mode(&self) -> Interpolation {
        self.mode
    }
}

pub const POSE_CSV_HEADER: &str = "# world-from-camera poses: t_ns,tx,ty,tz,qw,qx,qy,qz";

pub fn write_poses(samples: &[PoseSample], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{POSE_CSV_HEADER}").unwrap();
    for s in samples {
        let q = s.rotation.quaternion();
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            s.t, s.translation.x, s.translation.y, s.translation.z, q.w, q.i, q.j, q.k
        )
        .unwrap();
    }
    crate::image::write_atomic(path.as_ref(), out.as_bytes())
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<PoseSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t_ns") {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(malformed(format!("expected 8 fields, found {}", fields.len())));
        }
        let t: u64 = fields[0]
            .parse()
            .map_err(|e| malformed(format!("timestamp: {e}")))?;
        let mut v = [0.0f64; 7];
        for (j, f) in fields[1..].iter().enumerate() {
            v[j] = f.parse().map_err(|e| malformed(format!("field {}: {e}", j + 2)))?;
        }
        let q = Quaternion::new(v[3], v[4], v[5], v[6]);
        let norm = q.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(malformed(format!("quaternion norm {norm}")));
        }
        out.push(PoseSample::new(
            t,
            Vector3::new(v[0], v[1], v[2]),
            UnitQuaternion::new_unchecked(q / norm),
        ));
    }
    Ok(out)
}
