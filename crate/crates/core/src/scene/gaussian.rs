use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::sh::{self, num_coeffs};
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One optimizable splat primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub log_scales: Vector3<f64>,
    /// Unnormalized; normalized whenever a rotation matrix is built.
    pub rotation: Quaternion<f64>,
    pub opacity_logit: f64,
    /// `num_coeffs(degree) * channels` values, coefficient-major.
    pub sh: Vec<f64>,
}

impl Gaussian3D {
    pub fn scales(&self) -> Vector3<f64> {
        self.log_scales.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        UnitQuaternion::from_quaternion(self.rotation).to_rotation_matrix().into_inner()
    }

    /// `R * diag(s)^2 * R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&self.scales());
        m * m.transpose()
    }
}

/// Parameter families, in their order within a flattened parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamFamily {
    Position,
    Scaling,
    Rotation,
    Opacity,
    Features,
}

impl ParamFamily {
    pub const ALL: [ParamFamily; 5] = [
        ParamFamily::Position,
        ParamFamily::Scaling,
        ParamFamily::Rotation,
        ParamFamily::Opacity,
        ParamFamily::Features,
    ];
}

/// Offsets of each family inside a flattened per-Gaussian parameter block:
/// `[mean(3), log_scales(3), rotation(4: w,x,y,z), opacity_logit(1), sh(..)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub sh_len: usize,
}

impl ParamLayout {
    pub const MEAN: usize = 0;
    pub const SCALE: usize = 3;
    pub const ROT: usize = 6;
    pub const OPACITY: usize = 10;
    pub const SH: usize = 11;

    pub fn stride(&self) -> usize {
        Self::SH + self.sh_len
    }

    pub fn range(&self, family: ParamFamily) -> std::ops::Range<usize> {
        match family {
            ParamFamily::Position => Self::MEAN..Self::SCALE,
            ParamFamily::Scaling => Self::SCALE..Self::ROT,
            ParamFamily::Rotation => Self::ROT..Self::OPACITY,
            ParamFamily::Opacity => Self::OPACITY..Self::SH,
            ParamFamily::Features => Self::SH..self.stride(),
        }
    }

    pub fn write(&self, g: &Gaussian3D, out: &mut [f64]) {
        out[0..3].copy_from_slice(g.mean.as_slice());
        out[3..6].copy_from_slice(g.log_scales.as_slice());
        out[6] = g.rotation.w;
        out[7] = g.rotation.i;
        out[8] = g.rotation.j;
        out[9] = g.rotation.k;
        out[10] = g.opacity_logit;
        out[11..11 + self.sh_len].copy_from_slice(&g.sh);
    }

    pub fn read(&self, src: &[f64]) -> Gaussian3D {
        Gaussian3D {
            mean: Vector3::new(src[0], src[1], src[2]),
            log_scales: Vector3::new(src[3], src[4], src[5]),
            rotation: Quaternion::new(src[6], src[7], src[8], src[9]),
            opacity_logit: src[10],
            sh: src[11..11 + self.sh_len].to_vec(),
        }
    }
}

/// The scene: a list of Gaussians sharing an SH degree and channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
    /// Maximum degree stored in every Gaussian's coefficients.
    pub sh_degree: usize,
    /// Degree used for rendering; at most `sh_degree`.
    pub active_sh_degree: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    /// Per-channel background intensity, not optimized.
    pub background: [f64; 3],
}

impl GaussianCloud {
    pub fn new(sh_degree: usize, channels: usize, background: [f64; 3]) -> Result<Self> {
        if sh_degree > sh::MAX_SH_DEGREE {
            return Err(Error::Invalid(format!("SH degree {sh_degree} exceeds 3")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        Ok(Self {
            gaussians: Vec::new(),
            sh_degree,
            active_sh_degree: sh_degree,
            channels,
            background,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn sh_len(&self) -> usize {
        num_coeffs(self.sh_degree) * self.channels
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            sh_len: self.sh_len(),
        }
    }

    /// A Gaussian with DC color `rgb` and zero higher-order terms.
    pub fn make_gaussian(
        &self,
        mean: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        rgb: [f64; 3],
    ) -> Gaussian3D {
        let mut shc = vec![0.0; self.sh_len()];
        for c in 0..self.channels {
            shc[c] = sh::rgb_to_dc(rgb[c]);
        }
        Gaussian3D {
            mean,
            log_scales: scale.map(f64::ln),
            rotation: *rotation.quaternion(),
            opacity_logit: logit(opacity),
            sh: shc,
        }
    }

    pub fn push(&mut self, g: Gaussian3D) -> Result<()> {
        if g.sh.len() != self.sh_len() {
            return Err(Error::Shape(format!(
                "gaussian has {} SH values, cloud expects {}",
                g.sh.len(),
                self.sh_len()
            )));
        }
        self.gaussians.push(g);
        Ok(())
    }

    /// Flattens every Gaussian into one parameter vector.
    pub fn to_params(&self) -> Vec<f64> {
        let layout = self.layout();
        let mut out = vec![0.0; layout.stride() * self.len()];
        for (g, chunk) in self.gaussians.iter().zip(out.chunks_exact_mut(layout.stride())) {
            layout.write(g, chunk);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let layout = self.layout();
        debug_assert_eq!(params.len(), layout.stride() * self.len());
        for (g, chunk) in self.gaussians.iter_mut().zip(params.chunks_exact(layout.stride())) {
            *g = layout.read(chunk);
        }
    }

    /// Axis-aligned bounds of the means.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.gaussians.first()?.mean;
        Some(self.gaussians.iter().fold((first, first), |(lo, hi), g| {
            (lo.inf(&g.mean), hi.sup(&g.mean))
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let mut cloud = GaussianCloud::new(1, 3, [1.0; 3]).unwrap();
        let g = Gaussian3D {
            mean: Vector3::new(1.0, 2.0, 3.0),
            log_scales: Vector3::new(-1.0, -2.0, -3.0),
            rotation: Quaternion::new(0.9, 0.1, 0.2, 0.3),
            opacity_logit: 0.4,
            sh: (0..12).map(|i| i as f64 * 0.1).collect(),
        };
        cloud.push(g.clone()).unwrap();
        let p = cloud.to_params();
        assert_eq!(p.len(), 23);
        let mut other = cloud.clone();
        other.gaussians[0].mean.x = 9.0;
        other.set_params(&p);
        assert_eq!(other.gaussians[0], g);
    }

    #[test]
    fn push_rejects_wrong_sh_length() {
        let mut cloud = GaussianCloud::new(0, 1, [1.0; 3]).unwrap();
        let mut g = cloud.make_gaussian(
            Vector3::zeros(),
            Vector3::repeat(0.1),
            UnitQuaternion::identity(),
            0.5,
            [0.5; 3],
        );
        g.sh.push(0.0);
        assert!(cloud.push(g).is_err());
    }
}
