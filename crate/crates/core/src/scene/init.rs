//! Cloud initialization: uniform random points, or an external point cloud.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;

use super::gaussian::GaussianCloud;
use crate::error::{Error, Result};

/// Smallest initial scale, meters.
pub const MIN_INIT_SCALE: f64 = 1e-4;
/// Scale used when a cloud has a single point.
pub const LONE_POINT_SCALE: f64 = 0.01;
pub const INIT_OPACITY: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitOptions {
    pub sh_degree: usize,
    pub channels: usize,
    pub background: [f64; 3],
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            sh_degree: 3,
            channels: 3,
            background: [1.0; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColoredPoint {
    pub position: Vector3<f64>,
    /// Linear color in `[0, 1]`, when the source provided one.
    pub color: Option<[f64; 3]>,
}

/// Sorted distances from each point to its `k` nearest other points.
fn knn_distances(points: &[Vector3<f64>], k: usize) -> Vec<Vec<f64>> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if best.len() < k || d < best[best.len() - 1] {
                    let at = best.partition_point(|&b| b <= d);
                    best.insert(at, d);
                    best.truncate(k);
                }
            }
            best.into_iter().map(f64::sqrt).collect()
        })
        .collect()
}

/// `n` Gaussians uniform in the box `[lo, hi]`; each scale is the mean
/// distance to its three nearest neighbours.
pub fn init_random<R: Rng + ?Sized>(
    n: usize,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    rng: &mut R,
    opts: InitOptions,
) -> Result<GaussianCloud> {
    if n == 0 {
        return Err(Error::Invalid("cannot initialize an empty cloud".into()));
    }
    if (0..3).any(|i| !(lo[i] <= hi[i])) {
        return Err(Error::Invalid("degenerate bounds".into()));
    }
    let points: Vec<Vector3<f64>> = (0..n)
        .map(|_| Vector3::from_fn(|i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>()))
        .collect();
    let dists = knn_distances(&points, 3);
    let mut cloud = GaussianCloud::new(opts.sh_degree, opts.channels, opts.background)?;
    for (p, d) in points.iter().zip(&dists) {
        let scale = if d.is_empty() {
            LONE_POINT_SCALE
        } else {
            (d.iter().sum::<f64>() / d.len() as f64).max(MIN_INIT_SCALE)
        };
        cloud.push(cloud.make_gaussian(
            *p,
            Vector3::repeat(scale),
            UnitQuaternion::identity(),
            INIT_OPACITY,
            [0.5; 3],
        ))?;
    }
    Ok(cloud)
}

/// One Gaussian per point; scale is the distance to the third nearest
/// neighbour (or the farthest available one), color from the point when
/// present and mid-gray otherwise.
pub fn init_from_points(points: &[ColoredPoint], opts: InitOptions) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::Invalid("cannot initialize from an empty point set".into()));
    }
    let positions: Vec<Vector3<f64>> = points.iter().map(|p| p.position).collect();
    let dists = knn_distances(&positions, 3);
    let mut cloud = GaussianCloud::new(opts.sh_degree, opts.channels, opts.background)?;
    for (p, d) in points.iter().zip(&dists) {
        let scale = d.last().map_or(LONE_POINT_SCALE, |&s| s.max(MIN_INIT_SCALE));
        let rgb = match (p.color, opts.channels) {
            (Some(c), 1) => {
                let y = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
                [y; 3]
            }
            (Some(c), _) => c,
            (None, _) => [0.5; 3],
        };
        cloud.push(cloud.make_gaussian(
            p.position,
            Vector3::repeat(scale),
            UnitQuaternion::identity(),
            INIT_OPACITY,
            rgb,
        ))?;
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::sh::dc_to_rgb;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_requests_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_random(0, Vector3::zeros(), Vector3::repeat(1.0), &mut rng, InitOptions::default()).is_err());
        assert!(init_from_points(&[], InitOptions::default()).is_err());
    }

    #[test]
    fn random_points_stay_in_bounds_and_are_seeded() {
        let lo = Vector3::zeros();
        let hi = Vector3::repeat(1.0);
        let opts = InitOptions::default();
        let a = init_random(1000, lo, hi, &mut ChaCha8Rng::seed_from_u64(4), opts).unwrap();
        let b = init_random(1000, lo, hi, &mut ChaCha8Rng::seed_from_u64(4), opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        for g in &a.gaussians {
            assert!((0..3).all(|i| g.mean[i] >= 0.0 && g.mean[i] <= 1.0));
            assert!((g.opacity() - 0.1).abs() < 1e-12);
            assert!(g.sh.iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn single_white_point() {
        let cloud = init_from_points(
            &[ColoredPoint {
                position: Vector3::zeros(),
                color: Some([1.0; 3]),
            }],
            InitOptions::default(),
        )
        .unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.gaussians[0].mean, Vector3::zeros());
        assert!((dc_to_rgb(cloud.gaussians[0].sh[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_scales_follow_spacing() {
        let d = 0.07;
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..6 {
                    pts.push(ColoredPoint {
                        position: Vector3::new(i as f64, j as f64, k as f64) * d,
                        color: None,
                    });
                }
            }
        }
        let cloud = init_from_points(&pts, InitOptions::default()).unwrap();
        for g in &cloud.gaussians {
            let s = g.scales().x;
            assert!(s >= d / 2.0 && s <= d * 2.0, "scale {s}");
        }
    }

    #[test]
    fn duplicated_points_get_floor_scale() {
        let pts = vec![
            ColoredPoint {
                position: Vector3::new(0.1, 0.2, 0.3),
                color: None,
            };
            5
        ];
        let cloud = init_from_points(&pts, InitOptions::default()).unwrap();
        for g in &cloud.gaussians {
            assert!((g.scales().x - MIN_INIT_SCALE).abs() < 1e-15);
        }
    }
}
