//! Projection of 3D Gaussians to screen-space splats, and its backward pass.
//!
//! The 2D covariance is `J W Σ Wᵀ Jᵀ + 0.3 I`, with `W` the camera-from-world
//! rotation and `J` the Jacobian of the pinhole projection evaluated at the
//! view-space mean.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, Vector2, Vector3};

use super::camera::Camera;
use super::gaussian::{Gaussian3D, ParamLayout};
use super::sh;
use crate::trajectory::Pose;

/// Screen-space low-pass filter added to every 2D covariance, in px².
pub const LOW_PASS: f64 = 0.3;
/// Default near plane, meters.
pub const DEFAULT_NEAR: f64 = 0.01;
/// Footprint radius in standard deviations.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;

/// Camera-from-world transform plus the camera center in world space.
#[derive(Clone, Copy, Debug)]
pub struct ViewTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub center: Vector3<f64>,
}

impl ViewTransform {
    /// From a world-from-camera pose.
    pub fn from_pose(pose: &Pose) -> Self {
        let r_wc = pose.rotation.to_rotation_matrix().into_inner();
        let rotation = r_wc.transpose();
        let center = pose.translation.vector;
        Self {
            rotation,
            translation: -(rotation * center),
            center,
        }
    }

    #[inline]
    pub fn to_view(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// What the color model needs to know about the cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shading {
    pub channels: usize,
    pub degree: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedSplat {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    /// Activated opacity.
    pub alpha: f64,
    /// Footprint radius in pixels.
    pub radius: f64,
}

/// Intermediates retained for the backward pass.
#[derive(Clone, Debug)]
pub struct SplatCache {
    pub view_mean: Vector3<f64>,
    pub unit_rotation: Quaternion<f64>,
    pub rotation_norm: f64,
    pub rot: Matrix3<f64>,
    pub scales: Vector3<f64>,
    pub cov3d: Matrix3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub dir: Vector3<f64>,
    pub dir_norm: f64,
    pub live: [bool; 3],
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `R S Sᵀ Rᵀ` with `S = diag(exp(log_scales))`.
pub fn build_covariance(g: &Gaussian3D) -> Matrix3<f64> {
    let q = g.rotation.normalize();
    let m = quat_to_matrix(&q) * Matrix3::from_diagonal(&g.scales());
    m * m.transpose()
}

fn conic_of(cov: &Matrix2<f64>) -> Option<[f64; 3]> {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    Some([cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det])
}

/// Projects one Gaussian. Returns `None` when the mean is at or in front of
/// the near plane or the footprint misses the frame.
pub fn project(
    g: &Gaussian3D,
    shading: Shading,
    view: &ViewTransform,
    cam: &Camera,
    near: f64,
) -> Option<ProjectedSplat> {
    project_with_cache(g, shading, view, cam, near).map(|(s, _)| s)
}

pub fn project_with_cache(
    g: &Gaussian3D,
    shading: Shading,
    view: &ViewTransform,
    cam: &Camera,
    near: f64,
) -> Option<(ProjectedSplat, SplatCache)> {
    let t = view.to_view(&g.mean);
    if !(t.z > near) {
        return None;
    }
    let (x, y, z) = (t.x, t.y, t.z);
    let inv_z = 1.0 / z;
    let mean2d = Vector2::new(cam.fx * x * inv_z + cam.cx, cam.fy * y * inv_z + cam.cy);
    let jacobian = Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * x * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * y * inv_z * inv_z,
    );
    let rotation_norm = g.rotation.norm();
    let unit_rotation = g.rotation / rotation_norm;
    let rot = quat_to_matrix(&unit_rotation);
    let scales = g.scales();
    let rs = rot * Matrix3::from_diagonal(&scales);
    let cov3d = rs * rs.transpose();
    let m = jacobian * view.rotation;
    let mut cov2d = m * cov3d * m.transpose();
    // exact symmetry keeps replayed renders bit-stable
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    let conic = conic_of(&cov2d)?;

    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - off * off;
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = FOOTPRINT_SIGMAS * lambda_max.sqrt();
    if mean2d.x + radius < 0.0
        || mean2d.y + radius < 0.0
        || mean2d.x - radius > (cam.width - 1) as f64
        || mean2d.y - radius > (cam.height - 1) as f64
    {
        return None;
    }

    let dir_raw = g.mean - view.center;
    let dir_norm = dir_raw.norm().max(1e-12);
    let dir = dir_raw / dir_norm;
    let (color, live) = sh::eval_color(&g.sh, shading.channels, shading.degree, &dir);

    Some((
        ProjectedSplat {
            mean2d,
            cov2d,
            conic,
            depth: z,
            color,
            alpha: g.opacity(),
            radius,
        },
        SplatCache {
            view_mean: t,
            unit_rotation,
            rotation_norm,
            rot,
            scales,
            cov3d,
            jacobian,
            dir,
            dir_norm,
            live,
        },
    ))
}

/// Loss gradients with respect to one splat's screen-space quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad2d {
    pub mean2d: [f64; 2],
    /// `dL/da, dL/db, dL/dc` for the conic `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// With respect to the activated opacity.
    pub alpha: f64,
    pub color: [f64; 3],
}

impl SplatGrad2d {
    #[inline]
    pub fn add(&mut self, o: &SplatGrad2d) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.alpha += o.alpha;
    }
}

/// Chain rule from screen-space gradients to the flattened parameter block
/// of one Gaussian (see [`ParamLayout`]). Gradients are added into `out`.
#[allow(clippy::too_many_arguments)]
pub fn project_backward(
    g: &Gaussian3D,
    splat: &ProjectedSplat,
    cache: &SplatCache,
    shading: Shading,
    view: &ViewTransform,
    cam: &Camera,
    grad: &SplatGrad2d,
    out: &mut [f64],
) {
    // color
    let mut d_mean = Vector3::zeros();
    {
        let sh_out = &mut out[ParamLayout::SH..];
        let gdir = sh::eval_color_backward(
            &g.sh,
            shading.channels,
            shading.degree,
            &cache.dir,
            &cache.live,
            &grad.color,
            sh_out,
        );
        if shading.degree > 0 {
            d_mean += (gdir - cache.dir * cache.dir.dot(&gdir)) / cache.dir_norm;
        }
    }

    // opacity
    out[ParamLayout::OPACITY] += grad.alpha * splat.alpha * (1.0 - splat.alpha);

    // conic -> 2D covariance
    let [a, b, c] = splat.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(
        grad.conic[0],
        0.5 * grad.conic[1],
        0.5 * grad.conic[1],
        grad.conic[2],
    );
    let g_cov2d = -(conic * g_conic * conic);

    // 2D covariance -> 3D covariance and the projection matrix
    let m = cache.jacobian * view.rotation;
    let g_cov3d = m.transpose() * g_cov2d * m;
    let g_m = 2.0 * g_cov2d * m * cache.cov3d;
    let g_j = g_m * view.rotation.transpose();

    // view-space mean
    let (x, y, z) = (cache.view_mean.x, cache.view_mean.y, cache.view_mean.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let gm2 = Vector2::new(grad.mean2d[0], grad.mean2d[1]);
    let mut d_view = cache.jacobian.transpose() * gm2;
    d_view.x += g_j[(0, 2)] * (-fx / z2);
    d_view.y += g_j[(1, 2)] * (-fy / z2);
    d_view.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * y / z3);
    d_mean += view.rotation.transpose() * d_view;
    for i in 0..3 {
        out[ParamLayout::MEAN + i] += d_mean[i];
    }

    // 3D covariance -> scales and rotation
    let s = cache.scales;
    let rs = cache.rot * Matrix3::from_diagonal(&s);
    let g_rs = 2.0 * g_cov3d * rs;
    let mut g_rot = Matrix3::zeros();
    for j in 0..3 {
        let mut d_s = 0.0;
        for i in 0..3 {
            d_s += g_rs[(i, j)] * cache.rot[(i, j)];
            g_rot[(i, j)] = g_rs[(i, j)] * s[j];
        }
        out[ParamLayout::SCALE + j] += d_s * s[j];
    }

    let q = cache.unit_rotation;
    let (w, qx, qy, qz) = (q.w, q.i, q.j, q.k);
    let r = |i: usize, j: usize| g_rot[(i, j)];
    let dw = 2.0
        * (-qz * r(0, 1) + qy * r(0, 2) + qz * r(1, 0) - qx * r(1, 2) - qy * r(2, 0) + qx * r(2, 1));
    let dx = 2.0
        * (qy * r(0, 1) + qz * r(0, 2) + qy * r(1, 0) - 2.0 * qx * r(1, 1) - w * r(1, 2)
            + qz * r(2, 0)
            + w * r(2, 1)
            - 2.0 * qx * r(2, 2));
    let dy = 2.0
        * (-2.0 * qy * r(0, 0) + qx * r(0, 1) + w * r(0, 2) + qx * r(1, 0) + qz * r(1, 2)
            - w * r(2, 0)
            + qz * r(2, 1)
            - 2.0 * qy * r(2, 2));
    let dz = 2.0
        * (-2.0 * qz * r(0, 0) - w * r(0, 1) + qx * r(0, 2) + w * r(1, 0) - 2.0 * qz * r(1, 1)
            + qy * r(1, 2)
            + qx * r(2, 0)
            + qy * r(2, 1));
    let dn = Quaternion::new(dw, dx, dy, dz);
    let dq = (dn - q * q.dot(&dn)) / cache.rotation_norm;
    out[ParamLayout::ROT] += dq.w;
    out[ParamLayout::ROT + 1] += dq.i;
    out[ParamLayout::ROT + 2] += dq.j;
    out[ParamLayout::ROT + 3] += dq.k;
}
