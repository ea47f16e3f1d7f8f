//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Coefficients are stored coefficient-major: `coeffs[k * channels + c]` is
//! basis function `k` for channel `c`. A color is
//! `max(0, sum_k Y_k(dir) * coeffs[k] + 0.5)`, so an all-zero coefficient set
//! renders mid-gray.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: usize = 3;

pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Coefficient for a DC-only color of `value`.
pub fn rgb_to_dc(value: f64) -> f64 {
    (value - 0.5) / SH_C0
}

pub fn dc_to_rgb(coeff: f64) -> f64 {
    coeff * SH_C0 + 0.5
}

/// Basis values `Y_k(dir)` for `k < num_coeffs(degree)`; unused entries are 0.
pub fn basis(degree: usize, d: &Vector3<f64>) -> [f64; 16] {
    let mut y = [0.0; 16];
    y[0] = SH_C0;
    if degree == 0 {
        return y;
    }
    let (x, yy, z) = (d.x, d.y, d.z);
    y[1] = -SH_C1 * yy;
    y[2] = SH_C1 * z;
    y[3] = -SH_C1 * x;
    if degree == 1 {
        return y;
    }
    let (xx, y2, zz) = (x * x, yy * yy, z * z);
    y[4] = SH_C2[0] * x * yy;
    y[5] = SH_C2[1] * yy * z;
    y[6] = SH_C2[2] * (2.0 * zz - xx - y2);
    y[7] = SH_C2[3] * x * z;
    y[8] = SH_C2[4] * (xx - y2);
    if degree == 2 {
        return y;
    }
    y[9] = SH_C3[0] * yy * (3.0 * xx - y2);
    y[10] = SH_C3[1] * x * yy * z;
    y[11] = SH_C3[2] * yy * (4.0 * zz - xx - y2);
    y[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * y2);
    y[13] = SH_C3[4] * x * (4.0 * zz - xx - y2);
    y[14] = SH_C3[5] * z * (xx - y2);
    y[15] = SH_C3[6] * x * (xx - 3.0 * y2);
    y
}

/// Partial derivatives of each basis function with respect to the direction
/// components, treating them as independent.
pub fn basis_gradient(degree: usize, d: &Vector3<f64>) -> [Vector3<f64>; 16] {
    let mut g = [Vector3::zeros(); 16];
    if degree == 0 {
        return g;
    }
    let (x, y, z) = (d.x, d.y, d.z);
    g[1] = Vector3::new(0.0, -SH_C1, 0.0);
    g[2] = Vector3::new(0.0, 0.0, SH_C1);
    g[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    if degree == 1 {
        return g;
    }
    let c = SH_C2;
    g[4] = Vector3::new(c[0] * y, c[0] * x, 0.0);
    g[5] = Vector3::new(0.0, c[1] * z, c[1] * y);
    g[6] = Vector3::new(-2.0 * c[2] * x, -2.0 * c[2] * y, 4.0 * c[2] * z);
    g[7] = Vector3::new(c[3] * z, 0.0, c[3] * x);
    g[8] = Vector3::new(2.0 * c[4] * x, -2.0 * c[4] * y, 0.0);
    if degree == 2 {
        return g;
    }
    let c = SH_C3;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    g[9] = Vector3::new(6.0 * c[0] * x * y, c[0] * (3.0 * xx - 3.0 * yy), 0.0);
    g[10] = Vector3::new(c[1] * y * z, c[1] * x * z, c[1] * x * y);
    g[11] = Vector3::new(
        -2.0 * c[2] * x * y,
        c[2] * (4.0 * zz - xx - 3.0 * yy),
        8.0 * c[2] * y * z,
    );
    g[12] = Vector3::new(
        -6.0 * c[3] * x * z,
        -6.0 * c[3] * y * z,
        c[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    );
    g[13] = Vector3::new(
        c[4] * (4.0 * zz - 3.0 * xx - yy),
        -2.0 * c[4] * x * y,
        8.0 * c[4] * x * z,
    );
    g[14] = Vector3::new(2.0 * c[5] * x * z, -2.0 * c[5] * y * z, c[5] * (xx - yy));
    g[15] = Vector3::new(c[6] * (3.0 * xx - 3.0 * yy), -6.0 * c[6] * x * y, 0.0);
    g
}

/// Evaluates per-channel colors. Returns the colors and, per channel, whether
/// the zero clamp was inactive (the gradient passes through).
pub fn eval_color(
    coeffs: &[f64],
    channels: usize,
    degree: usize,
    dir: &Vector3<f64>,
) -> ([f64; 3], [bool; 3]) {
    let y = basis(degree, dir);
    let mut color = [0.0; 3];
    let mut live = [false; 3];
    for c in 0..channels {
        let mut v = 0.5;
        for (k, yk) in y.iter().enumerate().take(num_coeffs(degree)) {
            v += yk * coeffs[k * channels + c];
        }
        live[c] = v >= 0.0;
        color[c] = v.max(0.0);
    }
    (color, live)
}

/// Convenience wrapper returning only the colors.
pub fn sh_to_color(coeffs: &[f64], channels: usize, degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    eval_color(coeffs, channels, degree, dir).0
}

/// Backward of [`eval_color`]: accumulates `dL/dcoeffs` into `grad_coeffs` and
/// returns `dL/ddir` (direction components independent).
pub fn eval_color_backward(
    coeffs: &[f64],
    channels: usize,
    degree: usize,
    dir: &Vector3<f64>,
    live: &[bool; 3],
    grad_color: &[f64; 3],
    grad_coeffs: &mut [f64],
) -> Vector3<f64> {
    let y = basis(degree, dir);
    let gy = basis_gradient(degree, dir);
    let mut gdir = Vector3::zeros();
    for c in 0..channels {
        if !live[c] {
            continue;
        }
        let g = grad_color[c];
        for k in 0..num_coeffs(degree) {
            grad_coeffs[k * channels + c] += g * y[k];
            if k > 0 {
                gdir += gy[k] * (g * coeffs[k * channels + c]);
            }
        }
    }
    gdir
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coefficients_give_mid_gray() {
        let coeffs = vec![0.0; 16 * 3];
        for d in [Vector3::x(), -Vector3::z(), Vector3::new(1.0, 2.0, -3.0).normalize()] {
            assert_eq!(sh_to_color(&coeffs, 3, 3, &d), [0.5, 0.5, 0.5]);
        }
    }

    #[test]
    fn dc_term_is_isotropic() {
        let coeffs = vec![rgb_to_dc(0.8)];
        let a = sh_to_color(&coeffs, 1, 0, &Vector3::x());
        let b = sh_to_color(&coeffs, 1, 0, &Vector3::new(-0.3, 0.4, 0.5).normalize());
        assert_eq!(a[0], b[0]);
        assert!((a[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn degree_one_z_difference_matches_basis() {
        // only the z basis function (index 2) is non-zero
        let mut coeffs = vec![0.0; 4];
        coeffs[2] = 0.3;
        let up = sh_to_color(&coeffs, 1, 1, &Vector3::z())[0];
        let down = sh_to_color(&coeffs, 1, 1, &-Vector3::z())[0];
        assert!(((up - down) - 2.0 * (SH_C1 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn negative_colors_clamp_at_zero() {
        let coeffs = vec![rgb_to_dc(-1.0)];
        assert_eq!(sh_to_color(&coeffs, 1, 0, &Vector3::z()), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let d = Vector3::new(0.3, -0.5, 0.7);
        let g = basis_gradient(3, &d);
        let h = 1e-6;
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            let (yp, ym) = (basis(3, &dp), basis(3, &dm));
            for k in 0..16 {
                let fd = (yp[k] - ym[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8, "k={k} axis={axis}");
            }
        }
    }
}
