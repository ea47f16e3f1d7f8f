//! Gaussian-window SSIM over single- or multi-channel images, with the
//! gradient of a weighted mean SSIM with respect to both inputs.
//!
//! Local statistics use a normalized separable Gaussian (σ = 1.5) and
//! zero-padded "same" filtering, so every pixel has an SSIM value.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_SIGMA: f64 = 1.5;
pub const DEFAULT_WINDOW: usize = 11;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Smallest dynamic range used for the stabilizing constants.
pub const MIN_RANGE: f64 = 1e-3;

pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as f64;
    let k: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Zero-padded separable filtering of one `w × h` plane.
fn filter(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let xx = x as isize + i as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += k * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let yy = y as isize + i as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    acc += k * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Invalid(format!("SSIM window must be odd, got {window}")));
    }
    Ok(())
}

/// Stabilizing constants for a given dynamic range.
pub fn constants(range: f64) -> (f64, f64) {
    let r = range.max(MIN_RANGE);
    ((K1 * r).powi(2), (K2 * r).powi(2))
}

/// Per-pixel SSIM maps and their partial derivatives for one channel.
struct Stats {
    map: Vec<f64>,
    d_mu_a: Vec<f64>,
    d_mu_b: Vec<f64>,
    d_aa: Vec<f64>,
    d_bb: Vec<f64>,
    d_ab: Vec<f64>,
}

fn channel_stats(a: &[f64], b: &[f64], w: usize, h: usize, kernel: &[f64], c1: f64, c2: f64) -> Stats {
    let sq = |v: &[f64], u: &[f64]| v.iter().zip(u).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter(a, w, h, kernel);
    let mu_b = filter(b, w, h, kernel);
    let e_aa = filter(&sq(a, a), w, h, kernel);
    let e_bb = filter(&sq(b, b), w, h, kernel);
    let e_ab = filter(&sq(a, b), w, h, kernel);
    let n = w * h;
    let mut st = Stats {
        map: vec![0.0; n],
        d_mu_a: vec![0.0; n],
        d_mu_b: vec![0.0; n],
        d_aa: vec![0.0; n],
        d_bb: vec![0.0; n],
        d_ab: vec![0.0; n],
    };
    for p in 0..n {
        let (ma, mb) = (mu_a[p], mu_b[p]);
        let a1 = 2.0 * ma * mb + c1;
        let a2 = 2.0 * (e_ab[p] - ma * mb) + c2;
        let b1 = ma * ma + mb * mb + c1;
        let b2 = (e_aa[p] - ma * ma) + (e_bb[p] - mb * mb) + c2;
        let den = b1 * b2;
        let s = a1 * a2 / den;
        st.map[p] = s;
        st.d_mu_a[p] = 2.0 * mb * (a2 - a1) / den - 2.0 * ma * s * (1.0 / b1 - 1.0 / b2);
        st.d_mu_b[p] = 2.0 * ma * (a2 - a1) / den - 2.0 * mb * s * (1.0 / b1 - 1.0 / b2);
        st.d_aa[p] = -s / b2;
        st.d_bb[p] = -s / b2;
        st.d_ab[p] = 2.0 * a1 / den;
    }
    st
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &Image, b: &Image, window: usize, range: f64) -> Result<f64> {
    Ok(ssim_weighted(a, b, window, range, None)?.value)
}

/// Per-pixel SSIM of one channel.
pub fn ssim_map(a: &Image, b: &Image, window: usize, range: f64) -> Result<Image> {
    a.check_shape(b, "SSIM input")?;
    check_window(window)?;
    let kernel = gaussian_kernel(window, SSIM_SIGMA);
    let (c1, c2) = constants(range);
    let mut out = Image::new(a.width, a.height, a.channels);
    for c in 0..a.channels {
        let st = channel_stats(
            &a.channel(c).data,
            &b.channel(c).data,
            a.width,
            a.height,
            &kernel,
            c1,
            c2,
        );
        for (p, s) in st.map.into_iter().enumerate() {
            out.data[p * a.channels + c] = s;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SsimGrad {
    pub value: f64,
    pub grad_a: Image,
    pub grad_b: Image,
}

/// Weighted mean of the SSIM map and its gradient. `weights` holds one
/// non-negative value per pixel (shared across channels); `None` means a
/// plain mean. Weights are normalized to sum to one.
pub fn ssim_weighted(
    a: &Image,
    b: &Image,
    window: usize,
    range: f64,
    weights: Option<&[f64]>,
) -> Result<SsimGrad> {
    a.check_shape(b, "SSIM input")?;
    check_window(window)?;
    let (w, h, ch) = (a.width, a.height, a.channels);
    let n = w * h;
    let wts: Vec<f64> = match weights {
        Some(v) => {
            if v.len() != n {
                return Err(Error::Shape(format!("{} SSIM weights for {n} pixels", v.len())));
            }
            let total: f64 = v.iter().sum::<f64>() * ch as f64;
            if !(total > 0.0) {
                return Err(Error::Invalid("SSIM weights sum to zero".into()));
            }
            v.iter().map(|x| x / total).collect()
        }
        None => vec![1.0 / (n * ch) as f64; n],
    };
    let kernel = gaussian_kernel(window, SSIM_SIGMA);
    let (c1, c2) = constants(range);
    let mut value = 0.0;
    let mut grad_a = Image::new(w, h, ch);
    let mut grad_b = Image::new(w, h, ch);
    for c in 0..ch {
        let pa = a.channel(c).data;
        let pb = b.channel(c).data;
        let st = channel_stats(&pa, &pb, w, h, &kernel, c1, c2);
        value += st.map.iter().zip(&wts).map(|(s, q)| s * q).sum::<f64>();
        let weigh = |d: &[f64]| d.iter().zip(&wts).map(|(x, q)| x * q).collect::<Vec<_>>();
        // the symmetric kernel makes the adjoint filter the filter itself
        let g_mu_a = filter(&weigh(&st.d_mu_a), w, h, &kernel);
        let g_mu_b = filter(&weigh(&st.d_mu_b), w, h, &kernel);
        let g_aa = filter(&weigh(&st.d_aa), w, h, &kernel);
        let g_bb = filter(&weigh(&st.d_bb), w, h, &kernel);
        let g_ab = filter(&weigh(&st.d_ab), w, h, &kernel);
        for p in 0..n {
            grad_a.data[p * ch + c] = g_mu_a[p] + 2.0 * pa[p] * g_aa[p] + pb[p] * g_ab[p];
            grad_b.data[p * ch + c] = g_mu_b[p] + 2.0 * pb[p] * g_bb[p] + pa[p] * g_ab[p];
        }
    }
    Ok(SsimGrad {
        value,
        grad_a,
        grad_b,
    })
}
