//! Image metrics against reference renders.
//!
//! Event supervision fixes log intensity only up to an offset, so each
//! prediction is first mapped through a per-channel affine fit in the log
//! domain, `log(ref) ≈ a · log(max(pred, eps)) + b`, and then scored.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::LOG_EPS;
use crate::trainer::ssim;

/// Reported when two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Reference pixels at or below this are ignored by the calibration fit.
pub const CALIBRATION_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelCalibration {
    pub gain: f64,
    pub offset: f64,
    /// The prediction had no log-domain variance; only the offset was fit.
    pub degenerate: bool,
}

impl ChannelCalibration {
    pub const IDENTITY: Self = Self {
        gain: 1.0,
        offset: 0.0,
        degenerate: false,
    };
}

#[inline]
fn log_floor(v: f64) -> f64 {
    v.max(LOG_EPS).ln()
}

/// Least-squares log-affine fit, one per channel.
pub fn calibrate_log_affine(pred: &Image, reference: &Image) -> Result<Vec<ChannelCalibration>> {
    pred.check_shape(reference, "calibration input")?;
    (0..pred.channels)
        .map(|c| {
            let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for p in 0..pred.num_pixels() {
                let r = reference.data[p * pred.channels + c];
                if r <= CALIBRATION_FLOOR {
                    continue;
                }
                let x = log_floor(pred.data[p * pred.channels + c]);
                let y = r.ln();
                n += 1.0;
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
            if n == 0.0 {
                return Err(Error::Invalid(format!(
                    "channel {c}: no reference pixel above {CALIBRATION_FLOOR}"
                )));
            }
            let (mx, my) = (sx / n, sy / n);
            let var = sxx / n - mx * mx;
            let cov = sxy / n - mx * my;
            if !(var > 1e-12 * (1.0 + mx * mx)) {
                return Ok(ChannelCalibration {
                    gain: 1.0,
                    offset: my - mx,
                    degenerate: true,
                });
            }
            let gain = cov / var;
            Ok(ChannelCalibration {
                gain,
                offset: my - gain * mx,
                degenerate: false,
            })
        })
        .collect()
}

/// `exp(a · log(max(pred, eps)) + b)`, optionally clamped to `[0, 1]`.
pub fn apply_calibration(pred: &Image, cal: &[ChannelCalibration], clamp: bool) -> Result<Image> {
    if cal.len() != pred.channels {
        return Err(Error::Shape(format!(
            "{} calibrations for {} channels",
            cal.len(),
            pred.channels
        )));
    }
    let mut out = pred.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        let k = &cal[i % pred.channels];
        let y = (k.gain * log_floor(*v) + k.offset).exp();
        *v = if clamp { y.clamp(0.0, 1.0) } else { y };
    }
    Ok(out)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_shape(b, "MSE input")?;
    if a.data.is_empty() {
        return Err(Error::Invalid("empty image".into()));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10 log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewScore {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub calibration: Vec<ChannelCalibration>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

/// Calibrated PSNR and SSIM of one view, on a `[0, 1]` scale.
pub fn score_view(name: &str, pred: &Image, reference: &Image) -> Result<ViewScore> {
    let calibration = calibrate_log_affine(pred, reference)?;
    let calibrated = apply_calibration(pred, &calibration, true)?;
    Ok(ViewScore {
        name: name.to_string(),
        psnr_db: psnr(&calibrated, reference, 1.0)?,
        ssim: ssim::ssim(&calibrated, reference, ssim::DEFAULT_WINDOW, 1.0)?,
        calibration,
    })
}

/// Scores named `(prediction, reference)` pairs.
pub fn evaluate(pairs: &[(String, Image, Image)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    let views = pairs
        .par_iter()
        .map(|(name, pred, reference)| score_view(name, pred, reference))
        .collect::<Result<Vec<_>>>()?;
    let n = views.len() as f64;
    Ok(EvalReport {
        mean_psnr_db: views.iter().map(|v| v.psnr_db).sum::<f64>() / n,
        mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        views,
    })
}

const CHANNEL_NAMES: [&str; 3] = ["r", "g", "b"];

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let channels = self.views.first().map_or(0, |v| v.calibration.len());
        let mut out = String::from("view,psnr_db,ssim");
        for name in CHANNEL_NAMES.iter().take(channels) {
            write!(out, ",gain_{name},offset_{name}").unwrap();
        }
        out.push('\n');
        for v in &self.views {
            write!(out, "{},{},{}", v.name, v.psnr_db, v.ssim).unwrap();
            for k in &v.calibration {
                write!(out, ",{},{}", k.gain, k.offset).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for v in &self.views {
            let flag = if v.calibration.iter().any(|k| k.degenerate) {
                "  (degenerate calibration)"
            } else {
                ""
            };
            writeln!(out, "{:<24} PSNR {:6.2} dB  SSIM {:.4}{flag}", v.name, v.psnr_db, v.ssim).unwrap();
        }
        writeln!(
            out,
            "mean over {} views: PSNR {:.2} dB, SSIM {:.4}",
            self.views.len(),
            self.mean_psnr_db,
            self.mean_ssim
        )
        .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize, c: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, c, (0..w * h * c).map(|_| rng.random_range(0.05..0.9)).collect()).unwrap()
    }

    #[test]
    fn identity_fit() {
        let p = random_image(1, 16, 12, 3);
        for k in calibrate_log_affine(&p, &p).unwrap() {
            assert!((k.gain - 1.0).abs() < 1e-9 && k.offset.abs() < 1e-9, "{k:?}");
        }
    }

    #[test]
    fn recovers_synthetic_affine_pair() {
        let p = random_image(2, 16, 12, 1).map(|v| v * 0.5);
        let r = p.map(|v| (2.0 * v.ln() + 0.3).exp());
        let k = calibrate_log_affine(&p, &r).unwrap()[0];
        assert!((k.gain - 2.0).abs() < 1e-9);
        assert!((k.offset - 0.3).abs() < 1e-9);
    }

    #[test]
    fn constant_prediction_is_flagged() {
        let p = Image::filled(4, 4, 1, 0.5);
        let r = random_image(3, 4, 4, 1);
        let k = calibrate_log_affine(&p, &r).unwrap()[0];
        assert!(k.degenerate);
        assert_eq!(k.gain, 1.0);
    }

    #[test]
    fn psnr_formula_and_cap() {
        let a = Image::filled(10, 10, 1, 0.5);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn offset_doubles_intensity() {
        let p = random_image(4, 5, 5, 1);
        let k = ChannelCalibration {
            gain: 1.0,
            offset: 2f64.ln(),
            degenerate: false,
        };
        let out = apply_calibration(&p, &[k], false).unwrap();
        for (o, v) in out.data.iter().zip(&p.data) {
            assert!((o - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_identical_sets() {
        assert!(evaluate(&[]).is_err());
        let p = random_image(5, 16, 16, 3);
        let rep = evaluate(&[("a".into(), p.clone(), p.clone())]).unwrap();
        assert_eq!(rep.views[0].psnr_db, PSNR_CAP_DB);
        assert!((rep.views[0].ssim - 1.0).abs() < 1e-6);
        assert!(rep.to_csv().starts_with("view,psnr_db,ssim,gain_r,offset_r,gain_g"));
    }
}
