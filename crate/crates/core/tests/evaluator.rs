//! Calibrated scoring properties.

use evsplat::evaluator::{calibrate_log_affine, evaluate, mse, psnr, score_view, ChannelCalibration};
use evsplat::image::Image;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    Image::from_data(w, h, c, (0..w * h * c).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
}

/// A prediction whose log is an affine map of the reference log, with noise.
fn affine_prediction(rng: &mut ChaCha8Rng, r: &Image, gain: f64, offset: f64, noise: f64) -> Image {
    let mut out = r.map(|v| ((v.ln() - offset) / gain).exp());
    for v in &mut out.data {
        *v *= 1.0 + noise * rng.random_range(-1.0..1.0);
    }
    out
}

fn log_mse(pred: &Image, r: &Image, k: &ChannelCalibration) -> f64 {
    pred.data
        .iter()
        .zip(&r.data)
        .map(|(p, v)| (k.gain * p.ln() + k.offset - v.ln()).powi(2))
        .sum::<f64>()
        / pred.data.len() as f64
}

#[test]
fn the_fit_minimizes_log_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = reference(&mut rng, 20, 16, 1);
    let pred = affine_prediction(&mut rng, &r, 0.7, 0.3, 0.05);
    let fit = calibrate_log_affine(&pred, &r).unwrap()[0];
    let best = log_mse(&pred, &r, &fit);
    for (dg, db) in [(1.1, 1.0), (0.9, 1.0), (1.0, 1.1), (1.0, 0.9)] {
        let other = ChannelCalibration {
            gain: fit.gain * dg,
            offset: fit.offset * db,
            degenerate: false,
        };
        assert!(log_mse(&pred, &r, &other) > best);
    }
}

#[test]
fn calibration_never_hurts_on_affine_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let r = reference(&mut rng, 16, 16, 3);
        let gain = rng.random_range(0.5..2.0);
        let offset = rng.random_range(-0.5..0.5);
        let pred = affine_prediction(&mut rng, &r, gain, offset, 0.02);
        let raw = psnr(&pred.map(|v| v.clamp(0.0, 1.0)), &r, 1.0).unwrap();
        let calibrated = score_view("v", &pred, &r).unwrap().psnr_db;
        assert!(calibrated >= raw, "{calibrated} < {raw}");
    }
}

#[test]
fn psnr_matches_the_direct_formula_and_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = reference(&mut rng, 9, 7, 2);
    let b = reference(&mut rng, 9, 7, 2);
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    let want = 10.0 * (1.0 / (sum / 126.0)).log10();
    assert!((psnr(&a, &b, 1.0).unwrap() - want).abs() < 1e-9);
    assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
}

#[test]
fn report_means_are_arithmetic_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pairs: Vec<(String, Image, Image)> = (0..5)
        .map(|k| {
            let r = reference(&mut rng, 16, 16, 1);
            let p = affine_prediction(&mut rng, &r, 1.0, 0.0, 0.01 * (k + 1) as f64);
            (format!("view_{k}"), p, r)
        })
        .collect();
    let report = evaluate(&pairs).unwrap();
    let mean_psnr = report.views.iter().map(|v| v.psnr_db).sum::<f64>() / 5.0;
    let mean_ssim = report.views.iter().map(|v| v.ssim).sum::<f64>() / 5.0;
    assert_eq!(report.mean_psnr_db, mean_psnr);
    assert_eq!(report.mean_ssim, mean_ssim);
    assert_eq!(report.to_csv().lines().count(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn calibrated_psnr_ignores_a_global_gain(seed in 0u64..10_000, k in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = reference(&mut rng, 12, 12, 1);
        let pred = affine_prediction(&mut rng, &r, 0.8, 0.1, 0.05);
        let base = score_view("v", &pred, &r).unwrap().psnr_db;
        let scaled = score_view("v", &pred.map(|v| v * k), &r).unwrap().psnr_db;
        prop_assert!((base - scaled).abs() < 1e-6);
    }
}
