//! Scores degraded renders against references, showing how the log-affine
//! calibration absorbs global gain and gamma but not structural error.
//!
//! `cargo run --release --example evaluate_views`

use evsplat::evaluator::{evaluate, psnr};
use evsplat::image::Image;
use evsplat::render::{rasterize, RenderOptions};
use evsplat::simulator::{orbit, SceneSpec};
use nalgebra::Vector3;
use std::path::Path;

type Degrade<'a> = Box<dyn Fn(usize, &Image) -> Image + 'a>;

fn main() -> evsplat::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let gt = SceneSpec::load(fixtures.join("scene.toml"))?.build()?;
    let cam = evsplat::scene::Camera::with_fov(64, 64, 0.9)?;
    let opts = RenderOptions::default();
    let views = orbit(4, 3.0, 0.8, 0, 1)?;
    let references: Vec<Image> = views
        .iter()
        .map(|v| rasterize(&gt, &cam, &v.pose(), &opts).0.image)
        .collect();

    let mut shifted = gt.clone();
    for g in &mut shifted.gaussians {
        g.mean += Vector3::new(0.03, 0.0, 0.0);
    }
    let degradations: Vec<(&str, Degrade)> = vec![
        ("gain 0.6", Box::new(|_, r: &Image| r.map(|v| 0.6 * v))),
        ("gamma 1.8", Box::new(|_, r: &Image| r.map(|v| v.powf(1.8)))),
        ("gain + gamma", Box::new(|_, r: &Image| r.map(|v| 1.3 * v.powf(0.7)))),
        (
            "geometry off 3 cm",
            Box::new(|k, _: &Image| rasterize(&shifted, &cam, &views[k].pose(), &opts).0.image),
        ),
    ];

    println!("{:<20} {:>10} {:>15} {:>8}", "degradation", "raw PSNR", "calibrated PSNR", "SSIM");
    for (name, degrade) in &degradations {
        let pairs: Vec<(String, Image, Image)> = references
            .iter()
            .enumerate()
            .map(|(k, r)| (format!("view_{k}"), degrade(k, r), r.clone()))
            .collect();
        let raw = pairs.iter().map(|(_, p, r)| psnr(p, r, 1.0)).sum::<evsplat::Result<f64>>()? / pairs.len() as f64;
        let report = evaluate(&pairs)?;
        println!("{name:<20} {raw:>8.2} dB {:>12.2} dB {:>8.4}", report.mean_psnr_db, report.mean_ssim);
    }
    Ok(())
}
