//! Renders a random color scene from a few viewpoints and writes PNGs.
//!
//! `cargo run --release --example render_scene [out_dir]`

use std::path::PathBuf;

use evsplat::render::{rasterize, RenderOptions};
use evsplat::scene::Camera;
use evsplat::simulator::{look_at, RandomSceneSpec, SceneSpec};
use nalgebra::Vector3;

fn main() -> evsplat::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render_scene_out".into()));
    std::fs::create_dir_all(&out).map_err(|source| evsplat::Error::Io { path: out.clone(), source })?;
    let cloud = SceneSpec {
        sh_degree: 1,
        channels: 3,
        background: [0.05, 0.05, 0.08],
        gaussians: Vec::new(),
        random: Some(RandomSceneSpec {
            count: 400,
            seed: 4,
            radius: 1.0,
            scale: [0.03, 0.15],
            ..Default::default()
        }),
    }
    .build()?;
    let cam = Camera::with_fov(160, 120, 0.9)?;
    let opts = RenderOptions::default();
    for k in 0..4 {
        let angle = k as f64 * std::f64::consts::FRAC_PI_2;
        let eye = Vector3::new(3.0 * angle.cos(), 3.0 * angle.sin(), 0.8);
        let pose = look_at(eye, Vector3::zeros(), Vector3::z())?;
        let (rendered, _) = rasterize(&cloud, &cam, &pose, &opts);
        let covered = rendered.transmittance.iter().filter(|&&t| t < 0.5).count();
        let path = out.join(format!("view_{k}.png"));
        rendered.image.write_png(&path)?;
        println!(
            "{}: {:.0}% of pixels mostly covered",
            path.display(),
            100.0 * covered as f64 / cam.num_pixels() as f64
        );
    }
    Ok(())
}
