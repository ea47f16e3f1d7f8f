//! Forward rasterization time for 10⁴ Gaussians at 256×256, with one
//! thread and with every available thread.
//!
//! `cargo run --release --example render_benchmark`

use std::time::{Duration, Instant};

use evsplat::render::{rasterize, RenderOptions};
use evsplat::scene::{Camera, GaussianCloud};
use evsplat::simulator::{look_at, RandomSceneSpec, SceneSpec};
use nalgebra::Vector3;

fn median_time(cloud: &GaussianCloud, cam: &Camera, threads: usize) -> Duration {
    let pose = look_at(Vector3::new(0.0, -3.5, 0.6), Vector3::zeros(), Vector3::z()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let opts = RenderOptions::default();
    let mut times: Vec<Duration> = (0..5)
        .map(|_| {
            let t = Instant::now();
            pool.install(|| rasterize(cloud, cam, &pose, &opts));
            t.elapsed()
        })
        .collect();
    times.sort();
    times[2]
}

fn main() -> evsplat::Result<()> {
    let cloud = SceneSpec {
        sh_degree: 3,
        channels: 3,
        background: [0.0; 3],
        gaussians: Vec::new(),
        random: Some(RandomSceneSpec {
            count: 10_000,
            seed: 1,
            radius: 1.0,
            scale: [0.01, 0.05],
            ..Default::default()
        }),
    }
    .build()?;
    let cam = Camera::with_fov(256, 256, 0.9)?;
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let one = median_time(&cloud, &cam, 1);
    println!("1 thread: {one:.1?}");
    if all > 1 {
        let many = median_time(&cloud, &cam, all);
        println!("{all} threads: {many:.1?} ({:.2}x)", one.as_secs_f64() / many.as_secs_f64());
    }
    Ok(())
}
