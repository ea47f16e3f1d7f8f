//! Simulates an event stream for the bundled fixture scene and trajectory
//! and reports rates and polarity balance.
//!
//! `cargo run --release --example simulate_events [out.bin]`

use std::path::Path;

use evsplat::event::{write_events, ContrastThresholds, Polarity};
use evsplat::scene::Camera;
use evsplat::simulator::{simulate_events, SceneSpec};
use evsplat::trajectory::{read_poses, Interpolation, Trajectory};

fn main() -> evsplat::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let gt = SceneSpec::load(fixtures.join("scene.toml"))?.build()?;
    let camera = Camera::load(fixtures.join("camera.toml"))?;
    let knots = read_poses(fixtures.join("poses.csv"))?;
    let trajectory = Trajectory::new(&knots, Interpolation::Cubic)?;
    let interval = (trajectory.spline().start(), trajectory.spline().end());
    let seconds = (interval.1 - interval.0) as f64 * 1e-9;

    println!("threshold  frame rate  events  events/s   positive  undersampled");
    for (threshold, rate) in [(0.15, 1000.0), (0.25, 1000.0), (0.25, 4000.0), (0.4, 1000.0)] {
        let th = ContrastThresholds::symmetric(threshold)?;
        let sim = simulate_events(&gt, &trajectory, &camera, &th, rate, interval)?;
        let ev = sim.stream.events();
        let positive = ev.iter().filter(|e| e.p == Polarity::Positive).count();
        println!(
            "{threshold:9.2}  {rate:10.0}  {:6}  {:8.0}   {:7.1}%  {:12}",
            ev.len(),
            ev.len() as f64 / seconds,
            100.0 * positive as f64 / ev.len().max(1) as f64,
            sim.undersampled
        );
        if let (Some(out), 0.25, 1000.0) = (std::env::args().nth(1), threshold, rate) {
            write_events(&sim.stream, &out)?;
            println!("           wrote {out}");
        }
    }
    Ok(())
}
