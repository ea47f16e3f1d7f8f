//! Trains on a small simulated scene, checkpoints halfway, resumes from
//! the file, and confirms the result matches an uninterrupted run.
//!
//! `cargo run --release --example train_checkpoint`

use evsplat::checkpoint;
use evsplat::closed_loop::ClosedLoopSetup;
use evsplat::trainer::{TrainConfig, TrainState, Trainer};

fn main() -> evsplat::Result<()> {
    let cl = ClosedLoopSetup {
        width: 48,
        height: 48,
        knots: 30,
        duration_ns: 3_000_000_000,
        held_out_views: 4,
        ..Default::default()
    }
    .build()?;
    println!("{} events from {} ground-truth Gaussians", cl.stream.len(), cl.gt.len());
    let cfg = TrainConfig {
        seed: 1,
        ..TrainConfig::desk_with(400)
    };
    let init = cl.random_init(1000, 2, 0)?;

    let mut first = Trainer::new(&cl.stream, &cl.trajectory, &cl.camera, cfg.clone(), TrainState::new(init.clone(), &cfg)?)?;
    first.run(Some(200))?;
    let dir = std::env::temp_dir().join("evsplat_train_checkpoint");
    std::fs::create_dir_all(&dir).map_err(|source| evsplat::Error::Io { path: dir.clone(), source })?;
    let path = dir.join("half.evs");
    checkpoint::save(first.state(), &path)?;
    println!("saved iteration {} to {}", first.state().iteration, path.display());

    let mut resumed = Trainer::new(&cl.stream, &cl.trajectory, &cl.camera, cfg.clone(), checkpoint::load(&path)?)?;
    resumed.run(None)?;

    let mut straight = Trainer::new(&cl.stream, &cl.trajectory, &cl.camera, cfg.clone(), TrainState::new(init, &cfg)?)?;
    straight.run(None)?;

    let same = checkpoint::encode(resumed.state()) == checkpoint::encode(straight.state());
    println!("resumed and uninterrupted runs identical: {same}");
    let report = cl.evaluate(&resumed.state().cloud)?;
    println!(
        "{} Gaussians, held-out PSNR {:.2} dB, SSIM {:.4}",
        resumed.state().cloud.len(),
        report.mean_psnr_db,
        report.mean_ssim
    );
    Ok(())
}
