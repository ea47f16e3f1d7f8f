use std::time::Instant;

use evsplat::closed_loop::ClosedLoopSetup;
use evsplat::trainer::{TrainConfig, TrainState, Trainer};

fn main() -> evsplat::Result<()> {
    let t = Instant::now();
    let cl = ClosedLoopSetup::default().build()?;
    println!("{} events in {:.1?}", cl.stream.len(), t.elapsed());
    let mut cfg = TrainConfig::desk();
    cfg.iterations = std::env::args().nth(1).map_or(3000, |s| s.parse().unwrap());
    let init = cl.random_init(2000, 1, 0)?;
    println!("untrained: {}", cl.evaluate(&init)?.summary().lines().last().unwrap());
    println!("ground truth: {}", cl.evaluate(&cl.gt)?.summary().lines().last().unwrap());

    let t = Instant::now();
    let state = TrainState::new(init, &cfg)?;
    let mut trainer = Trainer::new(&cl.stream, &cl.trajectory, &cl.camera, cfg.clone(), state)?;
    while !trainer.is_done() {
        let row = trainer.step()?;
        if row.iter % 250 == 0 {
            println!("{}  ({:.1?})", row.to_csv(), t.elapsed());
        }
    }
    let report = cl.evaluate(&trainer.state().cloud)?;
    print!("{}", report.summary());
    Ok(())
}
