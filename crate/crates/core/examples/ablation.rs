//! Guided versus random initialization, and cubic versus linear pose
//! interpolation on a sparsified trajectory, over several seeds.
//!
//! `cargo run --release --example ablation -- [iterations] [seeds]`

use evsplat::closed_loop::ClosedLoopSetup;
use evsplat::trainer::TrainConfig;

fn main() -> evsplat::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(1000, |s| s.parse().expect("iterations"));
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let cl = ClosedLoopSetup::default().build()?;
    let cfg = TrainConfig::desk_with(iterations);
    println!("seed  guided  random  cubic  linear   (PSNR dB, {iterations} iterations)");
    for seed in 0..seeds {
        let (guided, random) = cl.compare_init(2000, seed, &cfg)?;
        let (cubic, linear) = cl.compare_interpolation(4, 2000, seed, &cfg)?;
        println!("{seed:>4}  {guided:6.2}  {random:6.2}  {cubic:5.2}  {linear:6.2}");
    }
    Ok(())
}
