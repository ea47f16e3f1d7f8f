//! Fits a cubic pose spline to a sparse orbit and compares it with
//! piecewise-linear interpolation against the dense ground truth.
//!
//! `cargo run --example spline_poses`

use evsplat::pipeline::{resample_poses, Resampling};
use evsplat::simulator::wavy_orbit;
use evsplat::trajectory::{Interpolation, Trajectory};

fn main() -> evsplat::Result<()> {
    let duration = 4_000_000_000;
    let dense = wavy_orbit(241, 3.0, 0.8, 0.5, 3, 0, duration)?;
    let truth = Trajectory::new(&dense, Interpolation::Cubic)?;

    println!("knots  cubic mean/max pos err (m)   linear mean/max pos err (m)   cubic/linear max rot err (deg)");
    for every in [40, 20, 10, 5] {
        let sparse: Vec<_> = dense.iter().step_by(every).cloned().collect();
        let cubic = Trajectory::new(&sparse, Interpolation::Cubic)?;
        let linear = Trajectory::new(&sparse, Interpolation::Linear)?;
        let (mut c_pos, mut l_pos, mut c_rot, mut l_rot) = (Vec::new(), Vec::new(), 0.0f64, 0.0f64);
        for k in 0..=400 {
            let t = duration * k / 400;
            let want = truth.pose_at(t)?;
            let (c, l) = (cubic.pose_at(t)?, linear.pose_at(t)?);
            c_pos.push((c.translation.vector - want.translation.vector).norm());
            l_pos.push((l.translation.vector - want.translation.vector).norm());
            c_rot = c_rot.max(c.rotation.angle_to(&want.rotation).to_degrees());
            l_rot = l_rot.max(l.rotation.angle_to(&want.rotation).to_degrees());
        }
        let stats = |v: &[f64]| (v.iter().sum::<f64>() / v.len() as f64, v.iter().cloned().fold(0.0, f64::max));
        let ((cm, cx), (lm, lx)) = (stats(&c_pos), stats(&l_pos));
        println!(
            "{:5}  {cm:.2e} / {cx:.2e}           {lm:.2e} / {lx:.2e}            {c_rot:.3} / {l_rot:.3}",
            sparse.len()
        );
    }

    let resampled = resample_poses(&dense[..25], Interpolation::Cubic, Resampling::Rate(30.0))?;
    println!("\nresampled the first 0.4 s at 30 Hz: {} poses", resampled.len());
    for p in resampled.iter().take(4) {
        let t = p.translation;
        println!("  t = {:>10} ns  position ({:+.4}, {:+.4}, {:+.4})", p.t, t.x, t.y, t.z);
    }
    Ok(())
}
