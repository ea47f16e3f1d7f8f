//! Finite-difference checks of the analytic backward passes.

use evsplat::image::Image;
use evsplat::render::{rasterize, rasterize_backward, render_log_diff, log_diff_backward, RenderOptions};
use evsplat::scene::{BayerPattern, Camera, GaussianCloud};
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, degree: usize, channels: usize) -> GaussianCloud {
    let mut cloud = GaussianCloud::new(degree, channels, [0.3, 0.5, 0.7]).unwrap();
    for _ in 0..n {
        let mut g = cloud.make_gaussian(
            Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(1.6..2.6),
            ),
            Vector3::new(
                rng.random_range(0.05..0.2),
                rng.random_range(0.05..0.2),
                rng.random_range(0.05..0.2),
            ),
            UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            ),
            rng.random_range(0.2..0.8),
            [rng.random(), rng.random(), rng.random()],
        );
        // non-unit quaternion exercises the normalization path
        g.rotation *= rng.random_range(0.7..1.4);
        for v in g.sh.iter_mut().skip(channels) {
            *v = rng.random_range(-0.2..0.2);
        }
        cloud.push(g).unwrap();
    }
    cloud
}

fn weights(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    Image::from_data(w, h, c, (0..w * h * c).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap()
}

fn dot(a: &Image, b: &Image) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

/// Compares every analytic component against a central difference.
fn check(
    cloud: &GaussianCloud,
    analytic: &[f64],
    loss: impl Fn(&GaussianCloud) -> f64,
    tol: f64,
) {
    let base = cloud.to_params();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..base.len() {
        let mut c = cloud.clone();
        let mut p = base.clone();
        p[i] += h;
        c.set_params(&p);
        let up = loss(&c);
        p[i] -= 2.0 * h;
        c.set_params(&p);
        let down = loss(&c);
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / (numeric.abs().max(analytic[i].abs()) + 1e-3 * scale);
        worst = worst.max(err);
        assert!(
            err < tol,
            "param {i} (gaussian {}, slot {}): analytic {} numeric {numeric}",
            i / cloud.layout().stride(),
            i % cloud.layout().stride(),
            analytic[i]
        );
    }
    assert!(worst.is_finite());
}

#[test]
fn rasterizer_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cam = Camera::new(30.0, 32.0, 11.5, 10.0, 24, 21).unwrap();
    let pose = Isometry3::from_parts(
        Translation3::new(0.05, -0.02, 0.1),
        UnitQuaternion::from_euler_angles(0.03, -0.05, 0.02),
    );
    let opts = RenderOptions::default();
    for (degree, channels) in [(0, 1), (1, 3), (3, 3)] {
        let cloud = random_cloud(&mut rng, 6, degree, channels);
        let w = weights(&mut rng, cam.width, cam.height, channels);
        let (_, state) = rasterize(&cloud, &cam, &pose, &opts);
        let grad = rasterize_backward(&state, &w).unwrap();
        assert!(grad.visible.iter().filter(|&&v| v).count() >= 4);
        let loss = |c: &GaussianCloud| dot(&rasterize(c, &cam, &pose, &opts).0.image, &w);
        check(&cloud, &grad.params, loss, 1e-4);
    }
}

#[test]
fn log_difference_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cam = Camera::new(30.0, 30.0, 10.0, 9.0, 20, 18)
        .unwrap()
        .with_bayer(BayerPattern::Rggb);
    let start = Isometry3::from_parts(Translation3::new(-0.03, 0.0, 0.0), UnitQuaternion::identity());
    let end = Isometry3::from_parts(
        Translation3::new(0.04, 0.01, 0.02),
        UnitQuaternion::from_euler_angles(0.0, 0.04, 0.0),
    );
    let opts = RenderOptions::default();
    let cloud = random_cloud(&mut rng, 5, 1, 3);
    let w = weights(&mut rng, cam.width, cam.height, 1);
    let diff = render_log_diff(&cloud, &cam, &start, &end, &opts).unwrap();
    let grad = log_diff_backward(&diff, &cam, &w).unwrap();
    let loss = |c: &GaussianCloud| {
        dot(&render_log_diff(c, &cam, &start, &end, &opts).unwrap().prediction, &w)
    };
    check(&cloud, &grad.params, loss, 1e-4);
}
