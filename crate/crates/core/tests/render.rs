//! Rasterizer and log-difference properties.

use evsplat::image::Image;
use evsplat::render::{
    log_image, rasterize, rasterize_backward, render_log_diff, RenderOptions, LOG_EPS,
};
use evsplat::scene::{sh::rgb_to_dc, Camera, GaussianCloud};
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(seed: u64, n: usize, channels: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::new(1, channels, [0.2, 0.4, 0.6]).unwrap();
    for _ in 0..n {
        let g = cloud.make_gaussian(
            Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(1.8..3.0),
            ),
            Vector3::from_fn(|_, _| rng.random_range(0.05..0.25)),
            UnitQuaternion::from_euler_angles(rng.random(), rng.random(), rng.random()),
            rng.random_range(0.2..0.9),
            [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)],
        );
        cloud.push(g).unwrap();
    }
    cloud
}

fn camera() -> Camera {
    Camera::new(36.0, 36.0, 15.5, 14.0, 32, 28).unwrap()
}

fn pose(x: f64, yaw: f64) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::new(x, 0.0, 0.0), UnitQuaternion::from_euler_angles(0.0, yaw, 0.0))
}

#[test]
fn zero_upstream_gradient_gives_zero_parameter_gradient() {
    let cloud = random_cloud(1, 12, 3);
    let cam = camera();
    let (_, state) = rasterize(&cloud, &cam, &pose(0.0, 0.0), &RenderOptions::default());
    let grad = rasterize_backward(&state, &Image::new(cam.width, cam.height, 3)).unwrap();
    assert!(grad.params.iter().all(|&g| g == 0.0));
}

#[test]
fn single_splat_single_pixel_gradient() {
    let cloud = random_cloud(2, 1, 3);
    let cam = camera();
    let view = pose(0.02, 0.01);
    let opts = RenderOptions::default();
    let (rendered, state) = rasterize(&cloud, &cam, &view, &opts);
    // the brightest-weighted pixel is surely covered
    let (q, _) = rendered
        .image
        .data
        .chunks_exact(3)
        .enumerate()
        .map(|(q, px)| (q, (px[0] - 0.2).abs()))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let mut upstream = Image::new(cam.width, cam.height, 3);
    upstream.data[q * 3] = 1.0;
    let grad = rasterize_backward(&state, &upstream).unwrap();
    let base = cloud.to_params();
    let h = 1e-5;
    for i in 0..base.len() {
        let at = |s: f64| {
            let mut c = cloud.clone();
            let mut p = base.clone();
            p[i] += s;
            c.set_params(&p);
            rasterize(&c, &cam, &view, &opts).0.image.data[q * 3]
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        let scale = numeric.abs().max(grad.params[i].abs());
        let err = (numeric - grad.params[i]).abs() / (scale + 1e-8);
        assert!(err < 1e-4, "slot {i}: analytic {} numeric {numeric}", grad.params[i]);
    }
}

#[test]
fn twenty_splat_directional_derivative() {
    let cloud = random_cloud(3, 20, 3);
    let cam = camera();
    let view = pose(-0.03, 0.02);
    let opts = RenderOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let upstream = Image::from_data(
        cam.width,
        cam.height,
        3,
        (0..cam.num_pixels() * 3).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let (_, state) = rasterize(&cloud, &cam, &view, &opts);
    let grad = rasterize_backward(&state, &upstream).unwrap();
    let base = cloud.to_params();
    for _ in 0..5 {
        let v: Vec<f64> = (0..base.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic: f64 = grad.params.iter().zip(&v).map(|(g, d)| g * d).sum();
        let loss = |s: f64| {
            let mut c = cloud.clone();
            c.set_params(&base.iter().zip(&v).map(|(p, d)| p + s * d).collect::<Vec<_>>());
            let img = rasterize(&c, &cam, &view, &opts).0.image;
            img.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let eps = 1e-6;
        let numeric = (loss(eps) - loss(-eps)) / (2.0 * eps);
        assert!(
            (analytic - numeric).abs() <= 1e-3 * analytic.abs().max(numeric.abs()),
            "analytic {analytic} numeric {numeric}"
        );
    }
}

#[test]
fn depth_order_decides_the_weights() {
    let mut cloud = GaussianCloud::new(0, 1, [0.0; 3]).unwrap();
    let cam = Camera::new(20.0, 20.0, 8.0, 8.0, 16, 16).unwrap();
    // wide flat splats, so each covers the center pixel with α = 0.5
    for (z, color) in [(2.0, 1.0), (3.0, 0.0)] {
        let mut g = cloud.make_gaussian(
            Vector3::new(0.0, 0.0, z),
            Vector3::new(50.0, 50.0, 0.01),
            UnitQuaternion::identity(),
            0.5,
            [color; 3],
        );
        g.sh[0] = rgb_to_dc(color);
        cloud.push(g).unwrap();
    }
    let opts = RenderOptions::default();
    let at_center = |c: &GaussianCloud| rasterize(c, &cam, &Isometry3::identity(), &opts).0.image.get(8, 8, 0);
    let front_white = at_center(&cloud);
    cloud.gaussians[0].mean.z = 4.0;
    let front_black = at_center(&cloud);
    assert!((front_white - 0.5).abs() < 1e-3, "{front_white}");
    assert!((front_black - 0.25).abs() < 1e-3, "{front_black}");
}

#[test]
fn weights_and_transmittance_sum_to_one() {
    let mut cloud = random_cloud(4, 25, 3);
    cloud.background = [1.0; 3];
    for g in &mut cloud.gaussians {
        g.sh.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..3 {
            g.sh[c] = rgb_to_dc(1.0);
        }
    }
    let (r, _) = rasterize(&cloud, &camera(), &pose(0.0, 0.0), &RenderOptions::default());
    for v in &r.image.data {
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }
}

#[test]
fn forward_is_independent_of_thread_count() {
    let cloud = random_cloud(5, 40, 3);
    let cam = camera();
    let render = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| rasterize(&cloud, &cam, &pose(0.01, 0.0), &RenderOptions::default()).0.image)
    };
    let one = render(1);
    for threads in [2, 3, 7] {
        assert_eq!(render(threads).data, one.data);
    }
}

#[test]
fn log_image_formula_and_floor() {
    let img = Image::from_data(2, 1, 1, vec![1.0, 0.0]).unwrap();
    let l = log_image(&img, LOG_EPS);
    assert_eq!(l.data[0], (1.0 + LOG_EPS).ln());
    assert_eq!(l.data[1], LOG_EPS.ln());
}

#[test]
fn identical_poses_give_an_exactly_zero_difference() {
    let cloud = random_cloud(6, 15, 1);
    let p = pose(0.03, -0.02);
    let d = render_log_diff(&cloud, &camera(), &p, &p, &RenderOptions::default()).unwrap();
    assert!(d.prediction.data.iter().all(|&v| v == 0.0));
}

#[test]
fn swapping_poses_negates_the_difference() {
    let cloud = random_cloud(7, 15, 1);
    let (a, b) = (pose(0.0, 0.0), pose(0.05, 0.03));
    let opts = RenderOptions::default();
    let ab = render_log_diff(&cloud, &camera(), &a, &b, &opts).unwrap().prediction;
    let ba = render_log_diff(&cloud, &camera(), &b, &a, &opts).unwrap().prediction;
    for (x, y) in ab.data.iter().zip(&ba.data) {
        assert_eq!(*x, -*y);
    }
}

#[test]
fn global_gain_cancels_in_the_difference() {
    let cloud = random_cloud(8, 15, 1);
    let mut brighter = cloud.clone();
    let k = 3.0;
    brighter.background = cloud.background.map(|b| b * k);
    for g in &mut brighter.gaussians {
        // the constant 0.5 color offset scales too
        g.sh[0] = rgb_to_dc(k * (evsplat::scene::sh::dc_to_rgb(g.sh[0])));
        g.sh[1..].iter_mut().for_each(|v| *v *= k);
    }
    let (a, b) = (pose(0.0, 0.0), pose(0.04, 0.02));
    let opts = RenderOptions::default();
    let base = render_log_diff(&cloud, &camera(), &a, &b, &opts).unwrap().prediction;
    let scaled = render_log_diff(&brighter, &camera(), &a, &b, &opts).unwrap().prediction;
    for (x, y) in base.data.iter().zip(&scaled.data) {
        assert!((x - y).abs() < 1e-3, "{x} vs {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn rendering_is_finite_and_bounded_by_colors(seed in 0u64..10_000, n in 1usize..30) {
        let cloud = random_cloud(seed, n, 3);
        let (r, _) = rasterize(&cloud, &camera(), &pose(0.0, 0.0), &RenderOptions::default());
        for v in &r.image.data {
            prop_assert!(v.is_finite() && *v >= 0.0 && *v <= 1.0 + 1e-9);
        }
    }
}
