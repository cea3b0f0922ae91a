use super::*;
use crate::scene::logit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianScene<f64> {
    let mut s = GaussianScene::new();
    for _ in 0..n {
        let mut q = [0.0; 4].map(|_: f64| rng.random_range(-1.0..1.0));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q = q.map(|v| v / norm);
        s.push_raw(
            [0.0; 3].map(|_: f64| rng.random_range(-0.4..0.4)),
            [0.0; 3].map(|_: f64| rng.random_range(0.05f64..0.25).ln()),
            q,
            logit(rng.random_range(0.1..0.6)),
            [0.0; 3].map(|_: f64| rng.random()),
        );
    }
    s
}

fn camera(rng: &mut ChaCha8Rng, size: usize) -> Camera {
    Camera::orbit(
        3.0,
        rng.random_range(-10.0..45.0),
        rng.random_range(0.0..360.0),
        50.0,
        size,
        size,
    )
    .with_background([rng.random(), rng.random(), rng.random()])
}

#[test]
fn empty_scene_is_background() {
    let cam = Camera::orbit(3.0, 0.0, 0.0, 50.0, 8, 6).with_background([0.2, 0.4, 0.6]);
    let out = render(&GaussianScene::<f32>::new(), &cam);
    assert_eq!(out.splat_count, 0);
    for y in 0..6 {
        for x in 0..8 {
            assert_eq!(out.image.pixel(x, y), [0.2, 0.4, 0.6]);
        }
    }
    assert!(out.alpha_map.iter().all(|&a| a == 0.0));
}

/// Camera looking down +z from the origin with a pixel center on the axis.
fn axis_camera() -> Camera {
    let mut cam = Camera::look_at(
        Vector3::zeros(),
        Vector3::new(0.0, 0.0, 1.0),
        60.0,
        9,
        9,
    );
    cam.cx = 4.5;
    cam.cy = 4.5;
    cam
}

#[test]
fn single_gaussian_peak_pixel() {
    let cam = axis_camera();
    let mut s = GaussianScene::<f64>::new();
    s.push_natural([0.0, 0.0, 2.0], [0.1; 3], [1.0, 0.0, 0.0, 0.0], 0.7, [0.2, 0.5, 1.0]);
    let out = render(&s, &cam);
    let px = out.image.pixel(4, 4);
    for ch in 0..3 {
        assert!((px[ch] - 0.7 * [0.2, 0.5, 1.0][ch]).abs() < 1e-12, "{px:?}");
    }
}

#[test]
fn two_coincident_splats_composite_front_to_back() {
    let cam = axis_camera();
    let mut s = GaussianScene::<f64>::new();
    // Listed back-first to exercise the depth sort.
    s.push_natural([0.0, 0.0, 3.0], [0.1; 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.0, 0.0, 1.0]);
    s.push_natural([0.0, 0.0, 2.0], [0.1; 3], [1.0, 0.0, 0.0, 0.0], 0.5, [1.0, 0.0, 0.0]);
    let out = render(&s, &cam);
    let px = out.image.pixel(4, 4);
    assert!((px[0] - 0.5).abs() < 1e-12);
    assert!(px[1].abs() < 1e-12);
    assert!((px[2] - 0.25).abs() < 1e-12);
    assert!((out.alpha_map[4 * 9 + 4] - 0.75).abs() < 1e-12);
}

#[test]
fn tiling_does_not_change_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = random_scene(&mut rng, 30);
    let cam = camera(&mut rng, 37);
    let tiled = Rasterizer::new(RenderSettings {
        tile_size: 8,
        ..Default::default()
    })
    .render(&s, &cam);
    let whole = Rasterizer::new(RenderSettings {
        tile_size: 64,
        ..Default::default()
    })
    .render(&s, &cam);
    for (a, b) in tiled.image.data.iter().zip(&whole.image.data) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn background_where_nothing_is_accumulated() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_scene(&mut rng, 3);
    let cam = camera(&mut rng, 48);
    let out = render(&s, &cam);
    let mut seen_empty = false;
    for (pix, &a) in out.alpha_map.iter().enumerate() {
        assert!((0.0..=1.0).contains(&a));
        if a == 0.0 {
            seen_empty = true;
            assert_eq!(&out.image.data[pix * 3..pix * 3 + 3], &cam.background);
        }
    }
    assert!(seen_empty);
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_scene(&mut rng, 5);
    let cam = camera(&mut rng, 16);
    let g = Rasterizer::default().render_backward(&s, &cam, &Image::new(16, 16));
    assert!(g.flatten().iter().all(|&v| v == 0.0));
}

#[test]
fn color_gradient_of_image_sum_is_alpha_sum() {
    let cam = axis_camera();
    let mut s = GaussianScene::<f64>::new();
    s.push_natural([0.1, 0.0, 2.0], [0.2, 0.1, 0.15], [0.9, 0.1, 0.3, 0.2], 0.6, [0.3, 0.3, 0.3]);
    let r = Rasterizer::default();
    let out = r.render(&s, &cam);
    let ones = Image::filled(9, 9, [1.0; 3]);
    let g = r.render_backward(&s, &cam, &ones);
    // A single splat's alpha equals the accumulated alpha map.
    let alpha_sum: f64 = out.alpha_map.iter().sum();
    for ch in 0..3 {
        assert!((g.colors[0][ch] - alpha_sum).abs() < 1e-10);
    }
}

#[test]
fn culled_primitives_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut s = random_scene(&mut rng, 3);
    let cam = camera(&mut rng, 16);
    // Put primitive 1 behind the camera.
    let behind = cam.eye() * 2.0;
    s.positions[1] = [behind.x, behind.y, behind.z];
    let up = Image::filled(16, 16, [1.0, -0.5, 0.25]);
    let g = Rasterizer::default().render_backward(&s, &cam, &up);
    assert!(!g.visible[1]);
    assert_eq!(g.positions[1], [0.0; 3]);
    assert_eq!(g.colors[1], [0.0; 3]);
    assert!(g.visible[0] && g.visible[2]);
}

/// Central-difference check of every parameter against the analytic pass.
#[test]
fn gradients_match_finite_differences() {
    let r = Rasterizer::new(RenderSettings::exact());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..3 {
        let scene = random_scene(&mut rng, 5);
        let cam = camera(&mut rng, 16);
        let mut weights = Image::new(16, 16);
        for v in &mut weights.data {
            *v = rng.random_range(-1.0..1.0);
        }
        let loss = |s: &GaussianScene<f64>| -> f64 {
            let img = r.render(s, &cam).image;
            img.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
        };
        let analytic = r.render_backward(&scene, &cam, &weights).flatten();
        let h = 1e-4;
        let n = scene.len();
        let mut k = 0;
        let check = |k: usize, perturb: &dyn Fn(&mut GaussianScene<f64>, f64)| {
            let mut a = scene.clone();
            let mut b = scene.clone();
            perturb(&mut a, h);
            perturb(&mut b, -h);
            let numeric = (loss(&a) - loss(&b)) / (2.0 * h);
            let err = (analytic[k] - numeric).abs();
            assert!(
                err <= 1e-6 || err <= 1e-3 * numeric.abs().max(analytic[k].abs()),
                "param {k}: analytic {} numeric {numeric}",
                analytic[k]
            );
        };
        for i in 0..n {
            for c in 0..3 {
                check(k, &|s, d| s.positions[i][c] += d);
                k += 1;
            }
        }
        for i in 0..n {
            for c in 0..3 {
                check(k, &|s, d| s.log_scales[i][c] += d);
                k += 1;
            }
        }
        for i in 0..n {
            for c in 0..4 {
                check(k, &|s, d| s.rotations[i][c] += d);
                k += 1;
            }
        }
        for i in 0..n {
            check(k, &|s, d| s.opacity_logits[i] += d);
            k += 1;
        }
        for i in 0..n {
            for c in 0..3 {
                check(k, &|s, d| s.colors[i][c] += d);
                k += 1;
            }
        }
    }
}

mod props {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn permutation_invariance(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_scene(&mut rng, n);
            let cam = camera(&mut rng, 20);
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut p = GaussianScene::new();
            for &i in &order {
                p.push_from(&s, i);
            }
            let a = render(&s, &cam);
            let b = render(&p, &cam);
            prop_assert_eq!(a.image, b.image);
        }

        #[test]
        fn opacity_monotonicity(seed in any::<u64>(), n in 1usize..6, bump in 0.01f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_scene(&mut rng, n);
            let cam = camera(&mut rng, 20);
            let i = rng.random_range(0..n);
            let mut t = s.clone();
            t.opacity_logits[i] += bump;
            let a = render(&s, &cam);
            let b = render(&t, &cam);
            for (x, y) in a.alpha_map.iter().zip(&b.alpha_map) {
                prop_assert!(y >= x, "{} < {}", y, x);
            }
        }

        #[test]
        fn color_superposition(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_scene(&mut rng, n);
            let mut cam = camera(&mut rng, 20);
            cam.background = [0.0; 3];
            let mut c1 = s.clone();
            let mut c2 = s.clone();
            let mut sum = s.clone();
            for i in 0..n {
                c1.colors[i] = [rng.random(), rng.random(), rng.random()];
                c2.colors[i] = [rng.random(), rng.random(), rng.random()];
                for ch in 0..3 {
                    sum.colors[i][ch] = c1.colors[i][ch] + c2.colors[i][ch];
                }
            }
            let a = render(&c1, &cam).image;
            let b = render(&c2, &cam).image;
            let ab = render(&sum, &cam).image;
            for k in 0..ab.data.len() {
                prop_assert!((ab.data[k] - a.data[k] - b.data[k]).abs() < 1e-6);
            }
        }
    }
}
