//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use gauss_distill::annealing::{BoundsPreset, NoiseBoundSchedule};
use gauss_distill::camera::Camera;
use gauss_distill::config::RunConfig;
use gauss_distill::density::EventKind;
use gauss_distill::diffusion::{
    add_noise, denoise_one_step, l2_reparam_gradient, sds_gradient, NoiseSchedule, SdsWeights,
};
use gauss_distill::guidance::testserver::{Reply, TestServer};
use gauss_distill::guidance::wire::{self, MAGIC};
use gauss_distill::guidance::{
    Capabilities, GuidanceError, GuidanceProvider, GuidanceRequest, GuidanceResponse, GuidanceSpace,
    NullProvider, RemoteConfig, RemoteProvider, PROTOCOL,
};
use gauss_distill::image::Image;
use gauss_distill::rasterizer::{Rasterizer, RenderSettings};
use gauss_distill::scene::{logit, GaussianScene};
use gauss_distill::trainer::checkpoint;
use gauss_distill::trainer::{RunOutput, StageSetup, TrainState, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Reference run reached 50.68 dB; frozen one decibel below.
const ORACLE_PSNR_THRESHOLD_DB: f64 = 49.6;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Independent linear-β schedule: `ᾱ_t = Π_{s≤t} (1 − β_s)`.
fn reference_alpha_bar(t: usize) -> f64 {
    let (b0, b1, n) = (8.5e-4, 1.2e-2, 1000.0);
    (1..=t)
        .map(|s| 1.0 - (b0 + (b1 - b0) * (s as f64 - 1.0) / (n - 1.0)))
        .product()
}

fn sds_l2_equivalence() -> Outcome {
    let started = Instant::now();
    let schedule = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5d5);
    let mut worst: f64 = 0.0;
    let tuples = 10_000;
    for k in 0..tuples {
        let len = rng.random_range(1..=64);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let eps_hat: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let t = rng.random_range(1..=1000);
        let weights = if k % 2 == 0 { SdsWeights::ConstantOne } else { SdsWeights::OneMinusAlphaBar };
        let level = schedule.level(t).map_err(|e| e.to_string())?;
        let ab = reference_alpha_bar(t);
        ensure((level.alpha_bar - ab).abs() <= 1e-12 * ab, || {
            format!("alpha_bar({t}) = {}, reference {ab}", level.alpha_bar)
        })?;
        let x_t = add_noise(&x, &eps, level);
        let x_hat = denoise_one_step(&x_t, &eps_hat, level).map_err(|e| e.to_string())?;
        let a = sds_gradient(&eps_hat, &eps, level, weights);
        let b = l2_reparam_gradient(&x, &x_hat, level, weights).map_err(|e| e.to_string())?;
        let w = match weights {
            SdsWeights::ConstantOne => 1.0,
            SdsWeights::OneMinusAlphaBar => 1.0 - ab,
        };
        for j in 0..len {
            let expected = w * (eps_hat[j] - eps[j]);
            ensure((a[j] - expected).abs() <= 1e-12, || format!("sds gradient off at t={t}"))?;
            worst = worst.max((a[j] - b[j]).abs());
        }
    }
    let elapsed = started.elapsed();
    ensure(worst < 1e-9, || format!("max |sds - l2| = {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{tuples} tuples, max |sds - l2| = {worst:.2e}, {elapsed:.2?}"))
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianScene<f64> {
    let mut s = GaussianScene::new();
    for _ in 0..n {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        s.push_raw(
            std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
            std::array::from_fn(|_| rng.random_range(0.06f64..0.3).ln()),
            q.map(|v| v / norm),
            logit(rng.random_range(0.05..0.6)),
            std::array::from_fn(|_| rng.random()),
        );
    }
    s
}

fn rasterizer_gradient_check() -> Outcome {
    let started = Instant::now();
    let r = Rasterizer::new(RenderSettings::exact());
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-5;
    let mut checked = 0usize;
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut nontrivial = 0usize;
    for scene_idx in 0..20 {
        let n = rng.random_range(1..=8);
        let scene = random_scene(&mut rng, n);
        let cam = Camera::orbit(
            rng.random_range(2.5..3.5),
            rng.random_range(-10.0..45.0),
            rng.random_range(0.0..360.0),
            rng.random_range(40.0..60.0),
            16,
            16,
        )
        .with_background([rng.random(), rng.random(), rng.random()]);
        let mut upstream = Image::new(16, 16);
        for v in &mut upstream.data {
            *v = rng.random_range(-1.0..1.0);
        }
        let loss = |s: &GaussianScene<f64>| -> f64 {
            let img = r.render(s, &cam).image;
            img.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
        };
        let analytic = r.render_backward(&scene, &cam, &upstream).flatten();
        // Parameter order matches `SceneGradients::flatten`.
        let mut params: Vec<Box<dyn Fn(&mut GaussianScene<f64>) -> &mut f64>> = Vec::new();
        for i in 0..n {
            for c in 0..3 {
                params.push(Box::new(move |s| &mut s.positions[i][c]));
            }
        }
        for i in 0..n {
            for c in 0..3 {
                params.push(Box::new(move |s| &mut s.log_scales[i][c]));
            }
        }
        for i in 0..n {
            for c in 0..4 {
                params.push(Box::new(move |s| &mut s.rotations[i][c]));
            }
        }
        for i in 0..n {
            params.push(Box::new(move |s| &mut s.opacity_logits[i]));
        }
        for i in 0..n {
            for c in 0..3 {
                params.push(Box::new(move |s| &mut s.colors[i][c]));
            }
        }
        ensure(params.len() == analytic.len(), || "parameter count mismatch".into())?;
        for (k, get) in params.iter().enumerate() {
            let mut plus = scene.clone();
            *get(&mut plus) += h;
            let mut minus = scene.clone();
            *get(&mut minus) -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let err = (analytic[k] - numeric).abs();
            let scale = numeric.abs().max(analytic[k].abs());
            ensure(err <= 1e-6 || err <= 1e-3 * scale, || {
                format!("scene {scene_idx}, parameter {k}: analytic {} vs numeric {numeric}", analytic[k])
            })?;
            if err > 1e-6 {
                worst_rel = worst_rel.max(err / scale);
            }
            worst_abs = worst_abs.max(err);
            if scale > 1e-4 {
                nontrivial += 1;
            }
            checked += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    ensure(2 * nontrivial >= checked, || {
        format!("only {nontrivial} of {checked} gradients exceed 1e-4; scenes barely cover the image")
    })?;
    Ok(format!(
        "20 scenes, {checked} parameters ({nontrivial} with |grad| > 1e-4), max abs error {worst_abs:.1e}, max rel error above 1e-6 abs {worst_rel:.1e}, {elapsed:.2?}"
    ))
}

fn oracle_config(extra: &[&str]) -> RunConfig {
    let mut o: Vec<String> = [
        "guidance.kind=\"oracle\"",
        "trainer.background=[0.0, 0.0, 0.0]",
        "trainer.stage1.resolution=64",
        "trainer.stage1.iterations=3000",
        "trainer.stage2.enabled=false",
        "scene.n_points=500",
        "guidance.oracle.train_views=16",
        "guidance.oracle.held_out_views=4",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::with_overrides(&o).expect("valid oracle config")
}

fn oracle_convergence() -> Outcome {
    let started = Instant::now();
    let config = oracle_config(&[]);
    let mut trainer = Trainer::new(config.clone()).map_err(|e| e.to_string())?;
    let setup = trainer.setup_stage(1).map_err(|e| e.to_string())?;
    let mut state = TrainState::new(&config).map_err(|e| e.to_string())?;
    let initial = trainer.evaluate(&state, &setup.held_out).ok_or("no held-out views")?;
    let summary = trainer.run_stage(&mut state, &setup).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let final_psnr = trainer.evaluate(&state, &setup.held_out).ok_or("no held-out views")?;
    ensure(summary.iterations == 3000 && state.iteration == 3000, || "wrong iteration count".into())?;
    ensure(final_psnr > ORACLE_PSNR_THRESHOLD_DB && final_psnr > 25.0, || {
        format!("mean held-out PSNR {final_psnr:.2} dB (initial {initial:.2} dB)")
    })?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "held-out PSNR {initial:.2} -> {final_psnr:.2} dB (threshold {ORACLE_PSNR_THRESHOLD_DB}), N={}, {elapsed:.1?}",
        state.scene.len()
    ))
}

fn density_schedule_trace() -> Outcome {
    let started = Instant::now();
    let config = RunConfig::with_overrides(&["guidance.kind=\"null\"".into(), "trainer.stage2.enabled=false".into()])
        .map_err(|e| e.to_string())?;
    let total = config.trainer.stage1.iterations;
    ensure(total == 15000, || format!("default stage 1 length is {total}"))?;
    let mut trainer = Trainer::new(config.clone()).map_err(|e| e.to_string())?;
    let setup = StageSetup::orbit(&config, 1, Box::new(NullProvider { resolutions: vec![64] }));
    let mut state = TrainState::new(&config).map_err(|e| e.to_string())?;
    let mut densify = Vec::new();
    let mut prune = Vec::new();
    let mut reset = Vec::new();
    let mut late_changes = 0;
    for i in 0..total {
        let n_before = state.scene.len();
        let report = trainer.train_step(&mut state, &setup).map_err(|e| e.to_string())?;
        for e in &report.events {
            ensure(e.iteration == i, || format!("event at {} reported in step {i}", e.iteration))?;
            match e.kind {
                EventKind::Densify => densify.push(i),
                EventKind::Prune => prune.push(i),
                EventKind::Reset => {
                    reset.push(i);
                    let max = (0..state.scene.len()).map(|k| state.scene.opacity(k)).fold(0.0, f64::max);
                    ensure(max <= 0.005, || format!("max opacity {max} after reset"))?;
                }
            }
        }
        if i >= 12000 && (!report.events.is_empty() || state.scene.len() != n_before) {
            late_changes += 1;
        }
    }
    let expected: Vec<usize> = (100..12000).step_by(500).collect();
    ensure(expected.first() == Some(&100) && expected.last() == Some(&11600), || "bad reference".into())?;
    ensure(densify == expected, || format!("densify at {densify:?}"))?;
    ensure(prune == expected, || format!("prune at {prune:?}"))?;
    ensure(reset == vec![1000], || format!("reset at {reset:?}"))?;
    ensure(late_changes == 0, || format!("{late_changes} topology events in [12000, 15000)"))?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} densify at 100..11600 step 500, reset at 1000, none in [12000, 15000), {elapsed:.1?}",
        densify.len()
    ))
}

/// Independent piecewise-linear interpolation of `(p, lo, hi)` breakpoints.
fn reference_bounds(points: &[[f64; 3]], p: f64) -> (f64, f64) {
    for w in points.windows(2) {
        let ([p0, l0, h0], [p1, l1, h1]) = (w[0], w[1]);
        if p <= p1 {
            let s = (p - p0) / (p1 - p0);
            return (l0 + s * (l1 - l0), h0 + s * (h1 - h0));
        }
    }
    let [_, l, h] = points[points.len() - 1];
    (l, h)
}

fn noise_annealing() -> Outcome {
    let schedule = NoiseBoundSchedule::default();
    let points = [[0.0, 0.02, 0.98], [0.3, 0.02, 0.98], [1.0, 0.02, 0.5]];
    let total = 15000;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let samples = 1_000_000usize;
    for k in 0..samples {
        let i = k * total / samples;
        let u = schedule.sample(i, total, &mut rng);
        let (lo, hi) = reference_bounds(&points, i as f64 / total as f64);
        ensure(u >= lo - 1e-12 && u <= hi + 1e-12 && u > 0.0 && u < 1.0, || {
            format!("u={u} outside [{lo}, {hi}] at iteration {i}")
        })?;
    }
    let mut prev = f64::INFINITY;
    for i in 0..=total {
        let (lo, hi) = schedule.bounds_at(i, total);
        let (rlo, rhi) = reference_bounds(&points, i as f64 / total as f64);
        ensure((lo - rlo).abs() < 1e-12 && (hi - rhi).abs() < 1e-12, || format!("bounds at {i}"))?;
        ensure(hi - lo <= prev, || format!("width grows at iteration {i}"))?;
        prev = hi - lo;
    }
    let expected = [
        (BoundsPreset::FixedLow, 0.02, 0.25),
        (BoundsPreset::FixedMid, 0.25, 0.5),
        (BoundsPreset::FixedHigh, 0.5, 0.98),
        (BoundsPreset::FixedWide, 0.02, 0.98),
    ];
    for (preset, lo, hi) in expected {
        let config = RunConfig::with_overrides(&[format!("trainer.stage1.noise_bounds=\"{}\"", preset.name())])
            .map_err(|e| e.to_string())?;
        let s = config.trainer.stage1.noise_bounds.schedule();
        let n = 100_000;
        let mut sum = 0.0;
        for k in 0..n {
            let i = k % total;
            let u = s.sample(i, total, &mut rng);
            ensure(u >= lo && u <= hi, || format!("{}: u={u}", preset.name()))?;
            ensure(s.bounds_at(i, total) == (lo, hi), || format!("{} is not constant", preset.name()))?;
            sum += u;
        }
        let mean = sum / n as f64;
        let sd = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
        ensure((mean - 0.5 * (lo + hi)).abs() < 4.0 * sd, || format!("{}: mean {mean}", preset.name()))?;
    }
    Ok(format!("{samples} samples in bounds, width non-increasing, 4 constant presets"))
}

fn run_oracle(config: &RunConfig, iterations: usize) -> Result<TrainState, String> {
    let mut trainer = Trainer::new(config.clone()).map_err(|e| e.to_string())?;
    let setup = trainer.setup_stage(1).map_err(|e| e.to_string())?;
    let mut state = TrainState::new(config).map_err(|e| e.to_string())?;
    for _ in 0..iterations {
        trainer.train_step(&mut state, &setup).map_err(|e| e.to_string())?;
    }
    Ok(state)
}

fn scene_bits(s: &GaussianScene<f32>) -> Vec<u32> {
    let mut out = Vec::new();
    for i in 0..s.len() {
        out.extend(s.positions[i].iter().map(|v| v.to_bits()));
        out.extend(s.log_scales[i].iter().map(|v| v.to_bits()));
        out.extend(s.rotations[i].iter().map(|v| v.to_bits()));
        out.push(s.opacity_logits[i].to_bits());
        out.extend(s.colors[i].iter().map(|v| v.to_bits()));
    }
    out
}

fn determinism_and_resume() -> Outcome {
    let started = Instant::now();
    let config = oracle_config(&["trainer.stage1.iterations=1200", "trainer.checkpoint_every=500", "trainer.visualize_every=0"]);
    let a = run_oracle(&config, 100)?;
    let b = run_oracle(&config, 100)?;
    ensure(scene_bits(&a.scene) == scene_bits(&b.scene), || "scenes differ at iteration 100".into())?;
    ensure(a == b, || "optimizer or RNG state differs at iteration 100".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let uninterrupted = {
        let out = RunOutput::open(dir.path().join("full")).map_err(|e| e.to_string())?;
        let mut trainer = Trainer::new(config.clone()).map_err(|e| e.to_string())?.with_output(out);
        let setup = trainer.setup_stage(1).map_err(|e| e.to_string())?;
        let mut state = TrainState::new(&config).map_err(|e| e.to_string())?;
        trainer.run_stage(&mut state, &setup).map_err(|e| e.to_string())?;
        state
    };
    let ckpt = dir.path().join("full/checkpoints").join(checkpoint::checkpoint_name(1, 500));
    let (stored, mut resumed) = checkpoint::load(&ckpt).map_err(|e| e.to_string())?;
    ensure(stored == config, || "stored configuration differs".into())?;
    ensure(resumed.iteration == 500, || format!("checkpoint at {}", resumed.iteration))?;
    let out = RunOutput::open(dir.path().join("resumed")).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(stored).map_err(|e| e.to_string())?.with_output(out);
    let setup = trainer.setup_stage(1).map_err(|e| e.to_string())?;
    trainer.run_stage(&mut resumed, &setup).map_err(|e| e.to_string())?;
    ensure(scene_bits(&resumed.scene) == scene_bits(&uninterrupted.scene), || {
        "resumed scene differs from the uninterrupted run".into()
    })?;
    ensure(resumed == uninterrupted, || "resumed optimizer or RNG state differs".into())?;
    Ok(format!(
        "two runs bit-identical at iteration 100; resume from 500 matches at 1200 (N={}), {:.1?}",
        uninterrupted.scene.len(),
        started.elapsed()
    ))
}

fn fuzz_request() -> GuidanceRequest {
    GuidanceRequest {
        image: Image::filled(8, 8, [0.25, 0.5, 0.75]),
        noise_fraction: 0.5,
        seed: 9,
        prompt: "fuzz".into(),
        guidance_scale: 20.0,
        space: GuidanceSpace::Image,
        view_id: None,
    }
}

fn fuzz_cases(rng: &mut ChaCha8Rng) -> Vec<Reply> {
    let good = wire::encode_response(&GuidanceResponse {
        grad_image: Image::filled(8, 8, [0.5, -0.5, 0.125]),
        x_hat_preview: Some(Image::filled(8, 8, [0.5; 3])),
    });
    let mut cases = Vec::new();
    // Every truncation of a valid body.
    for len in (0..good.len()).step_by(7) {
        cases.push(Reply::binary(good[..len].to_vec()));
    }
    // Oversized: trailing bytes, giant declared header, giant shapes.
    let mut long = good.clone();
    long.extend_from_slice(&[0u8; 64]);
    cases.push(Reply::binary(long));
    let mut huge_header = good.clone();
    huge_header[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    cases.push(Reply::binary(huge_header));
    for header in [
        r#"{"h":8,"w":8,"has_preview":true,"extra":1}"#.to_string(),
        r#"{"h":4294967296,"w":4294967296,"has_preview":false}"#.to_string(),
        r#"{"h":8,"w":9,"has_preview":false}"#.to_string(),
        r#"{"h":-1,"w":8,"has_preview":false}"#.to_string(),
        r#"{"h":8,"w":8}"#.to_string(),
        "[]".to_string(),
        "{".to_string(),
    ] {
        let mut body = MAGIC.to_vec();
        body.extend_from_slice(&(header.len() as u32).to_le_bytes());
        body.extend_from_slice(header.as_bytes());
        body.extend_from_slice(&vec![0u8; 8 * 8 * 3 * 4]);
        cases.push(Reply::binary(body));
    }
    cases.push(Reply::binary(vec![0u8; 4 << 20]));
    // Non-finite gradient.
    let mut nan = good.clone();
    let at = good.len() - 2 * 8 * 8 * 3 * 4;
    nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    cases.push(Reply::binary(nan));
    // Random garbage, with and without the magic prefix.
    for k in 0..100 {
        let len = rng.random_range(0..2048);
        let mut body: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        if k % 2 == 0 && body.len() >= 12 {
            body[..8].copy_from_slice(MAGIC);
        }
        cases.push(Reply::binary(body));
    }
    // Random single-byte corruptions of a valid body.
    for _ in 0..100 {
        let mut body = good.clone();
        let at = rng.random_range(0..body.len().min(80));
        body[at] ^= rng.random_range(1..=255u8);
        cases.push(Reply::binary(body));
    }
    // HTTP-level failures.
    for status in [400, 404, 422, 500, 503] {
        cases.push(Reply::text(status, "nope"));
    }
    cases.push(Reply::Close);
    cases.push(Reply::Hang(Duration::from_millis(600)));
    cases.push(Reply::Raw(b"HTTP/1.1 200 OK\r\nContent-Length: 99999\r\n\r\nshort".to_vec()));
    cases.push(Reply::Raw(b"garbage\r\n\r\n".to_vec()));
    cases.push(Reply::Raw(b"HTTP/1.1 200 OK\r\nContent-Length: nope\r\n\r\n".to_vec()));
    cases
}

fn remote_protocol_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let cases = Arc::new(fuzz_cases(&mut rng));
    let index = Arc::new(AtomicUsize::new(0));
    let caps = Capabilities {
        protocol: PROTOCOL.into(),
        space: vec![GuidanceSpace::Image],
        resolution: vec![8],
        preview: true,
    };
    let handler = {
        let (cases, index) = (cases.clone(), index.clone());
        Arc::new(move |req: &gauss_distill::guidance::testserver::HttpRequest| {
            if req.path == "/v1/health" {
                return Reply::json(200, &caps);
            }
            cases[index.load(Ordering::SeqCst)].clone()
        })
    };
    let server = TestServer::start(handler).map_err(|e| e.to_string())?;
    let provider = RemoteProvider::connect(RemoteConfig {
        endpoint: server.url(),
        timeout_secs: 0.3,
        retries: 0,
    })
    .map_err(|e| e.to_string())?;
    let request = fuzz_request();
    let mut kinds = BTreeSet::new();
    let mut accepted = 0;
    for k in 0..cases.len() {
        index.store(k, Ordering::SeqCst);
        let result = catch_unwind(AssertUnwindSafe(|| provider.guide(&request)))
            .map_err(|_| format!("client panicked on case {k}"))?;
        match result {
            Ok(resp) => {
                // A corruption may still decode; it must then be well-formed.
                ensure(resp.grad_image.same_shape(&request.image) && resp.grad_image.is_finite(), || {
                    format!("case {k} decoded to a malformed response")
                })?;
                accepted += 1;
            }
            Err(e) => {
                kinds.insert(match e {
                    GuidanceError::Unavailable { .. } => "unavailable",
                    GuidanceError::Protocol(_) => "protocol",
                    GuidanceError::VersionMismatch { .. } => "version",
                    GuidanceError::InvalidRequest(_) => "invalid-request",
                    GuidanceError::ShapeMismatch { .. } => "shape",
                });
            }
        }
    }
    Ok(format!(
        "{} cases, no panics, {} decoded cleanly, error kinds {:?}",
        cases.len(),
        accepted,
        kinds
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("sds_l2_equivalence", sds_l2_equivalence),
        ("rasterizer_gradient_check", rasterizer_gradient_check),
        ("oracle_convergence", oracle_convergence),
        ("density_schedule_trace", density_schedule_trace),
        ("noise_annealing", noise_annealing),
        ("determinism_and_resume", determinism_and_resume),
        ("remote_protocol_robustness", remote_protocol_robustness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
