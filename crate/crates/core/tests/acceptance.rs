//! Acceptance suite. Prints one line per criterion to stderr.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{compare, render_at, Oracle};
use pcal::correction::{run_evaluation, LoopConfig};
use pcal::dataset::{generate_dataset, DatasetManifest, GenConfig, MANIFEST_FILE};
use pcal::geometry::{apply_offset, intersect_ray_plane, project_point, unproject_pixel};
use pcal::regressor::{
    backward, load_weights, preprocess, save_weights, train, train_from_manifest, AnalyticEstimator, LearnedPolicy,
    Sample, TrainConfig, Weights,
};
use pcal::render::{dark_blob, highlight_blob, render_scene};
use pcal::{Image, Intrinsics, Mat3, OffsetEstimate, Plane, RigidTransform, SceneConfig, Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EVAL_SEED: u64 = 2024;
const EVAL_TRIALS: usize = 30;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let out = run();
    let elapsed = t.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n} [{}] {name}: {}; {:.1} s (limit {} s{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", exceeded" },
    );
    pass
}

fn geometry_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut proj, mut plane_err, mut ident) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20_000 {
        let k = Intrinsics::new(
            rng.gen_range(100.0..800.0),
            rng.gen_range(100.0..800.0),
            rng.gen_range(0.0..640.0),
            rng.gen_range(0.0..480.0),
            640,
            480,
        )
        .unwrap();
        let px = Vec2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
        let d = unproject_pixel(&k, px);
        let back = project_point(&k, &RigidTransform::identity(), d * (rng.gen_range(0.1..10.0) / d.z)).unwrap();
        proj = proj.max((back - px).norm());

        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)).normalize();
        let n = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), -1.0).normalize();
        let plane = Plane::new(Vec3::new(0.0, 0.0, rng.gen_range(0.5..3.0)), n).unwrap();
        if let Ok(p) = intersect_ray_plane(Vec3::zeros(), axis, &plane) {
            plane_err = plane_err.max(plane.signed_distance(p).abs());
        }

        let t = RigidTransform::new(
            Mat3::from_axis_angle(axis, rng.gen_range(-3.0..3.0)),
            Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        )
        .unwrap();
        let u = RigidTransform::new(Mat3::from_axis_angle(n, 0.7), Vec3::new(0.1, 0.2, 0.3)).unwrap();
        let id = RigidTransform::identity();
        ident = ident
            .max(t.compose(&t.inverse()).max_abs_diff(&id))
            .max(t.inverse().compose(&t).max_abs_diff(&id))
            .max(t.compose(&u).inverse().max_abs_diff(&u.inverse().compose(&t.inverse())));
    }
    Outcome {
        pass: proj < 1e-9 && plane_err < 1e-9 && ident < 1e-9,
        detail: format!("round trip {proj:.1e} px, on-plane {plane_err:.1e} m, compose/inverse {ident:.1e}"),
    }
}

fn renderer_suite() -> Outcome {
    let scene = SceneConfig::default();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let a = pool(1).install(|| render_at(&scene, 0.023, -0.017, 256));
    let b = pool(1).install(|| render_at(&scene, 0.023, -0.017, 256));
    let c = pool(4).install(|| render_at(&scene, 0.023, -0.017, 256));
    let deterministic = a.as_bytes() == b.as_bytes() && a.as_bytes() == c.as_bytes();

    let disp = |img: &Image| {
        (highlight_blob(img, 0.3).unwrap().centroid - dark_blob(img, 60.0).unwrap().centroid).norm()
    };
    let aligned = [(0.0, 0.0), (0.1, -0.1), (-0.15, 0.12), (0.15, 0.15)]
        .iter()
        .map(|&(x, y)| disp(&render_at(&scene.with_tag_at(x, y), 0.0, 0.0, 256)))
        .fold(0.0f64, f64::max);
    let d: Vec<f64> = (1..=5).map(|i| disp(&render_at(&scene, 0.01 * i as f64, 0.0, 256))).collect();
    let monotone = d[0] > 0.0 && d.windows(2).all(|w| w[1] > w[0]);
    Outcome {
        pass: deterministic && aligned <= 0.5 && monotone,
        detail: format!(
            "bit-identical {deterministic}, worst aligned offset {aligned:.3} px, displacements {:?} px",
            d.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    }
}

fn gradient_check() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    let (mut checked, mut skipped) = (0, 0);
    for seed in [101u64, 202, 303] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Weights::<f32>::he_init(&mut rng);
        let (dx, dy) = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
        let scene = SceneConfig::default().with_tag_at(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        let x = preprocess::<f32>(&render_at(&scene, dx, dy, 256));
        let shadow = w.cast::<f64>();
        let xs = x.cast::<f64>();
        let numeric = Oracle::new(&shadow, &xs.data, [dx, dy]).central_differences(1e-3);
        let (_, g64) = backward(&shadow, &xs, OffsetEstimate::new(dx, dy)).unwrap();
        let (_, g32) =
            backward(&w, &x, pcal::geometry::OffsetEstimate::<f32>::new(dx as f32, dy as f32)).unwrap();
        let a64: Vec<Vec<f64>> = g64.tensors.iter().map(|t| t.data.clone()).collect();
        let a32: Vec<Vec<f64>> =
            g32.tensors.iter().map(|t| t.data.iter().map(|&v| v as f64).collect()).collect();
        let r64 = compare(&a64, &numeric, 1e-10);
        let r32 = compare(&a32, &numeric, 1e-6);
        worst = (worst.0.max(r32.worst), worst.1.max(r64.worst));
        checked += r64.checked;
        skipped += r64.skipped;
    }
    Outcome {
        pass: worst.0 < 1e-2 && worst.1 < 1e-5 && skipped * 20 < checked + skipped,
        detail: format!(
            "3 seeds, {checked} checked, {skipped} skipped at ReLU kinks, worst rel err f32 {:.1e}, f64 {:.1e}",
            worst.0, worst.1
        ),
    }
}

fn analytic_loop() -> Outcome {
    let scene = SceneConfig::default();
    let est = AnalyticEstimator::new(scene.camera, scene.plane);
    let (r, traces) =
        run_evaluation(&scene, &LoopConfig::default(), &GenConfig::default(), &est, EVAL_TRIALS, EVAL_SEED).unwrap();
    let max_iter = traces.iter().map(|t| t.iterations_used).max().unwrap_or(0);
    Outcome {
        pass: r.convergence_rate == 1.0 && r.mean_final_error_m < 1e-3 && max_iter <= 50,
        detail: format!(
            "convergence {:.0}%, mean final error {:.2e} m, max iterations {max_iter}",
            100.0 * r.convergence_rate,
            r.mean_final_error_m
        ),
    }
}

fn learned_loop(dir: &Path) -> Outcome {
    let scene = SceneConfig::default();
    let gen = GenConfig::default();
    let manifest = generate_dataset(&scene, &gen, dir).unwrap();
    let out = train_from_manifest(&manifest, dir, &TrainConfig::default()).unwrap();
    let test_rmse = out.log.last().unwrap().test_mse.sqrt();
    let policy = LearnedPolicy::new(out.weights).unwrap();
    let (r, _) =
        run_evaluation(&scene, &LoopConfig::default(), &gen, &policy, EVAL_TRIALS, EVAL_SEED).unwrap();
    Outcome {
        pass: r.convergence_rate >= 0.9 && r.mean_final_error_m <= 5e-3,
        detail: format!(
            "split {}/{}, test RMSE {test_rmse:.4} m, convergence {:.0}%, mean final error {:.2e} m",
            manifest.split.train.len(),
            manifest.split.test.len(),
            100.0 * r.convergence_rate,
            r.mean_final_error_m
        ),
    }
}

fn overfit() -> Outcome {
    let (dx, dy) = (0.03, -0.02);
    let s = Sample::from_image(&render_at(&SceneConfig::default(), dx, dy, 256), OffsetEstimate::new(dx, dy));
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let out = train(&vec![s; 8], &[], &cfg).unwrap();
    let hit = out.log.iter().find(|l| l.train_mse < 1e-6).map(|l| l.epoch);
    Outcome {
        pass: hit.is_some(),
        detail: format!(
            "train MSE < 1e-6 first at epoch {}, final {:.1e}",
            hit.map_or("never".into(), |e| e.to_string()),
            out.log.last().unwrap().train_mse
        ),
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn format_round_trips(dataset: &Path) -> Outcome {
    let scratch = tempfile::tempdir().unwrap();
    let w = Weights::<f32>::he_init(&mut ChaCha8Rng::seed_from_u64(9));
    let path = scratch.path().join("w.bin");
    save_weights(&w, &path).unwrap();
    let loaded = load_weights(&path).unwrap();
    let weights_ok = w
        .tensors
        .iter()
        .zip(&loaded.tensors)
        .all(|(a, b)| a.shape == b.shape && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));

    let manifest = DatasetManifest::load(&dataset.join(MANIFEST_FILE)).unwrap();
    let manifest_ok = DatasetManifest::from_json(&manifest.to_json()).unwrap() == manifest;

    let again = scratch.path().join("dataset");
    generate_dataset(&manifest.scene, &manifest.gen, &again).unwrap();
    let (a, b) = (tree(dataset), tree(&again));
    let dataset_ok = a == b;
    Outcome {
        pass: weights_ok && manifest_ok && dataset_ok,
        detail: format!(
            "weights bitwise {weights_ok}, manifest re-parse {manifest_ok}, regenerated {} files identical {dataset_ok}",
            b.len()
        ),
    }
}

fn label_correctness(dataset: &Path) -> Outcome {
    let manifest = DatasetManifest::load(&dataset.join(MANIFEST_FILE)).unwrap();
    let steps: Vec<_> = manifest
        .sequences
        .iter()
        .flat_map(|s| s.steps.iter().map(move |st| (s, st)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut matched = 0;
    for _ in 0..10 {
        let (seq, step) = steps[rng.gen_range(0..steps.len())];
        let mut scene = manifest.scene.clone();
        scene.tag.center = seq.tag_center;
        let believed = apply_offset(&scene.true_extrinsics, step.offset);
        let img = render_scene(&scene, &believed, manifest.gen.resolution()).unwrap();
        if img.to_ppm() == fs::read(dataset.join(&step.image)).unwrap() {
            matched += 1;
        }
    }
    Outcome {
        pass: matched == 10,
        detail: format!("{matched}/10 re-rendered labels bit-identical"),
    }
}

#[test]
fn acceptance() {
    let dataset = tempfile::tempdir().unwrap();
    let results = [
        report(1, "geometry", Duration::from_secs(1), geometry_suite),
        report(2, "renderer", Duration::from_secs(10), renderer_suite),
        report(3, "gradient check", Duration::from_secs(30), gradient_check),
        report(4, "analytic closed loop", Duration::from_secs(120), analytic_loop),
        report(5, "learned closed loop", Duration::from_secs(900), || learned_loop(dataset.path())),
        report(6, "overfit sanity", Duration::from_secs(300), overfit),
        report(7, "format round trips", Duration::from_secs(120), || format_round_trips(dataset.path())),
        report(8, "label correctness", Duration::from_secs(60), || label_correctness(dataset.path())),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, &p)| !p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
