//! Cross-module integration: oracle dataset generation, splitting,
//! training, checkpointing, and evaluation working together.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rfsplat::dataset_io::{self, SplitSpec};
use rfsplat::em_feature_net::NetConfig;
use rfsplat::gaussian_field;
use rfsplat::geom::{Aabb, IDENTITY};
use rfsplat::pas_oracle::{self, GenerateConfig};
use rfsplat::scene::{Material, Obstacle, RxPose, Scene};
use rfsplat::training::{self, checkpoint, evaluate, TrainConfig};

fn tmp_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn box_scene() -> Scene {
    Scene::new(
        Aabb { min: [-4.0, -4.0, -1.0], max: [4.0, 4.0, 3.0] },
        RxPose { position: [0.0, 0.0, 0.0], frame: IDENTITY },
        BTreeMap::from([(
            "concrete".to_string(),
            Material {
                eps_a: 5.24,
                eps_b: 0.0,
                sigma_a: 0.0462,
                sigma_b: 0.7822,
                mu_r: 1.0,
                thickness: 0.1,
            },
        )]),
        vec![Obstacle::Box {
            min: [1.0, -1.0, -0.5],
            max: [2.5, 1.0, 1.5],
            material: "concrete".to_string(),
            diffracting_edges: true,
        }],
        7,
    )
    .unwrap()
}

fn small_cfg(iters: u64) -> TrainConfig {
    let mut cfg = TrainConfig::for_scene(8.0, iters);
    cfg.init_surface_points = 60;
    cfg.init_volume_points = 20;
    cfg.l_pos = 6;
    cfg.l_freq = 4;
    cfg.net = NetConfig { atten_width: 32, atten_depth: 2, h_dim: 16, rad_width: 16, rad_depth: 2 };
    cfg.loss_log_window = 20;
    cfg.densify_interval = 50;
    cfg.reset_interval = 0;
    cfg.seed = 1;
    cfg
}

#[test]
fn dataset_generation_is_byte_identical() {
    let scene = box_scene();
    let txs = rfsplat::scene::sample_tx_positions(&scene, 3, 5).unwrap();
    let freqs = [1e9, 10e9];
    let cfg = GenerateConfig { width: 60, height: 30, kernel_sigma: 3.0, max_bounces: 2 };

    let d1 = tmp_dir("gen-a");
    let d2 = tmp_dir("gen-b");
    let m1 = pas_oracle::generate_dataset(&scene, "s.json", &txs, &freqs, &d1, &cfg).unwrap();
    let m2 = pas_oracle::generate_dataset(&scene, "s.json", &txs, &freqs, &d2, &cfg).unwrap();
    assert_eq!(m1.samples.len(), 6);
    assert_eq!(m1, m2);
    for s in &m1.samples {
        let b1 = std::fs::read(d1.join(&s.file)).unwrap();
        let b2 = std::fs::read(d2.join(&s.file)).unwrap();
        assert_eq!(b1, b2, "sample {} differs between runs", s.file);
    }
}

#[test]
fn table4_frequencies_recorded_in_manifest() {
    let scene = box_scene();
    let txs = rfsplat::scene::sample_tx_positions(&scene, 2, 5).unwrap();
    let ghz = [1.0, 2.4, 5.0, 10.0, 24.25, 37.0, 47.0, 60.0, 77.0, 94.0];
    let freqs: Vec<f64> = ghz.iter().map(|g| g * 1e9).collect();
    let dir = tmp_dir("table4");
    let cfg = GenerateConfig { width: 36, height: 18, kernel_sigma: 2.0, max_bounces: 0 };
    let manifest = pas_oracle::generate_dataset(&scene, "s.json", &txs, &freqs, &dir, &cfg).unwrap();
    assert_eq!(manifest.samples.len(), 20);
    assert_eq!(manifest.frequencies(), freqs);
}

#[test]
fn manifest_roundtrip_and_validation() {
    let scene = box_scene();
    let txs = rfsplat::scene::sample_tx_positions(&scene, 2, 9).unwrap();
    let dir = tmp_dir("manifest-rt");
    let cfg = GenerateConfig { width: 24, height: 12, kernel_sigma: 2.0, max_bounces: 1 };
    let manifest =
        pas_oracle::generate_dataset(&scene, "s.json", &txs, &[2.4e9], &dir, &cfg).unwrap();
    let loaded = dataset_io::load_manifest(&dir.join("manifest.json")).unwrap();
    assert_eq!(manifest, loaded);

    // Truncate one sample: validation must fail naming the file.
    let victim = dir.join(&manifest.samples[0].file);
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
    let err = dataset_io::load_manifest(&dir.join("manifest.json")).unwrap_err();
    assert!(err.to_string().contains("expected"), "{err}");
}

#[test]
fn oracle_images_match_stored_samples_after_normalization() {
    let scene = box_scene();
    let txs = rfsplat::scene::sample_tx_positions(&scene, 2, 11).unwrap();
    let dir = tmp_dir("norm-check");
    let cfg = GenerateConfig { width: 36, height: 18, kernel_sigma: 2.0, max_bounces: 1 };
    let manifest =
        pas_oracle::generate_dataset(&scene, "s.json", &txs, &[5e9], &dir, &cfg).unwrap();
    for s in &manifest.samples {
        let raw = dataset_io::read_sample(&dir.join(&s.file), 36, 18).unwrap();
        let norm = dataset_io::normalize(&raw, &manifest.norm);
        assert!(norm.iter().all(|v| (0.0..=1.0).contains(v)));
        // The dataset ceiling comes from the brightest pixel overall, so at
        // least one sample touches 1 and every sample has some signal.
        assert!(norm.iter().any(|&v| v > 0.0));
    }
}

#[test]
fn train_checkpoint_eval_roundtrip() {
    let scene = box_scene();
    let dir = tmp_dir("train-rt");
    let txs = rfsplat::scene::sample_tx_positions(&scene, 6, 3).unwrap();
    let gen = GenerateConfig { width: 48, height: 24, kernel_sigma: 3.0, max_bounces: 1 };
    let manifest =
        pas_oracle::generate_dataset(&scene, "s.json", &txs, &[1e9, 10e9], &dir, &gen).unwrap();
    let (train_ids, test_ids) = dataset_io::split(&manifest, &SplitSpec::default()).unwrap();
    assert!(!train_ids.is_empty() && !test_ids.is_empty());

    let (trainer, outcome) =
        training::train(&scene, &manifest, &dir, &train_ids, small_cfg(40), None).unwrap();
    assert!(outcome.final_loss.is_finite());

    let ckpt = dir.join("model.wbgs");
    checkpoint::save(&trainer, &ckpt).unwrap();
    let reloaded = checkpoint::load(&ckpt).unwrap();

    let r1 = evaluate::evaluate(&trainer, &manifest, &dir, &test_ids).unwrap();
    let r2 = evaluate::evaluate(&reloaded, &manifest, &dir, &test_ids).unwrap();
    assert_eq!(r1, r2, "checkpoint round trip changed evaluation");
    assert_eq!(r1.rows.len(), 2);
    assert_eq!(r1.to_csv().lines().count(), 1 + 2 + 1);
}

#[test]
fn identical_runs_produce_identical_checkpoints() {
    let scene = box_scene();
    let dir = tmp_dir("determinism");
    let txs = rfsplat::scene::sample_tx_positions(&scene, 4, 13).unwrap();
    let gen = GenerateConfig { width: 36, height: 18, kernel_sigma: 2.5, max_bounces: 1 };
    let manifest =
        pas_oracle::generate_dataset(&scene, "s.json", &txs, &[2.4e9], &dir, &gen).unwrap();
    let (train_ids, _) = dataset_io::split(&manifest, &SplitSpec::default()).unwrap();

    let run = |out: &str| {
        let (trainer, _) =
            training::train(&scene, &manifest, &dir, &train_ids, small_cfg(30), None).unwrap();
        let path = dir.join(out);
        checkpoint::save(&trainer, &path).unwrap();
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.wbgs"), run("b.wbgs"));
}

#[test]
fn evaluate_model_against_its_own_renders_is_unity() {
    // Build a tiny trained model, write its own renders as a dataset, and
    // evaluate against them: SSIM must be 1 up to f32 storage rounding.
    let scene = box_scene();
    let dir = tmp_dir("self-eval");
    let txs = rfsplat::scene::sample_tx_positions(&scene, 4, 3).unwrap();
    let gen = GenerateConfig { width: 48, height: 24, kernel_sigma: 3.0, max_bounces: 1 };
    let manifest =
        pas_oracle::generate_dataset(&scene, "s.json", &txs, &[1e9, 94e9], &dir, &gen).unwrap();
    let (train_ids, _) = dataset_io::split(&manifest, &SplitSpec::default()).unwrap();
    let (trainer, _) =
        training::train(&scene, &manifest, &dir, &train_ids, small_cfg(25), None).unwrap();

    let mut own = manifest.clone();
    for (i, s) in own.samples.iter_mut().enumerate() {
        let img = training::render_field(&trainer, s.tx, s.freq).unwrap();
        let linear = dataset_io::denormalize(&img.values, &manifest.norm);
        let file = format!("own{i}.f32");
        dataset_io::write_sample(&linear, img.width, img.height, &dir.join(&file)).unwrap();
        s.file = file;
    }
    let ids: Vec<usize> = (0..own.samples.len()).collect();
    let report = evaluate::evaluate(&trainer, &own, &dir, &ids).unwrap();
    assert!(
        report.overall_mean > 0.99999,
        "self-comparison should be unity, got {}",
        report.overall_mean
    );
}

#[test]
fn init_cloud_from_scene_points_covers_obstacle() {
    let scene = box_scene();
    let pts = gaussian_field::sample_scene_points(&scene, 200, 50, 3);
    let on_box = pts
        .iter()
        .filter(|p| {
            p[0] >= 0.99 && p[0] <= 2.51 && p[1] >= -1.01 && p[1] <= 1.01 && p[2] >= -0.51 && p[2] <= 1.51
        })
        .count();
    // The 200 surface points should all land on the box faces.
    assert!(on_box >= 200, "only {on_box} points near the obstacle");
}
