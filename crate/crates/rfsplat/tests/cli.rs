//! Binary-level behavior: exit codes, file outputs, determinism at
//! different worker counts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rfsplat")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_scene(dir: &Path) -> PathBuf {
    let path = dir.join("scene.json");
    std::fs::write(
        &path,
        r#"{
  "bounds": {"min": [-4.0, -4.0, -1.0], "max": [4.0, 4.0, 3.0]},
  "rx": {"position": [0.0, 0.0, 0.0],
         "frame": [[1.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]]},
  "materials": {
    "concrete": {"eps_a": 5.24, "eps_b": 0.0, "sigma_a": 0.0462,
                 "sigma_b": 0.7822, "mu_r": 1.0, "thickness": 0.1}
  },
  "surfaces": [
    {"kind": "box", "min": [1.0, -1.0, -0.5], "max": [2.5, 1.0, 1.5],
     "material": "concrete", "diffracting_edges": true}
  ],
  "seed": 7
}"#,
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn help_exits_zero_unknown_flag_exits_two() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["simulate", "--help"])), 0);
    assert_eq!(code(&run(&["--definitely-not-a-flag"])), 2);
    assert_eq!(code(&run(&["simulate", "--bogus"])), 2);
}

#[test]
fn simulate_counts_and_table4_expansion() {
    let dir = tmp_dir("cli-sim");
    let scene = write_scene(&dir);
    let out_dir = dir.join("ds");
    let out = run(&[
        "simulate",
        "--scene",
        scene.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--n-tx",
        "16",
        "--freqs",
        "1e9,10e9,100e9",
        "--width",
        "36",
        "--height",
        "18",
        "--max-bounces",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("48 samples"), "{stdout}");

    // Default --freqs expands to the ten stock frequencies.
    let out_dir2 = dir.join("ds-t4");
    let out = run(&[
        "simulate",
        "--scene",
        scene.to_str().unwrap(),
        "--out",
        out_dir2.to_str().unwrap(),
        "--n-tx",
        "2",
        "--width",
        "36",
        "--height",
        "18",
        "--max-bounces",
        "0",
    ]);
    assert_eq!(code(&out), 0);
    let manifest = rfsplat::dataset_io::load_manifest(&out_dir2.join("manifest.json")).unwrap();
    let ghz: Vec<f64> = manifest.frequencies().iter().map(|f| f / 1e9).collect();
    assert_eq!(ghz, vec![1.0, 2.4, 5.0, 10.0, 24.25, 37.0, 47.0, 60.0, 77.0, 94.0]);
}

#[test]
fn simulate_missing_scene_exits_three_naming_path() {
    let out = run(&["simulate", "--scene", "/nonexistent/nowhere.json", "--out", "/tmp/x"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));
}

#[test]
fn simulate_invalid_scene_exits_two() {
    let dir = tmp_dir("cli-badscene");
    let path = dir.join("bad.json");
    // rx outside bounds.
    std::fs::write(
        &path,
        r#"{"bounds": {"min": [0,0,0], "max": [1,1,1]},
            "rx": {"position": [5,0,0], "frame": [[1,0,0],[0,1,0],[0,0,1]]},
            "materials": {}, "surfaces": [], "seed": 0}"#,
    )
    .unwrap();
    let out = run(&["simulate", "--scene", path.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

fn small_dataset(dir: &Path) -> PathBuf {
    let scene = write_scene(dir);
    let ds = dir.join("ds");
    let out = run(&[
        "simulate",
        "--scene",
        scene.to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
        "--n-tx",
        "6",
        "--freqs",
        "1e9,10e9",
        "--width",
        "48",
        "--height",
        "24",
        "--kernel-sigma",
        "3",
        "--max-bounces",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    ds.join("manifest.json")
}

fn train_args<'a>(manifest: &'a str, out: &'a str, workers: &'a str, iters: &'a str) -> Vec<&'a str> {
    vec![
        "--workers", workers, "train", "--manifest", manifest, "--out", out, "--iters", iters,
        "--seed", "1", "--init-surface-points", "40", "--init-volume-points", "12",
    ]
}

#[test]
fn train_deterministic_across_worker_counts() {
    let dir = tmp_dir("cli-train");
    let manifest = small_dataset(&dir);
    let m = manifest.to_str().unwrap();

    let c1 = dir.join("w1.wbgs");
    let c2 = dir.join("w4.wbgs");
    let out = run(&train_args(m, c1.to_str().unwrap(), "1", "25"));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&train_args(m, c2.to_str().unwrap(), "4", "25"));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(&c1).unwrap(),
        std::fs::read(&c2).unwrap(),
        "checkpoints differ across worker counts"
    );

    // Evaluation CSVs byte-identical too.
    let e1 = dir.join("e1.csv");
    let e2 = dir.join("e2.csv");
    for (ckpt, csv, workers) in [(&c1, &e1, "4"), (&c2, &e2, "2")] {
        let out = run(&[
            "--workers",
            workers,
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            m,
            "--out",
            csv.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&e1).unwrap(), std::fs::read(&e2).unwrap());
}

#[test]
fn train_zero_iterations_checkpoint_is_initialization() {
    let dir = tmp_dir("cli-init");
    let manifest = small_dataset(&dir);
    let m = manifest.to_str().unwrap();
    let c1 = dir.join("a.wbgs");
    let c2 = dir.join("b.wbgs");
    for c in [&c1, &c2] {
        let out = run(&train_args(m, c.to_str().unwrap(), "1", "0"));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    let t = rfsplat::training::checkpoint::load(&c1).unwrap();
    assert_eq!(t.iteration, 0);
    // Optimizer untouched.
    assert_eq!(t.opt.net.t, 0);
}

#[test]
fn render_writes_raw_and_pgm() {
    let dir = tmp_dir("cli-render");
    let manifest = small_dataset(&dir);
    let m = manifest.to_str().unwrap();
    let ckpt = dir.join("m.wbgs");
    let out = run(&train_args(m, ckpt.to_str().unwrap(), "1", "10"));
    assert_eq!(code(&out), 0);

    let raw = dir.join("view.f32");
    let out = run(&[
        "render",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--tx",
        "2.0,1.0,1.0",
        "--freq",
        "10e9",
        "--out",
        raw.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::metadata(&raw).unwrap().len(), 48 * 24 * 4);

    let pgm = std::fs::read(dir.join("view.f32.pgm")).unwrap();
    let header = String::from_utf8_lossy(&pgm[..20]);
    assert!(header.starts_with("P5\n48 24\n255\n"), "{header}");
    assert_eq!(pgm.len(), "P5\n48 24\n255\n".len() + 48 * 24);

    // Determinism: rendering twice yields identical bytes.
    let raw2 = dir.join("view2.f32");
    let out = run(&[
        "render",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--tx",
        "2.0,1.0,1.0",
        "--freq",
        "10e9",
        "--out",
        raw2.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&raw).unwrap(), std::fs::read(&raw2).unwrap());
}

#[test]
fn render_bad_tx_exits_two() {
    let dir = tmp_dir("cli-badtx");
    let manifest = small_dataset(&dir);
    let ckpt = dir.join("m.wbgs");
    let out = run(&train_args(manifest.to_str().unwrap(), ckpt.to_str().unwrap(), "1", "5"));
    assert_eq!(code(&out), 0);
    let out = run(&[
        "render",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--tx",
        "1.0,2.0",
        "--freq",
        "1e9",
        "--out",
        dir.join("x.f32").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_divergence_exits_four() {
    let dir = tmp_dir("cli-diverge");
    let manifest = small_dataset(&dir);
    let out = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.join("d.wbgs").to_str().unwrap(),
        "--iters",
        "20",
        "--seed",
        "1",
        "--init-surface-points",
        "30",
        "--init-volume-points",
        "10",
        "--lr-net",
        "1e200",
        "--lr-delta",
        "1e200",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn eval_split_seed_changes_partition_not_schema() {
    let dir = tmp_dir("cli-splitseed");
    let manifest = small_dataset(&dir);
    let m = manifest.to_str().unwrap();
    let ckpt = dir.join("m.wbgs");
    let out = run(&train_args(m, ckpt.to_str().unwrap(), "1", "10"));
    assert_eq!(code(&out), 0);

    let mut csvs = Vec::new();
    for seed in ["0", "1"] {
        let csv = dir.join(format!("eval-{seed}.csv"));
        let out = run(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            m,
            "--out",
            csv.to_str().unwrap(),
            "--split-seed",
            seed,
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(std::fs::read_to_string(&csv).unwrap());
    }
    for csv in &csvs {
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "freq_hz,n,median_ssim,mean_ssim");
        assert_eq!(lines.len(), 1 + 2 + 1, "{csv}");
        assert!(lines.last().unwrap().starts_with("all,"));
    }
    assert_ne!(csvs[0], csvs[1], "different split seeds picked the same TX partition");
}

#[test]
fn train_frequency_filter_matches_band_edges() {
    // Restricting to the band-edge pair reproduces the sparsest published
    // train split shape: train samples exist only at those two bands.
    let dir = tmp_dir("cli-freqfilter");
    let scene = write_scene(&dir);
    let ds = dir.join("ds");
    let out = run(&[
        "simulate",
        "--scene",
        scene.to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
        "--n-tx",
        "4",
        "--freqs",
        "1e9,2.4e9,10e9,94e9",
        "--width",
        "36",
        "--height",
        "18",
        "--max-bounces",
        "0",
    ]);
    assert_eq!(code(&out), 0);
    let manifest = rfsplat::dataset_io::load_manifest(&ds.join("manifest.json")).unwrap();
    let spec = rfsplat::dataset_io::SplitSpec {
        train_freqs: vec![1e9, 94e9],
        test_freqs: vec![2.4e9, 10e9],
        ..Default::default()
    };
    let (train_ids, test_ids) = rfsplat::dataset_io::split(&manifest, &spec).unwrap();
    assert!(train_ids.iter().all(|&i| {
        let f = manifest.samples[i].freq;
        f == 1e9 || f == 94e9
    }));
    assert!(test_ids.iter().all(|&i| {
        let f = manifest.samples[i].freq;
        f == 2.4e9 || f == 10e9
    }));
}
