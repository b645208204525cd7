//! Command-line entry point: scene -> simulate -> train -> render -> eval.
//!
//! Exit codes: 0 ok, 2 usage/validation, 3 i/o, 4 training divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rfsplat::dataset_io::{self, SplitSpec};
use rfsplat::geom::Vec3;
use rfsplat::pas_oracle::{self, GenerateConfig};
use rfsplat::scene::{self, SceneError};
use rfsplat::splat_renderer::RenderMode;
use rfsplat::training::{self, checkpoint, evaluate, TrainConfig, TrainError};

/// The ten stock simulation frequencies, GHz.
const TABLE4_GHZ: [f64; 10] = [1.0, 2.4, 5.0, 10.0, 24.25, 37.0, 47.0, 60.0, 77.0, 94.0];

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "rfsplat", version, about = "Wideband RF PAS simulation and Gaussian-splat field training")]
struct Cli {
    /// Worker threads (default: all cores; RAYON_NUM_THREADS also works).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a ground-truth PAS dataset from a scene file.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of TX positions to sample.
        #[arg(long, default_value_t = 64)]
        n_tx: usize,
        /// Comma-separated Hz values, or "table4" for the stock ten.
        #[arg(long, default_value = "table4")]
        freqs: String,
        #[arg(long, default_value_t = 360)]
        width: usize,
        #[arg(long, default_value_t = 90)]
        height: usize,
        /// Angular blur of the synthesized beam pattern, pixels.
        #[arg(long, default_value_t = 8.0)]
        kernel_sigma: f64,
        /// Image-source reflection depth (0-3).
        #[arg(long, default_value_t = 2)]
        max_bounces: usize,
        /// TX sampling seed; defaults to the scene file's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a Gaussian field against a dataset.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        iters: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        /// Rendering mode: alpha or paper_literal.
        #[arg(long, default_value = "alpha")]
        mode: String,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Restrict training to these frequencies (comma-separated Hz).
        #[arg(long)]
        train_freqs: Option<String>,
        /// Restrict testing to these frequencies (comma-separated Hz).
        #[arg(long)]
        test_freqs: Option<String>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        init_surface_points: usize,
        #[arg(long, default_value_t = 500)]
        init_volume_points: usize,
        #[arg(long)]
        max_gaussians: Option<usize>,
        #[arg(long)]
        densify_interval: Option<u64>,
        #[arg(long)]
        densify_grad_threshold: Option<f64>,
        #[arg(long)]
        reset_interval: Option<u64>,
        #[arg(long)]
        lr_net: Option<f64>,
        #[arg(long)]
        lr_delta: Option<f64>,
    },
    /// Render one PAS from a checkpoint: raw f32 sample plus a PGM preview.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// TX position as "x,y,z" meters.
        #[arg(long)]
        tx: String,
        #[arg(long)]
        freq: f64,
        /// Raw output path; the preview lands at "<out>.pgm".
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a test split: per-frequency SSIM CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        train_freqs: Option<String>,
        #[arg(long)]
        test_freqs: Option<String>,
    },
}

fn parse_freqs(s: &str) -> Result<Vec<f64>, String> {
    if s == "table4" {
        return Ok(TABLE4_GHZ.iter().map(|g| g * 1e9).collect());
    }
    s.split(',')
        .map(|tok| tok.trim().parse::<f64>().map_err(|e| format!("bad frequency {tok:?}: {e}")))
        .collect()
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.trim().parse::<f64>().map_err(|e| format!("bad coordinate {p:?}: {e}"))?;
    }
    Ok(out)
}

fn scene_exit(e: &SceneError) -> u8 {
    match e {
        SceneError::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn dataset_exit(e: &dataset_io::DatasetError) -> u8 {
    match e {
        dataset_io::DatasetError::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn train_exit(e: &TrainError) -> u8 {
    match e {
        TrainError::Diverged { .. } => EXIT_DIVERGED,
        TrainError::Io { .. } => EXIT_IO,
        TrainError::Dataset(d) => dataset_exit(d),
        _ => EXIT_USAGE,
    }
}

fn fail(msg: String, code: u8) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn write_pgm(img: &rfsplat::PasImage, path: &Path) -> std::io::Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes)
}

fn split_spec(
    train_frac: f64,
    split_seed: u64,
    train_freqs: &Option<String>,
    test_freqs: &Option<String>,
) -> Result<SplitSpec, String> {
    Ok(SplitSpec {
        tx_train_fraction: train_frac,
        seed: split_seed,
        train_freqs: match train_freqs {
            Some(s) => parse_freqs(s)?,
            None => vec![],
        },
        test_freqs: match test_freqs {
            Some(s) => parse_freqs(s)?,
            None => vec![],
        },
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(format!("worker pool: {e}"), EXIT_USAGE);
        }
    }
    match cli.cmd {
        Cmd::Simulate { scene, out, n_tx, freqs, width, height, kernel_sigma, max_bounces, seed } => {
            cmd_simulate(&scene, &out, n_tx, &freqs, width, height, kernel_sigma, max_bounces, seed)
        }
        Cmd::Train {
            manifest,
            out,
            iters,
            seed,
            lambda,
            mode,
            train_frac,
            split_seed,
            train_freqs,
            test_freqs,
            metrics,
            init_surface_points,
            init_volume_points,
            max_gaussians,
            densify_interval,
            densify_grad_threshold,
            reset_interval,
            lr_net,
            lr_delta,
        } => cmd_train(TrainArgs {
            manifest,
            out,
            iters,
            seed,
            lambda,
            mode,
            train_frac,
            split_seed,
            train_freqs,
            test_freqs,
            metrics,
            init_surface_points,
            init_volume_points,
            max_gaussians,
            densify_interval,
            densify_grad_threshold,
            reset_interval,
            lr_net,
            lr_delta,
        }),
        Cmd::Render { checkpoint, tx, freq, out } => cmd_render(&checkpoint, &tx, freq, &out),
        Cmd::Eval { checkpoint, manifest, out, train_frac, split_seed, train_freqs, test_freqs } => {
            cmd_eval(&checkpoint, &manifest, &out, train_frac, split_seed, &train_freqs, &test_freqs)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    scene_path: &Path,
    out: &Path,
    n_tx: usize,
    freqs: &str,
    width: usize,
    height: usize,
    kernel_sigma: f64,
    max_bounces: usize,
    seed: Option<u64>,
) -> ExitCode {
    if n_tx == 0 {
        return fail("--n-tx must be at least 1".into(), EXIT_USAGE);
    }
    if max_bounces > 3 {
        return fail("--max-bounces must be in 0..=3".into(), EXIT_USAGE);
    }
    let freqs = match parse_freqs(freqs) {
        Ok(f) if !f.is_empty() => f,
        Ok(_) => return fail("--freqs must be nonempty".into(), EXIT_USAGE),
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let scene = match scene::load_scene(scene_path) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string(), scene_exit(&e)),
    };
    let seed = seed.unwrap_or(scene.seed);
    let tx_positions = match scene::sample_tx_positions(&scene, n_tx, seed) {
        Ok(p) => p,
        Err(e) => return fail(e.to_string(), EXIT_USAGE),
    };
    if let Err(e) = std::fs::create_dir_all(out) {
        return fail(format!("creating {}: {e}", out.display()), EXIT_IO);
    }
    // Keep the dataset self-contained: the scene rides along and the
    // manifest references it relatively.
    if let Err(e) = scene::write_scene(&scene, &out.join("scene.json")) {
        return fail(e.to_string(), EXIT_IO);
    }
    let cfg = GenerateConfig { width, height, kernel_sigma, max_bounces };
    match pas_oracle::generate_dataset(&scene, "scene.json", &tx_positions, &freqs, out, &cfg) {
        Ok(manifest) => {
            println!("{}", out.join("manifest.json").display());
            println!("{} samples", manifest.samples.len());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.to_string(), EXIT_IO),
    }
}

struct TrainArgs {
    manifest: PathBuf,
    out: PathBuf,
    iters: u64,
    seed: u64,
    lambda: f64,
    mode: String,
    train_frac: f64,
    split_seed: u64,
    train_freqs: Option<String>,
    test_freqs: Option<String>,
    metrics: Option<PathBuf>,
    init_surface_points: usize,
    init_volume_points: usize,
    max_gaussians: Option<usize>,
    densify_interval: Option<u64>,
    densify_grad_threshold: Option<f64>,
    reset_interval: Option<u64>,
    lr_net: Option<f64>,
    lr_delta: Option<f64>,
}

fn cmd_train(args: TrainArgs) -> ExitCode {
    let manifest = match dataset_io::load_manifest(&args.manifest) {
        Ok(m) => m,
        Err(e) => return fail(e.to_string(), dataset_exit(&e)),
    };
    let dataset_dir = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let scene = match scene::load_scene(&dataset_dir.join(&manifest.scene_file)) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string(), scene_exit(&e)),
    };
    let spec = match split_spec(args.train_frac, args.split_seed, &args.train_freqs, &args.test_freqs) {
        Ok(s) => s,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let (train_ids, _) = match dataset_io::split(&manifest, &spec) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string(), EXIT_USAGE),
    };

    let mut cfg = TrainConfig::for_scene(scene.bounds.extent(), args.iters);
    cfg.lambda = args.lambda;
    cfg.seed = args.seed;
    cfg.mode = match args.mode.as_str() {
        "alpha" => RenderMode::Alpha,
        "paper_literal" => RenderMode::PaperLiteral,
        other => return fail(format!("unknown mode {other:?}"), EXIT_USAGE),
    };
    cfg.init_surface_points = args.init_surface_points;
    cfg.init_volume_points = args.init_volume_points;
    if let Some(v) = args.max_gaussians {
        cfg.max_gaussians = v;
    }
    if let Some(v) = args.densify_interval {
        cfg.densify_interval = v;
    }
    if let Some(v) = args.densify_grad_threshold {
        cfg.densify_grad_threshold = v;
    }
    if let Some(v) = args.reset_interval {
        cfg.reset_interval = v;
    }
    if let Some(v) = args.lr_net {
        cfg.lr_net = v;
    }
    if let Some(v) = args.lr_delta {
        cfg.lr_delta = v;
    }

    match training::train(&scene, &manifest, &dataset_dir, &train_ids, cfg, args.metrics.as_deref()) {
        Ok((trainer, outcome)) => {
            if let Err(e) = checkpoint::save(&trainer, &args.out) {
                return fail(e.to_string(), EXIT_IO);
            }
            println!(
                "trained {} iterations over {} samples: final loss {:.6}, {} gaussians",
                trainer.iteration,
                train_ids.len(),
                outcome.final_loss,
                trainer.cloud.len()
            );
            println!("checkpoint: {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.to_string(), train_exit(&e)),
    }
}

fn cmd_render(checkpoint_path: &Path, tx: &str, freq: f64, out: &Path) -> ExitCode {
    let tx = match parse_vec3(tx) {
        Ok(t) => t,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    if freq <= 0.0 {
        return fail(format!("--freq must be positive, got {freq}"), EXIT_USAGE);
    }
    let trainer = match checkpoint::load(checkpoint_path) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string(), train_exit(&e)),
    };
    let img = match training::render_field(&trainer, tx, freq) {
        Ok(i) => i,
        Err(e) => return fail(e.to_string(), train_exit(&e)),
    };
    // Raw sample in linear power units, preview in normalized units.
    let linear = dataset_io::denormalize(&img.values, &trainer.meta.norm);
    if let Err(e) = dataset_io::write_sample(&linear, img.width, img.height, out) {
        return fail(e.to_string(), EXIT_IO);
    }
    let pgm_path = PathBuf::from(format!("{}.pgm", out.display()));
    if let Err(e) = write_pgm(&img, &pgm_path) {
        return fail(format!("writing {}: {e}", pgm_path.display()), EXIT_IO);
    }
    println!("{}", out.display());
    println!("{}", pgm_path.display());
    ExitCode::SUCCESS
}

fn cmd_eval(
    checkpoint_path: &Path,
    manifest_path: &Path,
    out: &Path,
    train_frac: f64,
    split_seed: u64,
    train_freqs: &Option<String>,
    test_freqs: &Option<String>,
) -> ExitCode {
    let trainer = match checkpoint::load(checkpoint_path) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string(), train_exit(&e)),
    };
    let manifest = match dataset_io::load_manifest(manifest_path) {
        Ok(m) => m,
        Err(e) => return fail(e.to_string(), dataset_exit(&e)),
    };
    let dataset_dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let spec = match split_spec(train_frac, split_seed, train_freqs, test_freqs) {
        Ok(s) => s,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let (_, test_ids) = match dataset_io::split(&manifest, &spec) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string(), EXIT_USAGE),
    };
    match evaluate::evaluate(&trainer, &manifest, &dataset_dir, &test_ids) {
        Ok(report) => {
            if let Err(e) = std::fs::write(out, report.to_csv()) {
                return fail(format!("writing {}: {e}", out.display()), EXIT_IO);
            }
            println!(
                "{} samples, mean ssim {:.4}, median ssim {:.4}",
                report.n_total, report.overall_mean, report.overall_median
            );
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.to_string(), train_exit(&e)),
    }
}
