//! Training loop: loss, optimizer, adaptive density control,
//! checkpointing, and evaluation over a PAS dataset.
//!
//! One "epoch" is one (TX, frequency) sample; the sample order reshuffles
//! every pass with the run seed. Every parallel section reduces in a fixed
//! order, so a run is bitwise reproducible at any worker count.

pub mod adam;
pub mod checkpoint;
pub mod density;
pub mod evaluate;
pub mod loss;
pub mod ssim;

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset_io::{self, DatasetError, DatasetManifest, NormStats};
use crate::em_feature_net::{init_params, EmNetParams, EncodingConfig, NetConfig, NetOutput, NetTrace};
use crate::gaussian_field::{
    init_from_points, project, project_backward, sample_scene_points, GaussianCloud, Splat2D,
};
use crate::geom::{self, Vec3};
use crate::pas::PasImage;
use crate::scene::{RxPose, Scene};
use crate::splat_renderer::{RenderConfig, RenderError, RenderMode, Renderer};

use adam::Adam;

/// Gaussians per work chunk in deterministic gradient reductions.
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: u64, loss: f64 },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Everything the training loop needs beyond the dataset itself. Learning
/// rates and thresholds that scale with the scene are set by `for_scene`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Loss mix: L = (1 - lambda) L1 + lambda (1 - SSIM).
    pub lambda: f64,
    pub iterations: u64,
    pub lr_position: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_delta: f64,
    pub lr_net: f64,
    pub densify_interval: u64,
    /// Density control stops after this iteration.
    pub densify_until: u64,
    /// Mean screen-space positional gradient (normalized pixels) above
    /// which a Gaussian is cloned or split.
    pub densify_grad_threshold: f64,
    /// World-space scale (meters) separating clone from split.
    pub scale_split_threshold: f64,
    /// Opacity statistic below which a Gaussian is pruned.
    pub prune_threshold: f64,
    pub reset_interval: u64,
    /// Hard cap on cloud growth; clone/split pause at the cap.
    pub max_gaussians: usize,
    pub seed: u64,
    pub mode: RenderMode,
    pub cutoff_sigmas: f64,
    pub transmittance_floor: f64,
    pub tile_size: usize,
    pub loss_log_window: usize,
    pub init_surface_points: usize,
    pub init_volume_points: usize,
    pub net: NetConfig,
    pub l_pos: usize,
    pub l_freq: usize,
}

impl TrainConfig {
    /// Defaults scaled to a scene extent (bounds diagonal, meters).
    pub fn for_scene(extent: f64, iterations: u64) -> Self {
        TrainConfig {
            lambda: 0.2,
            iterations,
            lr_position: 2e-4 * extent,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_delta: 5e-2,
            lr_net: 1e-3,
            densify_interval: 100,
            densify_until: iterations / 2,
            densify_grad_threshold: 2e-4,
            scale_split_threshold: 0.05 * extent,
            prune_threshold: 0.005,
            reset_interval: 3000,
            max_gaussians: 50_000,
            seed: 0,
            mode: RenderMode::Alpha,
            cutoff_sigmas: 3.0,
            transmittance_floor: 1e-4,
            tile_size: 16,
            loss_log_window: 7500,
            init_surface_points: 2000,
            init_volume_points: 500,
            net: NetConfig::default(),
            l_pos: 10,
            l_freq: 6,
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            mode: self.mode,
            cutoff_sigmas: self.cutoff_sigmas,
            transmittance_floor: self.transmittance_floor,
            tile_size: self.tile_size,
        }
    }
}

/// Model-side facts a checkpoint must carry to render standalone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMeta {
    pub width: usize,
    pub height: usize,
    pub rx: RxPose,
    pub norm: NormStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub position: Adam,
    pub scale: Adam,
    pub rotation: Adam,
    pub delta: Adam,
    pub net: Adam,
}

impl Optimizers {
    pub fn new(n_gaussians: usize, n_net: usize) -> Self {
        Optimizers {
            position: Adam::new(3 * n_gaussians),
            scale: Adam::new(3 * n_gaussians),
            rotation: Adam::new(4 * n_gaussians),
            delta: Adam::new(n_gaussians),
            net: Adam::new(n_net),
        }
    }
}

/// Positional-gradient accumulators driving density control.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyAccum {
    /// Sum of screen-space gradient norms (normalized pixel units).
    pub pix_norm: Vec<f64>,
    /// Sum of world-space mean gradients (for clone displacement).
    pub world: Vec<Vec3>,
    /// Steps in which the Gaussian was rendered.
    pub count: Vec<u32>,
}

impl DensifyAccum {
    fn new(n: usize) -> Self {
        DensifyAccum { pix_norm: vec![0.0; n], world: vec![[0.0; 3]; n], count: vec![0; n] }
    }

    pub fn reset(&mut self, n: usize) {
        *self = DensifyAccum::new(n);
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub cloud: GaussianCloud,
    pub net: EmNetParams,
    pub meta: ModelMeta,
    pub opt: Optimizers,
    pub accum: DensifyAccum,
    pub iteration: u64,
    /// Inputs clamped into their normalization range so far.
    pub clamp_warnings: u64,
}

impl Trainer {
    /// Initialize from a scene: sample the stand-in point cloud, build the
    /// Gaussians over it, and seed the feature network.
    pub fn new(scene: &Scene, width: usize, height: usize, norm: NormStats, cfg: TrainConfig) -> Self {
        let points = sample_scene_points(
            scene,
            cfg.init_surface_points,
            cfg.init_volume_points,
            cfg.seed,
        );
        let cloud = init_from_points(&points, cfg.seed);
        let enc = EncodingConfig { l_pos: cfg.l_pos, l_freq: cfg.l_freq, bounds: scene.bounds };
        let net = init_params(enc, cfg.net, cfg.seed);
        let n = cloud.len();
        let n_net = net.param_count();
        Trainer {
            cfg,
            cloud,
            net,
            meta: ModelMeta { width, height, rx: scene.rx, norm },
            opt: Optimizers::new(n, n_net),
            accum: DensifyAccum::new(n),
            iteration: 0,
            clamp_warnings: 0,
        }
    }

    /// Per-Gaussian forward state for one (TX, freq): projection plus the
    /// network outputs for the visible set.
    #[allow(clippy::type_complexity)]
    fn forward_field(
        &self,
        tx: Vec3,
        freq: f64,
    ) -> (Vec<Splat2D>, Vec<(NetOutput, NetTrace)>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let splats = project(&self.cloud, &self.meta.rx, self.meta.width, self.meta.height);
        let outs: Vec<(NetOutput, NetTrace)> = splats
            .par_chunks(GRAD_CHUNK)
            .flat_map_iter(|chunk| {
                chunk
                    .iter()
                    .map(|s| self.net.forward_traced(self.cloud.means[s.gaussian_id], tx, freq))
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut delta = Vec::with_capacity(splats.len());
        let mut sig = Vec::with_capacity(splats.len());
        let mut delta_sum = Vec::with_capacity(splats.len());
        for (s, (out, _)) in splats.iter().zip(&outs) {
            let sum = self.cloud.delta_o(s.gaussian_id) + out.delta_f;
            delta.push(sum.clamp(0.0, 1.0));
            delta_sum.push(sum);
            sig.push(out.sig);
        }
        (splats, outs, delta, sig, delta_sum)
    }

    /// Render the field at (TX, freq) in normalized units.
    pub fn render(&self, tx: Vec3, freq: f64) -> Result<PasImage, RenderError> {
        let (splats, _, delta, sig, _) = self.forward_field(tx, freq);
        let renderer = Renderer::new(
            &splats,
            &delta,
            &sig,
            self.meta.width,
            self.meta.height,
            self.cfg.render_config(),
        )?;
        let mut img = renderer.forward();
        img.tx = tx;
        img.freq = freq;
        Ok(img)
    }

    /// Loss of the current model against one normalized ground truth,
    /// along the same forward path `train_step` differentiates.
    pub fn loss_at(&self, tx: Vec3, freq: f64, gt: &PasImage) -> Result<f64, TrainError> {
        let (splats, _, delta, sig, _) = self.forward_field(tx, freq);
        let renderer = Renderer::new(
            &splats,
            &delta,
            &sig,
            self.meta.width,
            self.meta.height,
            self.cfg.render_config(),
        )?;
        let (value, _) = loss::loss(&renderer.forward(), gt, self.cfg.lambda)
            .map_err(TrainError::Shape)?;
        Ok(value)
    }

    /// Full-chain gradients for one sample: network -> attenuation clamp
    /// -> projection -> rasterizer -> loss, without touching parameters.
    pub fn gradients(&self, tx: Vec3, freq: f64, gt: &PasImage) -> Result<(f64, StepGrads), TrainError> {
        let (w, h) = (self.meta.width, self.meta.height);
        let (splats, outs, delta, sig, delta_sum) = self.forward_field(tx, freq);
        let clamp_events = outs.iter().filter(|(o, _)| o.clamped).count() as u64;

        let renderer = Renderer::new(&splats, &delta, &sig, w, h, self.cfg.render_config())?;
        let pred = renderer.forward();
        let (loss_value, d_pred) =
            loss::loss(&pred, gt, self.cfg.lambda).map_err(TrainError::Shape)?;
        if !loss_value.is_finite() {
            return Err(TrainError::Diverged { iteration: self.iteration, loss: loss_value });
        }
        let rg = renderer.backward(&d_pred)?;

        // Projection backward per visible Gaussian.
        let proj_grads: Vec<_> = (0..splats.len())
            .into_par_iter()
            .map(|k| {
                project_backward(
                    &self.cloud,
                    splats[k].gaussian_id,
                    &self.meta.rx,
                    w,
                    h,
                    rg.d_pixel_mean[k],
                    rg.d_cov2d[k],
                )
            })
            .collect();

        // Network backward, chunked so the parameter-gradient reduction
        // order is fixed regardless of thread count.
        let n_net = self.net.param_count();
        let zero_h = vec![0.0; self.net.net.h_dim];
        let indices: Vec<usize> = (0..splats.len()).collect();
        let partials: Vec<(Vec<f64>, Vec<Vec3>)> = indices
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut flat = vec![0.0; n_net];
                let mut d_pg = Vec::with_capacity(chunk.len());
                for &k in chunk {
                    let d_delta_f =
                        if clamp_passes(delta_sum[k], rg.d_delta[k]) { rg.d_delta[k] } else { 0.0 };
                    let ig = self.net.backward(&outs[k].1, &zero_h, d_delta_f, rg.d_sig[k], &mut flat);
                    d_pg.push(ig.d_p_g);
                }
                (flat, d_pg)
            })
            .collect();
        let mut d_net = vec![0.0; n_net];
        let mut d_pg_all: Vec<Vec3> = Vec::with_capacity(splats.len());
        for (flat, d_pg) in &partials {
            for (acc, g) in d_net.iter_mut().zip(flat) {
                *acc += g;
            }
            d_pg_all.extend_from_slice(d_pg);
        }

        // Gather per-Gaussian gradients and density statistics.
        let n = self.cloud.len();
        let mut grads = StepGrads {
            loss_value,
            d_mean: vec![[0.0; 3]; n],
            d_log_scale: vec![[0.0; 3]; n],
            d_rotation: vec![[0.0; 4]; n],
            d_latent: vec![0.0; n],
            d_net,
            pix_norm: vec![0.0; n],
            world: vec![[0.0; 3]; n],
            visible: vec![0; n],
            clamp_events,
        };
        for (k, s) in splats.iter().enumerate() {
            let gi = s.gaussian_id;
            let pg = &proj_grads[k];
            for a in 0..3 {
                grads.d_mean[gi][a] += pg.d_mean[a] + d_pg_all[k][a];
                grads.d_log_scale[gi][a] += pg.d_log_scale[a];
                grads.world[gi][a] += pg.d_mean[a] + d_pg_all[k][a];
            }
            for a in 0..4 {
                grads.d_rotation[gi][a] += pg.d_rotation[a];
            }
            if clamp_passes(delta_sum[k], rg.d_delta[k]) {
                let s_latent = geom::logistic(self.cloud.delta_latents[gi]);
                grads.d_latent[gi] += rg.d_delta[k] * s_latent * (1.0 - s_latent);
            }
            let gx = rg.d_pixel_mean[k][0] * w as f64 / 2.0;
            let gy = rg.d_pixel_mean[k][1] * h as f64 / 2.0;
            grads.pix_norm[gi] += (gx * gx + gy * gy).sqrt();
            grads.visible[gi] += 1;
        }
        Ok((loss_value, grads))
    }

    /// One optimization step against a normalized ground-truth image.
    pub fn train_step(&mut self, tx: Vec3, freq: f64, gt: &PasImage) -> Result<f64, TrainError> {
        let (loss_value, grads) = self.gradients(tx, freq, gt)?;
        self.clamp_warnings += grads.clamp_events;

        let n = self.cloud.len();
        for gi in 0..n {
            self.accum.pix_norm[gi] += grads.pix_norm[gi];
            for a in 0..3 {
                self.accum.world[gi][a] += grads.world[gi][a];
            }
            self.accum.count[gi] += grads.visible[gi];
        }

        self.opt.position.begin_step();
        self.opt.scale.begin_step();
        self.opt.rotation.begin_step();
        self.opt.delta.begin_step();
        for gi in 0..n {
            for a in 0..3 {
                self.cloud.means[gi][a] +=
                    self.opt.position.delta(3 * gi + a, grads.d_mean[gi][a], self.cfg.lr_position);
                self.cloud.log_scales[gi][a] +=
                    self.opt.scale.delta(3 * gi + a, grads.d_log_scale[gi][a], self.cfg.lr_scale);
            }
            for a in 0..4 {
                self.cloud.rotations[gi][a] +=
                    self.opt.rotation.delta(4 * gi + a, grads.d_rotation[gi][a], self.cfg.lr_rotation);
            }
            self.cloud.delta_latents[gi] +=
                self.opt.delta.delta(gi, grads.d_latent[gi], self.cfg.lr_delta);
        }
        let mut flat_params = self.net.params_flat();
        self.opt.net.step_slice(&mut flat_params, &grads.d_net, self.cfg.lr_net);
        self.net.set_params_flat(&flat_params);

        Ok(loss_value)
    }
}

/// Subgradient policy for delta = clamp(delta_o + delta_f, 0, 1):
/// gradients pass in the interior; at a clamped boundary only those that
/// pull the sum back inside pass, so saturated attenuations never become
/// permanently stuck.
fn clamp_passes(sum: f64, grad: f64) -> bool {
    if sum > 0.0 && sum < 1.0 {
        true
    } else if sum >= 1.0 {
        grad > 0.0
    } else {
        grad < 0.0
    }
}

/// Gradients of one training sample with respect to every learnable
/// parameter, plus the statistics density control accumulates.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub loss_value: f64,
    pub d_mean: Vec<Vec3>,
    pub d_log_scale: Vec<Vec3>,
    pub d_rotation: Vec<[f64; 4]>,
    pub d_latent: Vec<f64>,
    pub d_net: Vec<f64>,
    pub pix_norm: Vec<f64>,
    pub world: Vec<Vec3>,
    pub visible: Vec<u32>,
    pub clamp_events: u64,
}

/// Render a stored model at (TX, freq); prediction clamped to [0, 1].
pub fn render_field(trainer: &Trainer, tx: Vec3, freq: f64) -> Result<PasImage, TrainError> {
    let mut img = trainer.render(tx, freq)?;
    for v in img.values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(img)
}

/// Loss telemetry of a finished run.
#[derive(Debug, Clone, Copy)]
pub struct TrainOutcome {
    pub final_loss: f64,
    /// Average of the first `loss_log_window` losses.
    pub initial_window_avg: f64,
    /// Average of the last `loss_log_window` losses.
    pub final_window_avg: f64,
}

/// Full training run over the given sample ids. Ground truth is read once
/// and normalized with the manifest window. Writes one metrics row per
/// iteration when a CSV path is given.
pub fn train(
    scene: &Scene,
    manifest: &DatasetManifest,
    dataset_dir: &Path,
    train_ids: &[usize],
    cfg: TrainConfig,
    metrics_path: Option<&Path>,
) -> Result<(Trainer, TrainOutcome), TrainError> {
    if train_ids.is_empty() {
        return Err(TrainError::Shape("empty training split".into()));
    }
    let mut gts = Vec::with_capacity(train_ids.len());
    for &id in train_ids {
        let s = &manifest.samples[id];
        let raw = dataset_io::read_sample(&dataset_dir.join(&s.file), manifest.width, manifest.height)?;
        let mut img = PasImage::zeros(manifest.width, manifest.height);
        img.values = dataset_io::normalize(&raw, &manifest.norm);
        img.tx = s.tx;
        img.freq = s.freq;
        gts.push(img);
    }

    let mut trainer = Trainer::new(scene, manifest.width, manifest.height, manifest.norm, cfg);
    let cfg = trainer.cfg.clone();

    let mut metrics = match metrics_path {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|source| TrainError::Io {
                path: p.display().to_string(),
                source,
            })?;
            let mut bw = std::io::BufWriter::new(f);
            writeln!(bw, "iteration,loss,loss_moving_avg,gaussian_count,timestamp").map_err(
                |source| TrainError::Io { path: p.display().to_string(), source },
            )?;
            Some((bw, p.display().to_string()))
        }
        None => None,
    };

    let mut order: Vec<usize> = Vec::new();
    let mut losses: Vec<f64> = Vec::with_capacity(cfg.iterations as usize);
    let mut window: VecDeque<f64> = VecDeque::with_capacity(cfg.loss_log_window.min(1 << 20));
    let mut window_sum = 0.0;
    let mut pass = 0u64;

    for iter in 1..=cfg.iterations {
        if order.is_empty() {
            order = (0..gts.len()).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(cfg.seed ^ pass.wrapping_mul(0x9E3779B97F4A7C15));
            order.shuffle(&mut rng);
            pass += 1;
        }
        let pick = order.pop().expect("order refilled above");
        let gt = &gts[pick];
        trainer.iteration = iter;
        let loss_value = trainer.train_step(gt.tx, gt.freq, gt)?;
        losses.push(loss_value);

        window.push_back(loss_value);
        window_sum += loss_value;
        if window.len() > cfg.loss_log_window {
            window_sum -= window.pop_front().expect("nonempty");
        }
        let moving_avg = window_sum / window.len() as f64;

        if let Some((bw, path)) = metrics.as_mut() {
            let ts = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            writeln!(
                bw,
                "{iter},{loss_value:.9},{moving_avg:.9},{},{ts}",
                trainer.cloud.len()
            )
            .map_err(|source| TrainError::Io { path: path.clone(), source })?;
        }

        if cfg.densify_interval > 0 && iter % cfg.densify_interval == 0 && iter <= cfg.densify_until
        {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ iter.wrapping_mul(0xA24BAED4963EE407));
            density::densify_and_prune(&mut trainer, &mut rng);
        }
        // Reset only when a full interval of recovery remains.
        if cfg.reset_interval > 0
            && iter % cfg.reset_interval == 0
            && iter + cfg.reset_interval <= cfg.iterations
        {
            density::reset_attenuation(&mut trainer);
        }
    }

    if let Some((bw, path)) = metrics.as_mut() {
        bw.flush().map_err(|source| TrainError::Io { path: path.clone(), source })?;
    }

    let outcome = if losses.is_empty() {
        TrainOutcome { final_loss: 0.0, initial_window_avg: 0.0, final_window_avg: 0.0 }
    } else {
        let wlen = cfg.loss_log_window.clamp(1, losses.len());
        let initial = losses[..wlen].iter().sum::<f64>() / wlen as f64;
        let last = losses[losses.len() - wlen..].iter().sum::<f64>() / wlen as f64;
        TrainOutcome {
            final_loss: *losses.last().expect("nonempty"),
            initial_window_avg: initial,
            final_window_avg: last,
        }
    };
    Ok((trainer, outcome))
}
