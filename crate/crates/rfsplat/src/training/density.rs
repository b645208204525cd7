//! Adaptive density control: clone under-reconstructed Gaussians, split
//! oversized ones, prune minimal contributors, and periodically reset the
//! attenuation statistic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geom::{self, logit, quat_to_mat};
use crate::splat_renderer::RenderMode;

use super::Trainer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// The opacity-like pruning statistic: how strongly the Gaussian shows up
/// under the active compositing mode.
fn prune_statistic(delta_o: f64, mode: RenderMode) -> f64 {
    match mode {
        RenderMode::Alpha => 1.0 - delta_o,
        RenderMode::PaperLiteral => delta_o,
    }
}

/// Apply one density-control pass and reset the gradient accumulators.
///
/// Gaussians whose mean screen-space positional gradient exceeds the
/// threshold are cloned (small ones, the copy displaced one gradient step)
/// or split in two (large ones, children sampled from the parent with
/// scales divided by 1.6). Gaussians whose pruning statistic falls below
/// the prune threshold are removed first.
pub fn densify_and_prune(trainer: &mut Trainer, rng: &mut ChaCha8Rng) -> DensifyReport {
    let cfg = trainer.cfg.clone();
    let mut report = DensifyReport::default();

    // Prune.
    let keep: Vec<bool> = (0..trainer.cloud.len())
        .map(|i| prune_statistic(trainer.cloud.delta_o(i), cfg.mode) >= cfg.prune_threshold)
        .collect();
    report.pruned = keep.iter().filter(|&&k| !k).count();
    if report.pruned > 0 {
        retain(trainer, &keep);
    }

    // Clone / split decisions on the survivors.
    let n = trainer.cloud.len();
    let mut clones: Vec<usize> = Vec::new();
    let mut splits: Vec<usize> = Vec::new();
    for i in 0..n {
        if trainer.accum.count[i] == 0 {
            continue;
        }
        let mean_grad = trainer.accum.pix_norm[i] / trainer.accum.count[i] as f64;
        if mean_grad <= cfg.densify_grad_threshold {
            continue;
        }
        let s = trainer.cloud.scales(i);
        let max_scale = s[0].max(s[1]).max(s[2]);
        if max_scale < cfg.scale_split_threshold {
            clones.push(i);
        } else {
            splits.push(i);
        }
    }

    let budget = cfg.max_gaussians.saturating_sub(n);
    clones.truncate(budget);
    let split_budget = budget.saturating_sub(clones.len());
    splits.truncate(split_budget);

    for &i in &clones {
        let count = trainer.accum.count[i] as f64;
        let step = geom::scale(trainer.accum.world[i], -cfg.lr_position / count);
        let mean = geom::add(trainer.cloud.means[i], step);
        push_gaussian(
            trainer,
            mean,
            trainer.cloud.log_scales[i],
            trainer.cloud.rotations[i],
            trainer.cloud.delta_latents[i],
        );
    }
    report.cloned = clones.len();

    // Split: two children sampled from the parent distribution, scales
    // divided by 1.6; the parent is removed afterwards.
    let shrink = 1.6f64.ln();
    for &i in &splits {
        let rot = quat_to_mat(trainer.cloud.rotations[i]);
        let scales = trainer.cloud.scales(i);
        let child_ls = [
            trainer.cloud.log_scales[i][0] - shrink,
            trainer.cloud.log_scales[i][1] - shrink,
            trainer.cloud.log_scales[i][2] - shrink,
        ];
        for _ in 0..2 {
            let z = [gauss(rng), gauss(rng), gauss(rng)];
            let local = [scales[0] * z[0], scales[1] * z[1], scales[2] * z[2]];
            let mean = geom::add(trainer.cloud.means[i], geom::mat_vec(&rot, local));
            push_gaussian(trainer, mean, child_ls, trainer.cloud.rotations[i], trainer.cloud.delta_latents[i]);
        }
    }
    report.split = splits.len();
    if !splits.is_empty() {
        let keep: Vec<bool> = (0..trainer.cloud.len()).map(|i| !splits.contains(&i)).collect();
        retain(trainer, &keep);
    }

    trainer.accum.reset(trainer.cloud.len());
    report
}

/// Reset the opacity-like statistic to at most 0.01 through the latent and
/// clear the attenuation optimizer moments so the reset sticks.
pub fn reset_attenuation(trainer: &mut Trainer) {
    let mode = trainer.cfg.mode;
    for i in 0..trainer.cloud.len() {
        let delta_o = trainer.cloud.delta_o(i);
        let stat = prune_statistic(delta_o, mode).min(0.01);
        let new_delta_o = match mode {
            RenderMode::Alpha => 1.0 - stat,
            RenderMode::PaperLiteral => stat,
        };
        trainer.cloud.delta_latents[i] = logit(new_delta_o.clamp(1e-6, 1.0 - 1e-6));
    }
    trainer.opt.delta.zero_moments();
}

fn push_gaussian(trainer: &mut Trainer, mean: [f64; 3], ls: [f64; 3], rot: [f64; 4], latent: f64) {
    trainer.cloud.means.push(mean);
    trainer.cloud.log_scales.push(ls);
    trainer.cloud.rotations.push(rot);
    trainer.cloud.delta_latents.push(latent);
    trainer.opt.position.append_rows(1, 3);
    trainer.opt.scale.append_rows(1, 3);
    trainer.opt.rotation.append_rows(1, 4);
    trainer.opt.delta.append_rows(1, 1);
    trainer.accum.pix_norm.push(0.0);
    trainer.accum.world.push([0.0; 3]);
    trainer.accum.count.push(0);
}

fn retain(trainer: &mut Trainer, keep: &[bool]) {
    let filter_vec3 = |v: &mut Vec<[f64; 3]>| {
        let mut it = keep.iter();
        v.retain(|_| *it.next().unwrap());
    };
    filter_vec3(&mut trainer.cloud.means);
    filter_vec3(&mut trainer.cloud.log_scales);
    {
        let mut it = keep.iter();
        trainer.cloud.rotations.retain(|_| *it.next().unwrap());
    }
    {
        let mut it = keep.iter();
        trainer.cloud.delta_latents.retain(|_| *it.next().unwrap());
    }
    trainer.opt.position.retain_rows(keep, 3);
    trainer.opt.scale.retain_rows(keep, 3);
    trainer.opt.rotation.retain_rows(keep, 4);
    trainer.opt.delta.retain_rows(keep, 1);
    {
        let mut it = keep.iter();
        trainer.accum.pix_norm.retain(|_| *it.next().unwrap());
    }
    {
        let mut it = keep.iter();
        trainer.accum.world.retain(|_| *it.next().unwrap());
    }
    {
        let mut it = keep.iter();
        trainer.accum.count.retain(|_| *it.next().unwrap());
    }
}

/// Box-Muller standard normal from a uniform stream.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
