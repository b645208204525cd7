//! Evaluation: per-frequency median and mean SSIM over a test split,
//! written as CSV with a final aggregate row.

use std::path::Path;

use rayon::prelude::*;

use crate::dataset_io::{self, DatasetManifest};
use crate::pas::PasImage;

use super::{render_field, ssim::ssim, TrainError, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub freq: f64,
    pub n: usize,
    pub median_ssim: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub n_total: usize,
    pub overall_median: f64,
    pub overall_mean: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,n,median_ssim,mean_ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                r.freq, r.n, r.median_ssim, r.mean_ssim
            ));
        }
        out.push_str(&format!(
            "all,{},{:.6},{:.6}\n",
            self.n_total, self.overall_median, self.overall_mean
        ));
        out
    }

    /// Mean SSIM at one frequency, if present.
    pub fn mean_at(&self, freq: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.freq == freq).map(|r| r.mean_ssim)
    }
}

/// Lower-of-two median of a sorted slice.
fn median_sorted(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

/// Render the model at every test sample and compare against the stored
/// ground truth, both in normalized units. Parallel over samples with an
/// ordered merge.
pub fn evaluate(
    trainer: &Trainer,
    manifest: &DatasetManifest,
    dataset_dir: &Path,
    test_ids: &[usize],
) -> Result<EvalReport, TrainError> {
    if test_ids.is_empty() {
        return Err(TrainError::Shape("empty evaluation split".into()));
    }
    for &id in test_ids {
        if id >= manifest.samples.len() {
            return Err(TrainError::Shape(format!("sample id {id} out of range")));
        }
    }

    let scored: Vec<Result<(f64, f64), TrainError>> = test_ids
        .par_iter()
        .map(|&id| {
            let s = &manifest.samples[id];
            let raw = dataset_io::read_sample(
                &dataset_dir.join(&s.file),
                manifest.width,
                manifest.height,
            )?;
            let gt = dataset_io::normalize(&raw, &manifest.norm);
            let pred: PasImage = render_field(trainer, s.tx, s.freq)?;
            let score = ssim(&pred.values, &gt, manifest.width, manifest.height)
                .map_err(TrainError::Shape)?;
            Ok((s.freq, score))
        })
        .collect();

    let mut by_freq: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut all = Vec::with_capacity(test_ids.len());
    for r in scored {
        let (freq, score) = r?;
        all.push(score);
        match by_freq.iter_mut().find(|(f, _)| *f == freq) {
            Some((_, v)) => v.push(score),
            None => by_freq.push((freq, vec![score])),
        }
    }
    by_freq.sort_by(|a, b| a.0.total_cmp(&b.0));

    let rows = by_freq
        .into_iter()
        .map(|(freq, mut scores)| {
            scores.sort_by(f64::total_cmp);
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            EvalRow { freq, n: scores.len(), median_ssim: median_sorted(&scores), mean_ssim: mean }
        })
        .collect::<Vec<_>>();

    let mut all_sorted = all.clone();
    all_sorted.sort_by(f64::total_cmp);
    Ok(EvalReport {
        n_total: all.len(),
        overall_median: median_sorted(&all_sorted),
        overall_mean: all.iter().sum::<f64>() / all.len() as f64,
        rows,
    })
}
