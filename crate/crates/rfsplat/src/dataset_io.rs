//! Dataset container, normalization, and train/test splitting.
//!
//! Samples are headerless raw 32-bit IEEE-754 little-endian grids,
//! row-major, H rows of W; the JSON manifest carries metadata plus the
//! dataset-wide dB normalization window so every sample shares one scale.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;

/// Offset under the dB conversion so silence maps to a finite floor.
pub const POWER_EPS: f64 = 1e-20;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("size mismatch on {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("split error: {0}")]
    Split(String),
}

/// dB window shared by the whole dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub db_floor: f64,
    pub db_ceil: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRef {
    pub file: String,
    pub tx: Vec3,
    pub freq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "H")]
    pub height: usize,
    pub samples: Vec<SampleRef>,
    pub norm: NormStats,
    pub scene_file: String,
    pub version: u32,
}

impl DatasetManifest {
    /// Distinct frequencies in first-appearance order.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut freqs: Vec<f64> = Vec::new();
        for s in &self.samples {
            if !freqs.contains(&s.freq) {
                freqs.push(s.freq);
            }
        }
        freqs
    }

    /// Distinct TX positions in first-appearance order.
    pub fn tx_positions(&self) -> Vec<Vec3> {
        let mut txs: Vec<Vec3> = Vec::new();
        for s in &self.samples {
            if !txs.contains(&s.tx) {
                txs.push(s.tx);
            }
        }
        txs
    }
}

/// Train/test partition request. TX positions are partitioned once and the
/// same partition applies at every frequency; empty `test_freqs` means all
/// frequencies appear in both splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub tx_train_fraction: f64,
    pub seed: u64,
    pub train_freqs: Vec<f64>,
    pub test_freqs: Vec<f64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { tx_train_fraction: 0.8, seed: 0, train_freqs: vec![], test_freqs: vec![] }
    }
}

/// Write a grid as raw f32 LE.
pub fn write_sample(values: &[f64], w: usize, h: usize, path: &Path) -> Result<(), DatasetError> {
    if values.len() != w * h {
        return Err(DatasetError::SizeMismatch {
            path: path.display().to_string(),
            expected: w * h * 4,
            found: values.len() * 4,
        });
    }
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read a raw f32 LE grid, checking the exact byte size.
pub fn read_sample(path: &Path, w: usize, h: usize) -> Result<Vec<f64>, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let expected = w * h * 4;
    if bytes.len() != expected {
        return Err(DatasetError::SizeMismatch {
            path: path.display().to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    let text =
        serde_json::to_string_pretty(manifest).map_err(|e| DatasetError::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a manifest and validate that every referenced sample exists with
/// exactly W*H*4 bytes.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DatasetError::Parse(e.to_string()))?;
    if manifest.norm.db_ceil <= manifest.norm.db_floor {
        return Err(DatasetError::Parse("norm: db_ceil must exceed db_floor".into()));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let expected = manifest.width * manifest.height * 4;
    for s in &manifest.samples {
        let sp = base.join(&s.file);
        let meta = std::fs::metadata(&sp).map_err(|source| DatasetError::Io {
            path: sp.display().to_string(),
            source,
        })?;
        if meta.len() as usize != expected {
            return Err(DatasetError::SizeMismatch {
                path: sp.display().to_string(),
                expected,
                found: meta.len() as usize,
            });
        }
    }
    Ok(manifest)
}

/// Map linear power to [0, 1] through the dataset dB window.
pub fn normalize(values: &[f64], norm: &NormStats) -> Vec<f64> {
    let span = norm.db_ceil - norm.db_floor;
    values
        .iter()
        .map(|&v| (((10.0 * (v + POWER_EPS).log10()) - norm.db_floor) / span).clamp(0.0, 1.0))
        .collect()
}

/// Inverse of `normalize` for t in [0, 1].
pub fn denormalize(values: &[f64], norm: &NormStats) -> Vec<f64> {
    let span = norm.db_ceil - norm.db_floor;
    values
        .iter()
        .map(|&t| {
            let db = norm.db_floor + t.clamp(0.0, 1.0) * span;
            (10f64.powf(db / 10.0) - POWER_EPS).max(0.0)
        })
        .collect()
}

/// Partition sample indices into train and test sets. TX positions are
/// shuffled deterministically by the split seed and partitioned by
/// `tx_train_fraction`; frequency filters then select membership.
pub fn split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(spec.tx_train_fraction > 0.0 && spec.tx_train_fraction < 1.0) {
        return Err(DatasetError::Split(format!(
            "tx_train_fraction must be in (0, 1), got {}",
            spec.tx_train_fraction
        )));
    }
    let all_freqs = manifest.frequencies();
    for f in spec.train_freqs.iter().chain(&spec.test_freqs) {
        if !all_freqs.contains(f) {
            return Err(DatasetError::Split(format!("frequency {f} Hz absent from manifest")));
        }
    }
    for f in &spec.train_freqs {
        if spec.test_freqs.contains(f) {
            return Err(DatasetError::Split(format!(
                "frequency {f} Hz appears in both train_freqs and test_freqs"
            )));
        }
    }

    let mut txs = manifest.tx_positions();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    txs.shuffle(&mut rng);
    let n_train = ((spec.tx_train_fraction * txs.len() as f64).floor() as usize)
        .clamp(1, txs.len().saturating_sub(1).max(1));
    let train_txs = &txs[..n_train];

    let in_train_freq = |f: f64| spec.train_freqs.is_empty() || spec.train_freqs.contains(&f);
    let in_test_freq = |f: f64| spec.test_freqs.is_empty() || spec.test_freqs.contains(&f);

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, s) in manifest.samples.iter().enumerate() {
        let tx_in_train = train_txs.contains(&s.tx);
        if tx_in_train && in_train_freq(s.freq) {
            train.push(i);
        } else if !tx_in_train && in_test_freq(s.freq) {
            test.push(i);
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("rfsplat-ds-{}-{name}", std::process::id()))
    }

    fn toy_manifest(n_tx: usize, freqs: &[f64]) -> DatasetManifest {
        let mut samples = Vec::new();
        for t in 0..n_tx {
            for &f in freqs {
                samples.push(SampleRef {
                    file: format!("tx{t}_f{f}.f32"),
                    tx: [t as f64, 0.0, 0.0],
                    freq: f,
                });
            }
        }
        DatasetManifest {
            width: 8,
            height: 4,
            samples,
            norm: NormStats { db_floor: -60.0, db_ceil: 0.0 },
            scene_file: "scene.json".into(),
            version: 1,
        }
    }

    #[test]
    fn sample_roundtrip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (17, 9);
        let values: Vec<f64> = (0..w * h).map(|_| (rng.gen::<f32>() * 10.0) as f64).collect();
        let path = tmp("rt.f32");
        write_sample(&values, w, h, &path).unwrap();
        let back = read_sample(&path, w, h).unwrap();
        // Values were f32-representable, so the round trip is exact.
        assert_eq!(values, back);
    }

    #[test]
    fn sample_file_size() {
        let path = tmp("size.f32");
        write_sample(&vec![0.0; 90 * 360], 360, 90, &path).unwrap();
        // H * W * 4 bytes, headerless.
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 90 * 360 * 4);
    }

    #[test]
    fn read_wrong_width_fails() {
        let path = tmp("wrong.f32");
        write_sample(&vec![0.0; 8 * 4], 8, 4, &path).unwrap();
        assert!(matches!(
            read_sample(&path, 9, 4),
            Err(DatasetError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let norm = NormStats { db_floor: -60.0, db_ceil: 0.0 };
        let ceil_v = 10f64.powf(norm.db_ceil / 10.0);
        let out = normalize(&[ceil_v, 0.0], &norm);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert_eq!(out[1], 0.0);
        let mid_v = 10f64.powf((norm.db_floor + norm.db_ceil) / 2.0 / 10.0);
        let out = normalize(&[mid_v], &norm);
        assert!((out[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalize_monotone_and_idempotent_range() {
        let norm = NormStats { db_floor: -50.0, db_ceil: 10.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut values: Vec<f64> = (0..500).map(|_| 10f64.powf(rng.gen_range(-9.0..3.0))).collect();
        values.sort_by(f64::total_cmp);
        let out = normalize(&values, &norm);
        for pair in out.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        for &t in &out {
            assert!((0.0..=1.0).contains(&t));
        }
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let norm = NormStats { db_floor: -60.0, db_ceil: 0.0 };
        let ts = [0.0, 0.1, 0.5, 0.9, 1.0];
        let v = denormalize(&ts, &norm);
        let back = normalize(&v, &norm);
        for (a, b) in ts.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn split_900_tx_80_20() {
        let m = toy_manifest(900, &[1e9]);
        let (train, test) = split(&m, &SplitSpec::default()).unwrap();
        assert_eq!(train.len(), 720);
        assert_eq!(test.len(), 180);
    }

    #[test]
    fn split_frequency_combination() {
        // Train on the band edges, test everywhere else.
        let freqs: Vec<f64> = [1.0, 2.4, 5.0, 10.0, 24.25, 37.0, 47.0, 60.0, 77.0, 94.0]
            .iter()
            .map(|g| g * 1e9)
            .collect();
        let m = toy_manifest(10, &freqs);
        let spec = SplitSpec {
            train_freqs: vec![1e9, 94e9],
            test_freqs: freqs[1..9].to_vec(),
            ..Default::default()
        };
        let (train, test) = split(&m, &spec).unwrap();
        for &i in &train {
            assert!(m.samples[i].freq == 1e9 || m.samples[i].freq == 94e9);
        }
        for &i in &test {
            assert!(m.samples[i].freq != 1e9 && m.samples[i].freq != 94e9);
        }
        // 8 train TX x 2 freqs, 2 test TX x 8 freqs.
        assert_eq!(train.len(), 16);
        assert_eq!(test.len(), 16);
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let m = toy_manifest(10, &[1e9, 10e9]);
        let spec = SplitSpec::default();
        let (tr1, te1) = split(&m, &spec).unwrap();
        let (tr2, te2) = split(&m, &spec).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.len(), 16);
        assert_eq!(te1.len(), 4);
        for i in &tr1 {
            assert!(!te1.contains(i));
        }
        // TX partition covers everything.
        let mut txs: Vec<[f64; 3]> = Vec::new();
        for &i in tr1.iter().chain(&te1) {
            if !txs.contains(&m.samples[i].tx) {
                txs.push(m.samples[i].tx);
            }
        }
        assert_eq!(txs.len(), 10);
    }

    #[test]
    fn split_same_tx_partition_at_every_frequency() {
        let m = toy_manifest(20, &[1e9, 10e9, 94e9]);
        let (train, _) = split(&m, &SplitSpec::default()).unwrap();
        // Group train TX by frequency: all groups identical.
        let mut by_freq: std::collections::BTreeMap<u64, Vec<[f64; 3]>> = Default::default();
        for &i in &train {
            by_freq
                .entry(m.samples[i].freq as u64)
                .or_default()
                .push(m.samples[i].tx);
        }
        let groups: Vec<_> = by_freq.values().cloned().collect();
        for g in &groups[1..] {
            assert_eq!(*g, groups[0]);
        }
    }

    #[test]
    fn split_unknown_frequency_rejected() {
        let m = toy_manifest(4, &[1e9]);
        let spec = SplitSpec { train_freqs: vec![7e9], ..Default::default() };
        assert!(matches!(split(&m, &spec), Err(DatasetError::Split(_))));
    }
}
