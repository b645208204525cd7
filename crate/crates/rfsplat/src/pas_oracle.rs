//! Ground-truth PAS generator.
//!
//! Propagation paths are enumerated exactly: the unobstructed (possibly
//! wall-penetrating) direct path, specular reflections up to three bounces
//! via the image-source method, and one knife-edge diffraction path per
//! flagged edge. Path powers combine incoherently and are splatted onto
//! the hemisphere grid with an isotropic Gaussian angular kernel standing
//! in for the array beam pattern.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{self, DatasetManifest, NormStats, SampleRef};
use crate::em_physics::{free_space_path_loss, knife_edge_loss, physical_coefficients, SPEED_OF_LIGHT};
use crate::gaussian_field::direction_to_pixel;
use crate::geom::{self, Vec3};
use crate::pas::PasImage;
use crate::scene::{Scene, Surface};

/// Geometric tolerance for intersection and mirroring tests, meters.
const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] dataset_io::DatasetError),
}

/// Interaction kinds along a path, ordered from TX to RX.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interaction {
    Reflect,
    Transmit,
    Diffract,
}

/// One propagation path arriving at the RX hemisphere.
#[derive(Debug, Clone, PartialEq)]
pub struct PropPath {
    /// Unit vector in the RX frame pointing toward where the energy came from.
    pub arrival_direction: Vec3,
    /// Linear relative power.
    pub power: f64,
    /// Number of specular reflections.
    pub bounce_count: usize,
    pub tags: Vec<Interaction>,
}

/// Ray-quad intersection: returns the parameter t in (eps, 1-eps) along
/// the segment a -> b, or None.
fn segment_hits_surface(a: Vec3, b: Vec3, s: &Surface) -> Option<f64> {
    let n = s.normal();
    let d = geom::sub(b, a);
    let denom = geom::dot(n, d);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = geom::dot(n, geom::sub(s.corners[0], a)) / denom;
    if t <= GEOM_EPS || t >= 1.0 - GEOM_EPS {
        return None;
    }
    let p = geom::add(a, geom::scale(d, t));
    if point_in_quad(p, s) {
        Some(t)
    } else {
        None
    }
}

/// Point-in-convex-quad test in the surface plane.
fn point_in_quad(p: Vec3, s: &Surface) -> bool {
    let n = s.normal();
    for e in 0..4 {
        let a = s.corners[e];
        let b = s.corners[(e + 1) % 4];
        let edge = geom::sub(b, a);
        let to_p = geom::sub(p, a);
        // Inside means on a consistent side of every edge.
        if geom::dot(geom::cross(edge, to_p), n) < -1e-9 {
            return false;
        }
    }
    true
}

/// Incidence angle (from the normal) of a ray direction on a surface.
fn incidence_angle(dir: Vec3, s: &Surface) -> f64 {
    let c = geom::dot(geom::normalize(dir), s.normal()).abs().clamp(0.0, 1.0);
    c.acos()
}

/// Product of transmission coefficients for every surface strictly crossed
/// by the segment, skipping indices in `skip`. Returns 0 when a crossing
/// blocks everything.
fn transmission_along(
    scene: &Scene,
    a: Vec3,
    b: Vec3,
    freq: f64,
    skip: &[usize],
    tags: &mut Vec<Interaction>,
) -> f64 {
    let mut product = 1.0;
    for (idx, s) in scene.surfaces.iter().enumerate() {
        if skip.contains(&idx) {
            continue;
        }
        if segment_hits_surface(a, b, s).is_some() {
            let theta = incidence_angle(geom::sub(b, a), s);
            let c = physical_coefficients(scene.material(&s.material), freq, theta);
            product *= c.t;
            tags.push(Interaction::Transmit);
            if product == 0.0 {
                return 0.0;
            }
        }
    }
    product
}

fn mirror_point(p: Vec3, s: &Surface) -> Vec3 {
    let n = s.normal();
    let d = geom::dot(geom::sub(p, s.corners[0]), n);
    geom::sub(p, geom::scale(n, 2.0 * d))
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Build the path arriving from world point `toward` with the given power,
/// or None when it falls below the hemisphere.
fn finish_path(
    scene: &Scene,
    toward: Vec3,
    power: f64,
    bounce_count: usize,
    tags: Vec<Interaction>,
) -> Option<PropPath> {
    if power <= 0.0 {
        return None;
    }
    let world = geom::normalize(geom::sub(toward, scene.rx.position));
    let local = scene.rx.to_local(world);
    if local[2] < 0.0 {
        return None;
    }
    Some(PropPath { arrival_direction: local, power, bounce_count, tags })
}

/// Enumerate propagation paths from `tx` to the scene RX at `freq`.
/// Output is sorted by descending power and is deterministic.
pub fn trace_paths(scene: &Scene, tx: Vec3, freq: f64, max_bounces: usize) -> Vec<PropPath> {
    assert!(max_bounces <= 3, "max_bounces must be in [0, 3]");
    let rx = scene.rx.position;
    let mut paths = Vec::new();

    // Direct path, attenuated by whatever it penetrates.
    {
        let mut tags = Vec::new();
        let through = transmission_along(scene, tx, rx, freq, &[], &mut tags);
        let d = geom::distance(tx, rx);
        if d > GEOM_EPS {
            let power = db_to_linear(free_space_path_loss(d, freq).expect("valid d, f")) * through;
            if let Some(p) = finish_path(scene, tx, power, 0, tags) {
                paths.push(p);
            }
        }
    }

    // Specular reflections via image sources: every ordered surface
    // sequence up to max_bounces with no immediate repeats.
    let n_surfaces = scene.surfaces.len();
    if n_surfaces > 0 {
        for k in 1..=max_bounces {
            let mut sequence = vec![0usize; k];
            'sequences: loop {
                if sequence.windows(2).all(|w| w[0] != w[1]) {
                    if let Some(p) = reflection_path(scene, tx, freq, &sequence) {
                        paths.push(p);
                    }
                }
                // Advance the odometer.
                let mut pos = k - 1;
                loop {
                    sequence[pos] += 1;
                    if sequence[pos] < n_surfaces {
                        break;
                    }
                    sequence[pos] = 0;
                    if pos == 0 {
                        break 'sequences;
                    }
                    pos -= 1;
                }
            }
        }
    }

    // Knife-edge diffraction over flagged edges.
    for (si, s) in scene.surfaces.iter().enumerate() {
        for e in 0..4 {
            if !s.diffracting[e] {
                continue;
            }
            let a = s.corners[e];
            let b = s.corners[(e + 1) % 4];
            if let Some(p) = diffraction_path(scene, tx, freq, si, a, b) {
                paths.push(p);
            }
        }
    }

    paths.sort_by(|a, b| {
        b.power
            .total_cmp(&a.power)
            .then(a.bounce_count.cmp(&b.bounce_count))
            .then(a.arrival_direction[0].total_cmp(&b.arrival_direction[0]))
            .then(a.arrival_direction[1].total_cmp(&b.arrival_direction[1]))
    });
    paths
}

/// Validate one ordered reflection sequence with the image-source method
/// and build its path.
fn reflection_path(scene: &Scene, tx: Vec3, freq: f64, sequence: &[usize]) -> Option<PropPath> {
    let rx = scene.rx.position;
    let k = sequence.len();

    // Forward images of the TX across the sequence.
    let mut images = Vec::with_capacity(k + 1);
    images.push(tx);
    for &si in sequence {
        let prev = *images.last().unwrap();
        images.push(mirror_point(prev, &scene.surfaces[si]));
    }

    // Walk back from RX finding the hit point on each surface.
    let mut hits = vec![[0.0; 3]; k];
    let mut segment_end = rx;
    for j in (0..k).rev() {
        let s = &scene.surfaces[sequence[j]];
        let t = segment_hits_surface(segment_end, images[j + 1], s)?;
        let p = geom::add(segment_end, geom::scale(geom::sub(images[j + 1], segment_end), t));
        hits[j] = p;
        segment_end = p;
    }

    // Total geometric length equals the distance to the deepest image.
    let total_len = geom::distance(rx, images[k]);
    if total_len <= GEOM_EPS {
        return None;
    }
    let mut power = db_to_linear(free_space_path_loss(total_len, freq).expect("valid"));
    let mut tags: Vec<Interaction> = Vec::new();

    // Segments from TX side: tx -> hits[0] -> ... -> hits[k-1] -> rx.
    let mut waypoints = Vec::with_capacity(k + 2);
    waypoints.push(tx);
    waypoints.extend_from_slice(&hits);
    waypoints.push(rx);
    for (seg, pair) in waypoints.windows(2).enumerate() {
        // Skip the reflecting surfaces that bound this segment.
        let mut skip = Vec::new();
        if seg > 0 {
            skip.push(sequence[seg - 1]);
        }
        if seg < k {
            skip.push(sequence[seg]);
        }
        power *= transmission_along(scene, pair[0], pair[1], freq, &skip, &mut tags);
        if power <= 0.0 {
            return None;
        }
        if seg < k {
            let s = &scene.surfaces[sequence[seg]];
            let theta = incidence_angle(geom::sub(pair[1], pair[0]), s);
            power *= physical_coefficients(scene.material(&s.material), freq, theta).r;
            tags.push(Interaction::Reflect);
            if power <= 0.0 {
                return None;
            }
        }
    }

    finish_path(scene, hits[k - 1], power, k, tags)
}

/// Single knife-edge diffraction across one flagged edge. The diffraction
/// point minimizes the total path length along the edge; both legs must be
/// unobstructed.
fn diffraction_path(
    scene: &Scene,
    tx: Vec3,
    freq: f64,
    surface_idx: usize,
    edge_a: Vec3,
    edge_b: Vec3,
) -> Option<PropPath> {
    let rx = scene.rx.position;
    let len = |t: f64| {
        let p = geom::add(edge_a, geom::scale(geom::sub(edge_b, edge_a), t));
        geom::distance(tx, p) + geom::distance(p, rx)
    };
    // Ternary search; the length is convex in t.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if len(m1) < len(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let t = 0.5 * (lo + hi);
    let p = geom::add(edge_a, geom::scale(geom::sub(edge_b, edge_a), t));

    // Both legs must be in clear line of sight (the owning surface is
    // excluded because the diffraction point sits on its boundary).
    for (from, to) in [(tx, p), (p, rx)] {
        for (idx, s) in scene.surfaces.iter().enumerate() {
            if idx == surface_idx {
                continue;
            }
            if segment_hits_surface(from, to, s).is_some() {
                return None;
            }
        }
    }

    let d1 = geom::distance(tx, p);
    let d2 = geom::distance(p, rx);
    if d1 < GEOM_EPS || d2 < GEOM_EPS {
        return None;
    }

    // Fresnel parameter: clearance of the edge point over the direct line,
    // positive when the owning surface blocks the direct path.
    let line_dir = geom::normalize(geom::sub(rx, tx));
    let to_p = geom::sub(p, tx);
    let along = geom::dot(to_p, line_dir);
    let h = geom::norm(geom::sub(to_p, geom::scale(line_dir, along)));
    let blocked = segment_hits_surface(tx, rx, &scene.surfaces[surface_idx]).is_some();
    let h_signed = if blocked { h } else { -h };
    let lambda = SPEED_OF_LIGHT / freq;
    let v = h_signed * (2.0 * (d1 + d2) / (lambda * d1 * d2)).sqrt();

    let loss_db = free_space_path_loss(d1 + d2, freq).expect("valid") + knife_edge_loss(v);
    finish_path(scene, p, db_to_linear(loss_db), 0, vec![Interaction::Diffract])
}

/// Splat each path's power onto the grid as an isotropic Gaussian blob of
/// standard deviation `kernel_sigma` pixels, periodic in azimuth and
/// truncated at the elevation borders. Blobs are normalized to their own
/// in-image weight sum so every path deposits exactly its power.
pub fn synthesize_pas(paths: &[PropPath], w: usize, h: usize, kernel_sigma: f64) -> PasImage {
    assert!(kernel_sigma > 0.0, "kernel_sigma must be > 0");
    let mut img = PasImage::zeros(w, h);
    let radius = ((4.0 * kernel_sigma).ceil() as isize).min(w as isize / 2);
    let inv_two_sigma2 = 1.0 / (2.0 * kernel_sigma * kernel_sigma);
    let mut weights: Vec<(usize, usize, f64)> = Vec::new();
    for path in paths {
        let center = match direction_to_pixel(path.arrival_direction, w, h) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let cy = center[1].round() as isize;
        let cx = center[0].round() as isize;
        weights.clear();
        let mut total = 0.0;
        for dy in -radius..=radius {
            let y = cy + dy;
            if y < 0 || y >= h as isize {
                continue;
            }
            let fy = y as f64 - center[1];
            for dx in -radius..=radius {
                let x = (cx + dx).rem_euclid(w as isize);
                let mut fx = (cx + dx) as f64 - center[0];
                fx -= w as f64 * (fx / w as f64).round();
                let weight = (-(fx * fx + fy * fy) * inv_two_sigma2).exp();
                weights.push((x as usize, y as usize, weight));
                total += weight;
            }
        }
        if total <= 0.0 {
            continue;
        }
        let scale = path.power / total;
        for &(x, y, weight) in &weights {
            *img.at_mut(x, y) += weight * scale;
        }
    }
    img
}

/// Parameters for dataset generation.
#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub width: usize,
    pub height: usize,
    pub kernel_sigma: f64,
    pub max_bounces: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            width: crate::pas::DEFAULT_WIDTH,
            height: crate::pas::DEFAULT_HEIGHT,
            kernel_sigma: 8.0,
            max_bounces: 2,
        }
    }
}

/// Trace and synthesize one sample.
pub fn simulate_sample(scene: &Scene, tx: Vec3, freq: f64, cfg: &GenerateConfig) -> PasImage {
    let paths = trace_paths(scene, tx, freq, cfg.max_bounces);
    let mut img = synthesize_pas(&paths, cfg.width, cfg.height, cfg.kernel_sigma);
    img.tx = tx;
    img.freq = freq;
    img
}

/// Write one sample file per (tx, freq) pair plus a manifest carrying the
/// dataset-wide dB normalization window. Deterministic for fixed inputs;
/// samples are generated in parallel and joined in order.
pub fn generate_dataset(
    scene: &Scene,
    scene_file: &str,
    tx_positions: &[Vec3],
    freqs: &[f64],
    out_dir: &Path,
    cfg: &GenerateConfig,
) -> Result<DatasetManifest, OracleError> {
    assert!(!tx_positions.is_empty() && !freqs.is_empty(), "empty inputs");
    std::fs::create_dir_all(out_dir).map_err(|source| OracleError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let jobs: Vec<(usize, Vec3, f64)> = tx_positions
        .iter()
        .enumerate()
        .flat_map(|(ti, &tx)| freqs.iter().map(move |&f| (ti, tx, f)))
        .collect();

    let images: Vec<PasImage> = jobs
        .par_iter()
        .map(|&(_, tx, f)| simulate_sample(scene, tx, f, cfg))
        .collect();

    let mut samples = Vec::with_capacity(jobs.len());
    let mut max_db = f64::NEG_INFINITY;
    for ((ti, tx, f), img) in jobs.iter().zip(&images) {
        let file = format!("tx{:04}_f{:.0}.f32", ti, f / 1e6);
        let path = out_dir.join(&file);
        dataset_io::write_sample(&img.values, img.width, img.height, &path)?;
        // Stats from the f32-rounded values the readers will see.
        for &v in &img.values {
            let db = 10.0 * ((v as f32) as f64 + dataset_io::POWER_EPS).log10();
            max_db = max_db.max(db);
        }
        samples.push(SampleRef { file, tx: *tx, freq: *f });
    }
    if !max_db.is_finite() {
        max_db = 0.0;
    }

    let manifest = DatasetManifest {
        width: cfg.width,
        height: cfg.height,
        samples,
        norm: NormStats { db_floor: max_db - 60.0, db_ceil: max_db },
        scene_file: scene_file.to_string(),
        version: 1,
    };
    let manifest_path = out_dir.join("manifest.json");
    dataset_io::write_manifest(&manifest, &manifest_path)?;
    Ok(manifest)
}
