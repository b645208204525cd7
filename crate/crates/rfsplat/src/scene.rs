//! 3D environments: geometry, frequency-dependent materials, antenna
//! placement, and the scene file format.
//!
//! A scene file is JSON with `bounds`, `rx`, `materials`, `surfaces` and
//! `seed`. Surface entries are either axis-aligned boxes (expanded to six
//! faces on load, and treated as solid for TX sampling) or finite
//! quadrilateral planes. All lengths are meters, frequencies Hz.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Aabb, Mat3, Vec3};

/// Minimum TX-RX separation enforced by `sample_tx_positions`.
pub const MIN_TX_RX_SEPARATION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("tx sampling exhausted after {attempts} draws ({accepted}/{requested} accepted)")]
    SamplingExhausted {
        attempts: usize,
        accepted: usize,
        requested: usize,
    },
}

/// Frequency-dependent material. Relative permittivity and conductivity
/// follow two-coefficient power laws in frequency:
/// eps_r(f) = eps_a * (f/1GHz)^eps_b, sigma(f) = sigma_a * (f/1GHz)^sigma_b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub eps_a: f64,
    pub eps_b: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    #[serde(default = "default_mu_r")]
    pub mu_r: f64,
    pub thickness: f64,
}

fn default_mu_r() -> f64 {
    1.0
}

impl Material {
    /// Evaluate (eps_r, mu_r, sigma) at `freq` Hz.
    pub fn at_frequency(&self, freq: f64) -> (f64, f64, f64) {
        let f_ghz = freq / 1e9;
        let eps_r = self.eps_a * f_ghz.powf(self.eps_b);
        let sigma = self.sigma_a * f_ghz.powf(self.sigma_b);
        (eps_r, self.mu_r, sigma)
    }

    fn validate(&self, name: &str) -> Result<(), SceneError> {
        if self.eps_a < 1.0 {
            return Err(SceneError::Validation(format!(
                "material {name}: eps_a must be >= 1, got {}",
                self.eps_a
            )));
        }
        if self.sigma_a < 0.0 {
            return Err(SceneError::Validation(format!(
                "material {name}: sigma_a must be >= 0, got {}",
                self.sigma_a
            )));
        }
        if self.mu_r <= 0.0 {
            return Err(SceneError::Validation(format!(
                "material {name}: mu_r must be > 0, got {}",
                self.mu_r
            )));
        }
        if self.thickness <= 0.0 {
            return Err(SceneError::Validation(format!(
                "material {name}: thickness must be > 0, got {}",
                self.thickness
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    BoxFace,
    Plane,
}

/// A finite quadrilateral surface with a material and per-edge
/// diffraction flags (edge e runs corners[e] -> corners[(e+1)%4]).
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub kind: SurfaceKind,
    pub corners: [Vec3; 4],
    pub material: String,
    pub diffracting: [bool; 4],
}

impl Surface {
    pub fn normal(&self) -> Vec3 {
        geom::normalize(geom::cross(
            geom::sub(self.corners[1], self.corners[0]),
            geom::sub(self.corners[3], self.corners[0]),
        ))
    }

    pub fn area(&self) -> f64 {
        // Split the quad into two triangles.
        let [a, b, c, d] = self.corners;
        let t1 = geom::norm(geom::cross(geom::sub(b, a), geom::sub(c, a))) * 0.5;
        let t2 = geom::norm(geom::cross(geom::sub(c, a), geom::sub(d, a))) * 0.5;
        t1 + t2
    }

    fn validate(&self, idx: usize) -> Result<(), SceneError> {
        let n = geom::cross(
            geom::sub(self.corners[1], self.corners[0]),
            geom::sub(self.corners[3], self.corners[0]),
        );
        let nn = geom::norm(n);
        if nn <= 0.0 || self.area() <= 0.0 {
            return Err(SceneError::Validation(format!(
                "surface {idx}: degenerate corners (area must be > 0)"
            )));
        }
        let unit = geom::scale(n, 1.0 / nn);
        let off = geom::dot(geom::sub(self.corners[2], self.corners[0]), unit);
        if off.abs() > 1e-9 {
            return Err(SceneError::Validation(format!(
                "surface {idx}: corners not coplanar within 1e-9 m (offset {off:e})"
            )));
        }
        Ok(())
    }
}

/// Receiver pose: position plus an orthonormal frame whose columns are the
/// local x, y, z axes; local z is the boresight of the hemisphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RxPose {
    pub position: Vec3,
    pub frame: Mat3,
}

impl RxPose {
    /// World direction -> RX-local direction.
    pub fn to_local(&self, dir: Vec3) -> Vec3 {
        geom::mat_tvec(&self.frame, dir)
    }

    fn validate(&self) -> Result<(), SceneError> {
        let prod = geom::mat_mul(&geom::transpose(&self.frame), &self.frame);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (prod[i][j] - want).abs() > 1e-9 {
                    return Err(SceneError::Validation(
                        "rx frame is not orthonormal within 1e-9".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// File-level obstacle entry: an axis-aligned solid box or a single plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Box {
        min: Vec3,
        max: Vec3,
        material: String,
        #[serde(default)]
        diffracting_edges: bool,
    },
    Plane {
        corners: [Vec3; 4],
        material: String,
        #[serde(default)]
        diffracting_edges: [bool; 4],
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    bounds: Aabb,
    rx: RxPose,
    #[serde(default)]
    materials: BTreeMap<String, Material>,
    #[serde(default)]
    surfaces: Vec<Obstacle>,
    #[serde(default)]
    seed: u64,
}

/// A validated scene. `surfaces` is derived from `obstacles` at load time
/// (boxes expand to six faces); `solids` holds the box volumes used to
/// reject TX positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bounds: Aabb,
    pub rx: RxPose,
    pub materials: BTreeMap<String, Material>,
    pub obstacles: Vec<Obstacle>,
    pub surfaces: Vec<Surface>,
    pub solids: Vec<Aabb>,
    pub seed: u64,
}

impl Scene {
    pub fn new(
        bounds: Aabb,
        rx: RxPose,
        materials: BTreeMap<String, Material>,
        obstacles: Vec<Obstacle>,
        seed: u64,
    ) -> Result<Self, SceneError> {
        let (surfaces, solids) = expand_obstacles(&obstacles)?;
        let scene = Scene { bounds, rx, materials, obstacles, surfaces, solids, seed };
        scene.validate()?;
        Ok(scene)
    }

    pub fn material(&self, name: &str) -> &Material {
        &self.materials[name]
    }

    fn validate(&self) -> Result<(), SceneError> {
        if !self.bounds.is_valid() {
            return Err(SceneError::Validation("bounds: max must exceed min on every axis".into()));
        }
        for (name, m) in &self.materials {
            m.validate(name)?;
        }
        self.rx.validate()?;
        if !self.bounds.contains(self.rx.position) {
            return Err(SceneError::Validation("rx.position lies outside bounds".into()));
        }
        for (idx, s) in self.surfaces.iter().enumerate() {
            s.validate(idx)?;
            if !self.materials.contains_key(&s.material) {
                return Err(SceneError::Validation(format!(
                    "surface {idx}: unknown material {:?}",
                    s.material
                )));
            }
            for c in &s.corners {
                if !self.bounds.contains(*c) {
                    return Err(SceneError::Validation(format!(
                        "surface {idx}: corner {c:?} lies outside bounds"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Expand box obstacles to faces and collect solid volumes. When a box is
/// flagged diffracting, each of its 12 geometric edges is flagged on
/// exactly one owning face so a physical edge never yields two paths.
fn expand_obstacles(obstacles: &[Obstacle]) -> Result<(Vec<Surface>, Vec<Aabb>), SceneError> {
    let mut surfaces = Vec::new();
    let mut solids = Vec::new();
    for (idx, ob) in obstacles.iter().enumerate() {
        match ob {
            Obstacle::Plane { corners, material, diffracting_edges } => {
                surfaces.push(Surface {
                    kind: SurfaceKind::Plane,
                    corners: *corners,
                    material: material.clone(),
                    diffracting: *diffracting_edges,
                });
            }
            Obstacle::Box { min, max, material, diffracting_edges } => {
                let b = Aabb { min: *min, max: *max };
                if !b.is_valid() {
                    return Err(SceneError::Validation(format!(
                        "obstacle {idx}: box max must exceed min on every axis"
                    )));
                }
                let faces = box_faces(&b);
                let mut seen_edges: Vec<([i64; 3], [i64; 3])> = Vec::new();
                for face in faces {
                    let mut diffracting = [false; 4];
                    if *diffracting_edges {
                        for e in 0..4 {
                            let key = edge_key(face[e], face[(e + 1) % 4]);
                            if !seen_edges.contains(&key) {
                                seen_edges.push(key);
                                diffracting[e] = true;
                            }
                        }
                    }
                    surfaces.push(Surface {
                        kind: SurfaceKind::BoxFace,
                        corners: face,
                        material: material.clone(),
                        diffracting,
                    });
                }
                solids.push(b);
            }
        }
    }
    Ok((surfaces, solids))
}

fn edge_key(a: Vec3, b: Vec3) -> ([i64; 3], [i64; 3]) {
    let q = |p: Vec3| [quant(p[0]), quant(p[1]), quant(p[2])];
    let (qa, qb) = (q(a), q(b));
    if qa <= qb {
        (qa, qb)
    } else {
        (qb, qa)
    }
}

fn quant(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

/// The six faces of an axis-aligned box in fixed order
/// (x-, x+, y-, y+, z-, z+), corners wound so normals point outward.
fn box_faces(b: &Aabb) -> [[Vec3; 4]; 6] {
    let (n, x) = (b.min, b.max);
    [
        // x-
        [[n[0], n[1], n[2]], [n[0], n[1], x[2]], [n[0], x[1], x[2]], [n[0], x[1], n[2]]],
        // x+
        [[x[0], n[1], n[2]], [x[0], x[1], n[2]], [x[0], x[1], x[2]], [x[0], n[1], x[2]]],
        // y-
        [[n[0], n[1], n[2]], [x[0], n[1], n[2]], [x[0], n[1], x[2]], [n[0], n[1], x[2]]],
        // y+
        [[n[0], x[1], n[2]], [n[0], x[1], x[2]], [x[0], x[1], x[2]], [x[0], x[1], n[2]]],
        // z-
        [[n[0], n[1], n[2]], [n[0], x[1], n[2]], [x[0], x[1], n[2]], [x[0], n[1], n[2]]],
        // z+
        [[n[0], n[1], x[2]], [x[0], n[1], x[2]], [x[0], x[1], x[2]], [n[0], x[1], x[2]]],
    ]
}

/// Load and validate a scene file.
pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: SceneFile =
        serde_json::from_str(&text).map_err(|e| SceneError::Parse(e.to_string()))?;
    Scene::new(file.bounds, file.rx, file.materials, file.surfaces, file.seed)
}

/// Write a scene back to its file form.
pub fn write_scene(scene: &Scene, path: &Path) -> Result<(), SceneError> {
    let file = SceneFile {
        bounds: scene.bounds,
        rx: scene.rx,
        materials: scene.materials.clone(),
        surfaces: scene.obstacles.clone(),
        seed: scene.seed,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| SceneError::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Draw `n` TX positions uniformly inside the scene bounds, rejecting
/// points inside solid obstacles and points closer than 0.1 m to the RX.
/// Deterministic for a fixed seed; errors out if rejection makes `n`
/// unreachable within 1000*n draws.
pub fn sample_tx_positions(scene: &Scene, n: usize, seed: u64) -> Result<Vec<Vec3>, SceneError> {
    assert!(n >= 1, "n must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let limit = 1000 * n;
    let mut attempts = 0;
    while out.len() < n {
        if attempts >= limit {
            return Err(SceneError::SamplingExhausted {
                attempts,
                accepted: out.len(),
                requested: n,
            });
        }
        attempts += 1;
        let p: Vec3 = [
            rng.gen_range(scene.bounds.min[0]..scene.bounds.max[0]),
            rng.gen_range(scene.bounds.min[1]..scene.bounds.max[1]),
            rng.gen_range(scene.bounds.min[2]..scene.bounds.max[2]),
        ];
        if scene.solids.iter().any(|s| s.contains(p)) {
            continue;
        }
        if geom::distance(p, scene.rx.position) < MIN_TX_RX_SEPARATION {
            continue;
        }
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::IDENTITY;

    fn empty_scene_json() -> String {
        r#"{
            "bounds": {"min": [-2.0, -2.0, -1.0], "max": [2.0, 2.0, 2.0]},
            "rx": {"position": [0.0, 0.0, 0.0],
                   "frame": [[1.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]]},
            "materials": {},
            "surfaces": [],
            "seed": 7
        }"#
        .to_string()
    }

    fn box_scene_json() -> String {
        r#"{
            "bounds": {"min": [-3.0, -3.0, -1.0], "max": [3.0, 3.0, 3.0]},
            "rx": {"position": [0.0, 0.0, 0.0],
                   "frame": [[1.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]]},
            "materials": {
                "concrete": {"eps_a": 5.24, "eps_b": 0.0,
                             "sigma_a": 0.0462, "sigma_b": 0.7822,
                             "mu_r": 1.0, "thickness": 0.1}
            },
            "surfaces": [
                {"kind": "box", "min": [1.0, -1.0, 0.0], "max": [2.0, 1.0, 1.5],
                 "material": "concrete"}
            ],
            "seed": 3
        }"#
        .to_string()
    }

    fn write_tmp(name: &str, text: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("rfsplat-scene-{}-{name}", std::process::id()));
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn load_empty_scene() {
        let path = write_tmp("empty.json", &empty_scene_json());
        let scene = load_scene(&path).unwrap();
        assert_eq!(scene.surfaces.len(), 0);
        assert_eq!(scene.rx.frame, IDENTITY);
        assert_eq!(scene.seed, 7);
    }

    #[test]
    fn box_expands_to_six_faces() {
        let path = write_tmp("box.json", &box_scene_json());
        let scene = load_scene(&path).unwrap();
        assert_eq!(scene.surfaces.len(), 6);
        assert_eq!(scene.solids.len(), 1);
        for s in &scene.surfaces {
            assert_eq!(s.kind, SurfaceKind::BoxFace);
            assert_eq!(s.material, "concrete");
        }
    }

    #[test]
    fn box_outward_normals() {
        let path = write_tmp("box-n.json", &box_scene_json());
        let scene = load_scene(&path).unwrap();
        let center = scene.solids[0].center();
        for s in &scene.surfaces {
            let face_center = geom::scale(
                s.corners.iter().fold([0.0; 3], |acc, c| geom::add(acc, *c)),
                0.25,
            );
            let outward = geom::sub(face_center, center);
            assert!(geom::dot(s.normal(), outward) > 0.0, "normal points inward");
        }
    }

    #[test]
    fn diffracting_box_flags_each_edge_once() {
        let json = box_scene_json().replace(
            "\"material\": \"concrete\"}",
            "\"material\": \"concrete\", \"diffracting_edges\": true}",
        );
        let path = write_tmp("box-d.json", &json);
        let scene = load_scene(&path).unwrap();
        let flagged: usize = scene
            .surfaces
            .iter()
            .map(|s| s.diffracting.iter().filter(|&&d| d).count())
            .sum();
        assert_eq!(flagged, 12);
    }

    #[test]
    fn rx_outside_bounds_rejected() {
        let json = empty_scene_json().replace("\"position\": [0.0, 0.0, 0.0]", "\"position\": [9.0, 0.0, 0.0]");
        let path = write_tmp("rx-out.json", &json);
        match load_scene(&path) {
            Err(SceneError::Validation(msg)) => assert!(msg.contains("rx.position")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_file_is_parse_error() {
        let path = write_tmp("bad.json", "{ not json");
        assert!(matches!(load_scene(&path), Err(SceneError::Parse(_))));
    }

    #[test]
    fn bad_material_named_in_error() {
        let json = box_scene_json().replace("\"eps_a\": 5.24", "\"eps_a\": 0.5");
        let path = write_tmp("bad-mat.json", &json);
        match load_scene(&path) {
            Err(SceneError::Validation(msg)) => assert!(msg.contains("eps_a"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn material_power_laws() {
        let m = Material { eps_a: 5.24, eps_b: 0.0, sigma_a: 0.0, sigma_b: 0.0, mu_r: 1.0, thickness: 0.1 };
        for &f in &[1e9, 10e9, 94e9] {
            let (eps, mu, sigma) = m.at_frequency(f);
            assert_eq!(eps, 5.24);
            assert_eq!(mu, 1.0);
            assert_eq!(sigma, 0.0);
        }
        let m = Material { eps_a: 2.0, eps_b: 1.0, sigma_a: 0.0, sigma_b: 0.0, mu_r: 1.0, thickness: 0.1 };
        let (eps, _, _) = m.at_frequency(10e9);
        assert!((eps - 20.0).abs() < 1e-12);
    }

    #[test]
    fn material_monotone_in_frequency() {
        let m = Material { eps_a: 2.0, eps_b: 0.5, sigma_a: 1.0, sigma_b: 0.8, mu_r: 1.0, thickness: 0.1 };
        let mut last = 0.0;
        for f in [1e9, 2e9, 5e9, 20e9, 90e9] {
            let (eps, _, _) = m.at_frequency(f);
            assert!(eps > last);
            last = eps;
        }
    }

    #[test]
    fn scene_roundtrip() {
        let path = write_tmp("rt.json", &box_scene_json());
        let scene = load_scene(&path).unwrap();
        let out = std::env::temp_dir().join(format!("rfsplat-scene-rt-out-{}.json", std::process::id()));
        write_scene(&scene, &out).unwrap();
        let again = load_scene(&out).unwrap();
        assert_eq!(scene, again);
    }

    #[test]
    fn tx_sampling_structure_and_determinism() {
        let path = write_tmp("tx.json", &empty_scene_json());
        let scene = load_scene(&path).unwrap();
        let a = sample_tx_positions(&scene, 4, 7).unwrap();
        let b = sample_tx_positions(&scene, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for p in &a {
            assert!(scene.bounds.contains(*p));
            assert!(geom::distance(*p, scene.rx.position) >= MIN_TX_RX_SEPARATION);
        }
        for i in 0..a.len() {
            for j in (i + 1)..a.len() {
                assert_ne!(a[i], a[j]);
            }
        }
    }

    #[test]
    fn tx_sampling_avoids_solids() {
        let path = write_tmp("tx-solid.json", &box_scene_json());
        let scene = load_scene(&path).unwrap();
        let pts = sample_tx_positions(&scene, 200, 5).unwrap();
        for p in &pts {
            assert!(!scene.solids[0].contains(*p));
        }
    }

    #[test]
    fn tx_sampling_exhaustion() {
        // A box covering the whole bounds leaves nowhere to sample. The box
        // must stay inside bounds, so use bounds exactly.
        let json = r#"{
            "bounds": {"min": [0.0, 0.0, 0.0], "max": [1.0, 1.0, 1.0]},
            "rx": {"position": [0.5, 0.5, 0.5],
                   "frame": [[1.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]]},
            "materials": {"m": {"eps_a": 2.0, "eps_b": 0.0, "sigma_a": 0.0,
                                "sigma_b": 0.0, "mu_r": 1.0, "thickness": 0.1}},
            "surfaces": [{"kind": "box", "min": [0.0,0.0,0.0], "max": [1.0,1.0,1.0],
                          "material": "m"}],
            "seed": 0
        }"#;
        let path = write_tmp("tx-full.json", json);
        let scene = load_scene(&path).unwrap();
        assert!(matches!(
            sample_tx_positions(&scene, 3, 1),
            Err(SceneError::SamplingExhausted { .. })
        ));
    }
}
