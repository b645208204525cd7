//! The learnable 3D Gaussian cloud and its projection onto the RX
//! hemisphere.
//!
//! Directions in the RX frame map to pixels of a W x H spectrum image:
//! azimuth phi = atan2(y, x) spans [-pi, pi] across the width, zenith
//! theta = arccos(z) spans [0, pi/2] down the height. `project` linearizes
//! that map at each Gaussian mean to carry the 3D covariance into pixel
//! space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{self, logit, quat_to_mat, Mat3, Vec3};
use crate::scene::{RxPose, Scene};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

/// Regularizer added to the diagonal of every projected covariance.
pub const COV2D_REGULARIZER: f64 = 1e-6;

/// Structure-of-arrays storage for the Gaussian cloud. Scales are kept in
/// log-space and the base attenuation delta_o behind a logistic latent so
/// unconstrained gradient steps preserve the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<Vec3>,
    pub log_scales: Vec<Vec3>,
    /// Unnormalized quaternions (w, x, y, z); normalized on use.
    pub rotations: Vec<[f64; 4]>,
    /// Logistic latents; delta_o = sigmoid(latent).
    pub delta_latents: Vec<f64>,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn delta_o(&self, i: usize) -> f64 {
        geom::logistic(self.delta_latents[i])
    }

    pub fn scales(&self, i: usize) -> Vec3 {
        let ls = self.log_scales[i];
        [ls[0].exp(), ls[1].exp(), ls[2].exp()]
    }

    /// World covariance R * S^2 * R^T of Gaussian `i`.
    pub fn world_cov(&self, i: usize) -> Mat3 {
        let r = quat_to_mat(self.rotations[i]);
        let s = self.scales(i);
        let mut rs2 = [[0.0; 3]; 3];
        for row in 0..3 {
            for col in 0..3 {
                rs2[row][col] = r[row][col] * s[col] * s[col];
            }
        }
        geom::mat_mul(&rs2, &geom::transpose(&r))
    }
}

/// One Gaussian projected to the spectrum image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub pixel_mean: [f64; 2],
    /// Symmetric 2x2 pixel-space covariance (a, b; b, c).
    pub cov2d: [[f64; 2]; 2],
    /// Euclidean RX-to-mean distance, meters.
    pub depth: f64,
    pub gaussian_id: usize,
}

/// Build a cloud from a point set: one Gaussian per point, isotropic
/// initial scale equal to the mean nearest-neighbor distance (0.1 m for a
/// single point), identity rotation, delta_o = 0.1.
pub fn init_from_points(points: &[Vec3], _seed: u64) -> GaussianCloud {
    assert!(!points.is_empty(), "init_from_points: empty point set");
    let scale = if points.len() == 1 {
        0.1
    } else {
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut nearest = f64::INFINITY;
            for (j, q) in points.iter().enumerate() {
                if i != j {
                    nearest = nearest.min(geom::distance(*p, *q));
                }
            }
            total += nearest;
        }
        total / points.len() as f64
    };
    let ls = scale.ln();
    let latent = logit(0.1);
    GaussianCloud {
        means: points.to_vec(),
        log_scales: vec![[ls, ls, ls]; points.len()],
        rotations: vec![[1.0, 0.0, 0.0, 0.0]; points.len()],
        delta_latents: vec![latent; points.len()],
    }
}

/// Seeded stand-in for a scene point cloud: `n_surface` points uniform on
/// obstacle faces (area-weighted) plus `n_volume` uniform in the bounds.
pub fn sample_scene_points(scene: &Scene, n_surface: usize, n_volume: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_surface + n_volume);
    let areas: Vec<f64> = scene.surfaces.iter().map(|s| s.area()).collect();
    let total_area: f64 = areas.iter().sum();
    if total_area > 0.0 {
        for _ in 0..n_surface {
            let mut pick = rng.gen_range(0.0..total_area);
            let mut idx = 0;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    idx = i;
                    break;
                }
                pick -= a;
                idx = i;
            }
            let s = &scene.surfaces[idx];
            // Bilinear interpolation covers the (planar, convex) quad.
            let (u, v) = (rng.gen::<f64>(), rng.gen::<f64>());
            let [a, b, c, d] = s.corners;
            let top = geom::add(geom::scale(a, 1.0 - u), geom::scale(b, u));
            let bot = geom::add(geom::scale(d, 1.0 - u), geom::scale(c, u));
            points.push(geom::add(geom::scale(top, 1.0 - v), geom::scale(bot, v)));
        }
    }
    for _ in 0..n_volume {
        points.push([
            rng.gen_range(scene.bounds.min[0]..scene.bounds.max[0]),
            rng.gen_range(scene.bounds.min[1]..scene.bounds.max[1]),
            rng.gen_range(scene.bounds.min[2]..scene.bounds.max[2]),
        ]);
    }
    points
}

/// Map a unit direction in the RX frame (z = boresight, z >= 0) to
/// continuous pixel coordinates. Azimuth is taken modulo W, elevation
/// clamped to [0, H). Errors if the direction points below the hemisphere.
pub fn direction_to_pixel(dir: Vec3, w: usize, h: usize) -> Result<[f64; 2], String> {
    if dir[2] < -1e-9 {
        return Err(format!("direction below hemisphere: z = {}", dir[2]));
    }
    let phi = dir[1].atan2(dir[0]);
    let theta = dir[2].clamp(-1.0, 1.0).acos();
    let mut px = (phi + std::f64::consts::PI) / TWO_PI * w as f64;
    px = px.rem_euclid(w as f64);
    let py = (theta / HALF_PI * h as f64).clamp(0.0, h as f64 - 1e-9);
    Ok([px, py])
}

/// Inverse of `direction_to_pixel` for interior pixels.
pub fn pixel_to_direction(px: f64, py: f64, w: usize, h: usize) -> Vec3 {
    let phi = px / w as f64 * TWO_PI - std::f64::consts::PI;
    let theta = py / h as f64 * HALF_PI;
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// Jacobian of the direction_to_pixel map with respect to the RX-local
/// position `u` of the mean (2x3, pixels per meter). Returns `None` at the
/// boresight singularity where the azimuth is degenerate.
pub fn pixel_jacobian_local(u: Vec3, w: usize, h: usize) -> Option<[[f64; 3]; 3]> {
    let s2 = u[0] * u[0] + u[1] * u[1];
    let s = s2.sqrt();
    let r2 = s2 + u[2] * u[2];
    if s2 <= 1e-18 * r2 {
        return None;
    }
    let kx = w as f64 / TWO_PI;
    let ky = h as f64 / HALF_PI;
    let row_px = [-kx * u[1] / s2, kx * u[0] / s2, 0.0];
    let row_py = [
        ky * u[2] * u[0] / (s * r2),
        ky * u[2] * u[1] / (s * r2),
        -ky * s / r2,
    ];
    // Third row unused; kept zero so the return type is a plain Mat3.
    Some([row_px, row_py, [0.0; 3]])
}

/// Second derivative of the pixel map: d(J)/d(u), indexed
/// [pixel_row][j_col][u_k]. Needed to backpropagate covariance gradients
/// into the mean.
pub fn pixel_jacobian_grad_local(u: Vec3, w: usize, h: usize) -> Option<[[[f64; 3]; 3]; 2]> {
    let s2 = u[0] * u[0] + u[1] * u[1];
    let s = s2.sqrt();
    let r2 = s2 + u[2] * u[2];
    if s2 <= 1e-18 * r2 {
        return None;
    }
    let kx = w as f64 / TWO_PI;
    let ky = h as f64 / HALF_PI;
    let (x, y, z) = (u[0], u[1], u[2]);
    let s4 = s2 * s2;
    let r4 = r2 * r2;

    let mut t = [[[0.0; 3]; 3]; 2];
    // d/du of row_px = kx * (-y/s2, x/s2, 0)
    t[0][0] = [kx * 2.0 * x * y / s4, kx * (y * y - x * x) / s4, 0.0];
    t[0][1] = [kx * (y * y - x * x) / s4, -kx * 2.0 * x * y / s4, 0.0];
    t[0][2] = [0.0, 0.0, 0.0];
    // d/du of row_py = ky * (z*x/(s*r2), z*y/(s*r2), -s/r2)
    let a = z / (s * r2);
    let da_dx = -z * x * (r2 + 2.0 * s2) / (s2 * s * r4);
    let da_dy = -z * y * (r2 + 2.0 * s2) / (s2 * s * r4);
    let da_dz = (r2 - 2.0 * z * z) / (s * r4);
    t[1][0] = [ky * (a + x * da_dx), ky * x * da_dy, ky * x * da_dz];
    t[1][1] = [ky * y * da_dx, ky * (a + y * da_dy), ky * y * da_dz];
    t[1][2] = [
        -ky * x * (r2 - 2.0 * s2) / (s * r4),
        -ky * y * (r2 - 2.0 * s2) / (s * r4),
        ky * 2.0 * s * z / r4,
    ];
    Some(t)
}

/// Project every Gaussian onto the spectrum image. Gaussians behind the
/// hemisphere (local z < 0) are culled. At the exact boresight the azimuth
/// direction is degenerate and the covariance falls back to the
/// regularizer alone.
pub fn project(cloud: &GaussianCloud, rx: &RxPose, w: usize, h: usize) -> Vec<Splat2D> {
    let mut out = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        if let Some(s) = project_one(cloud, i, rx, w, h) {
            out.push(s);
        }
    }
    out
}

pub fn project_one(cloud: &GaussianCloud, i: usize, rx: &RxPose, w: usize, h: usize) -> Option<Splat2D> {
    let d_world = geom::sub(cloud.means[i], rx.position);
    let u = rx.to_local(d_world);
    if u[2] < 0.0 {
        return None;
    }
    let depth = geom::norm(u);
    debug_assert!(depth > 1e-6, "gaussian mean coincides with rx");
    let dir = geom::scale(u, 1.0 / depth);
    let pixel_mean = direction_to_pixel(dir, w, h).expect("z >= 0 after cull");

    let sigma_world = cloud.world_cov(i);
    let cov2d = match pixel_jacobian_local(u, w, h) {
        Some(j_local) => {
            // J_world = J_local * R^T, then J * Sigma * J^T.
            let rt = geom::transpose(&rx.frame);
            let j_world = geom::mat_mul(&j_local, &rt);
            let js = geom::mat_mul(&j_world, &sigma_world);
            let jsj = geom::mat_mul(&js, &geom::transpose(&j_world));
            [
                [jsj[0][0] + COV2D_REGULARIZER, jsj[0][1]],
                [jsj[1][0], jsj[1][1] + COV2D_REGULARIZER],
            ]
        }
        None => [[COV2D_REGULARIZER, 0.0], [0.0, COV2D_REGULARIZER]],
    };

    Some(Splat2D { pixel_mean, cov2d, depth, gaussian_id: i })
}

/// Gradients of one projected splat with respect to the Gaussian latents.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectGrads {
    pub d_mean: Vec3,
    pub d_log_scale: Vec3,
    pub d_rotation: [f64; 4],
}

/// Backpropagate renderer gradients (d_pixel_mean, d_cov2d symmetric)
/// through `project_one` for Gaussian `i`. The covariance path carries a
/// second derivative of the pixel map into the mean. Returns zeros at the
/// boresight singularity, matching the forward fallback there.
pub fn project_backward(
    cloud: &GaussianCloud,
    i: usize,
    rx: &RxPose,
    w: usize,
    h: usize,
    d_pixel_mean: [f64; 2],
    d_cov2d: [[f64; 2]; 2],
) -> ProjectGrads {
    let d_world = geom::sub(cloud.means[i], rx.position);
    let u = rx.to_local(d_world);
    let (Some(j_local), Some(j_grad)) =
        (pixel_jacobian_local(u, w, h), pixel_jacobian_grad_local(u, w, h))
    else {
        return ProjectGrads::default();
    };

    let rt = geom::transpose(&rx.frame);
    let j_world = geom::mat_mul(&j_local, &rt);
    let sigma_world = cloud.world_cov(i);

    // Embed the symmetric 2x2 upstream gradient in a 3x3 with a zero
    // third row/column so the Mat3 helpers apply.
    let g3: Mat3 = [
        [d_cov2d[0][0], d_cov2d[0][1], 0.0],
        [d_cov2d[1][0], d_cov2d[1][1], 0.0],
        [0.0, 0.0, 0.0],
    ];

    // cov2d = J Sigma J^T: dL/dSigma = J^T G J, dL/dJ = (G + G^T) J Sigma.
    let d_sigma = geom::mat_mul(&geom::transpose(&j_world), &geom::mat_mul(&g3, &j_world));
    let g_sym: Mat3 = [
        [g3[0][0] * 2.0, g3[0][1] + g3[1][0], 0.0],
        [g3[0][1] + g3[1][0], g3[1][1] * 2.0, 0.0],
        [0.0, 0.0, 0.0],
    ];
    let d_j_world = geom::mat_mul(&g_sym, &geom::mat_mul(&j_world, &sigma_world));
    // J_world = J_local R^T, so dL/dJ_local = dL/dJ_world * R.
    let d_j_local = geom::mat_mul(&d_j_world, &rx.frame);

    // Mean gradient: pixel path J^T d_pixel, covariance path through the
    // Jacobian's own dependence on u.
    let mut d_u = [
        j_local[0][0] * d_pixel_mean[0] + j_local[1][0] * d_pixel_mean[1],
        j_local[0][1] * d_pixel_mean[0] + j_local[1][1] * d_pixel_mean[1],
        j_local[0][2] * d_pixel_mean[0] + j_local[1][2] * d_pixel_mean[1],
    ];
    for row in 0..2 {
        for col in 0..3 {
            let g = d_j_local[row][col];
            if g != 0.0 {
                for (k, du) in d_u.iter_mut().enumerate() {
                    *du += g * j_grad[row][col][k];
                }
            }
        }
    }
    let d_mean = geom::mat_vec(&rx.frame, d_u);

    // Sigma = R_q S^2 R_q^T: split into log-scale and quaternion parts.
    let r_q = quat_to_mat(cloud.rotations[i]);
    let scales = cloud.scales(i);
    let d_m = geom::mat_mul(&geom::transpose(&r_q), &geom::mat_mul(&d_sigma, &r_q));
    let mut d_log_scale = [0.0; 3];
    for k in 0..3 {
        // M_kk = exp(2 ls_k).
        d_log_scale[k] = d_m[k][k] * 2.0 * scales[k] * scales[k];
    }
    // dL/dR_q = (dSigma + dSigma^T) R_q M; dSigma is already symmetric.
    let mut m_diag = [[0.0; 3]; 3];
    for k in 0..3 {
        m_diag[k][k] = scales[k] * scales[k];
    }
    let d_r = geom::mat_mul(
        &[
            [2.0 * d_sigma[0][0], d_sigma[0][1] + d_sigma[1][0], d_sigma[0][2] + d_sigma[2][0]],
            [d_sigma[0][1] + d_sigma[1][0], 2.0 * d_sigma[1][1], d_sigma[1][2] + d_sigma[2][1]],
            [d_sigma[0][2] + d_sigma[2][0], d_sigma[1][2] + d_sigma[2][1], 2.0 * d_sigma[2][2]],
        ],
        &geom::mat_mul(&r_q, &m_diag),
    );
    let d_rotation = crate::geom::quat_to_mat_backward(cloud.rotations[i], &d_r);

    ProjectGrads { d_mean, d_log_scale, d_rotation }
}
