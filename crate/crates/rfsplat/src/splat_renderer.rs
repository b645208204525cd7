//! Tile-based rasterization of projected splats into a PAS, with exact
//! reverse-mode gradients and a brute-force reference renderer.
//!
//! Two compositing modes share the machinery:
//!
//! * `PaperLiteral`: I(p) = sum_i (prod_{j<i} delta_j) * w_i(p) * sig_i,
//!   where delta multiplies through as a transmittance factor and the
//!   Gaussian kernel weight w applies to emission only.
//! * `Alpha` (default): opacity a_i = (1 - delta_i) * w_i(p) composited
//!   front to back, so low-delta Gaussians are the visible ones and the
//!   density-control semantics (prune small, reset near zero) stay
//!   meaningful.
//!
//! Splats are instantiated once per overlapped tile and sorted within each
//! tile by (depth, id). Forward and backward parallelize over tiles;
//! per-tile gradients merge in a fixed tile order so results are bitwise
//! reproducible at any worker count.

use rayon::prelude::*;
use thiserror::Error;

use crate::gaussian_field::Splat2D;
use crate::pas::PasImage;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    PaperLiteral,
    Alpha,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub mode: RenderMode,
    /// Kernel evaluation radius in Mahalanobis sigmas.
    pub cutoff_sigmas: f64,
    /// Front-to-back early stop once accumulated transmittance drops
    /// below this.
    pub transmittance_floor: f64,
    pub tile_size: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            mode: RenderMode::Alpha,
            cutoff_sigmas: 3.0,
            transmittance_floor: 1e-4,
            tile_size: 16,
        }
    }
}

impl RenderConfig {
    /// Disable the approximations: infinite cutoff, no early stop. The
    /// tiled renderer then matches the brute-force reference exactly.
    pub fn exact(mode: RenderMode) -> Self {
        RenderConfig { mode, cutoff_sigmas: f64::INFINITY, transmittance_floor: 0.0, tile_size: 16 }
    }
}

/// Gradients of the rendered image with respect to the splat inputs,
/// indexed like the input splat slice.
#[derive(Debug, Clone)]
pub struct RenderGrads {
    pub d_delta: Vec<f64>,
    pub d_sig: Vec<f64>,
    pub d_pixel_mean: Vec<[f64; 2]>,
    pub d_cov2d: Vec<[[f64; 2]; 2]>,
}

/// Per-splat quantities the pixel loops need.
#[derive(Debug, Clone, Copy)]
struct Prepared {
    mean: [f64; 2],
    // Inverse covariance (symmetric).
    m00: f64,
    m01: f64,
    m11: f64,
    delta: f64,
    sig: f64,
}

/// Retained forward state: inputs plus the per-tile depth-sorted instance
/// lists. `backward` borrows this, so a missing forward state is
/// unrepresentable.
pub struct Renderer {
    width: usize,
    height: usize,
    cfg: RenderConfig,
    prepared: Vec<Prepared>,
    /// Per tile: splat indices sorted by (depth, gaussian_id).
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

impl Renderer {
    pub fn new(
        splats: &[Splat2D],
        delta: &[f64],
        sig: &[f64],
        width: usize,
        height: usize,
        cfg: RenderConfig,
    ) -> Result<Self, RenderError> {
        if splats.len() != delta.len() || splats.len() != sig.len() {
            return Err(RenderError::DimensionMismatch(format!(
                "splats {} / delta {} / sig {}",
                splats.len(),
                delta.len(),
                sig.len()
            )));
        }
        let ts = cfg.tile_size.max(1);
        let tiles_x = width.div_ceil(ts);
        let tiles_y = height.div_ceil(ts);
        let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];

        let mut prepared = Vec::with_capacity(splats.len());
        for (idx, s) in splats.iter().enumerate() {
            let (a, b, c) = (s.cov2d[0][0], s.cov2d[0][1], s.cov2d[1][1]);
            let det = a * c - b * b;
            debug_assert!(det > 0.0, "cov2d not positive definite");
            prepared.push(Prepared {
                mean: s.pixel_mean,
                m00: c / det,
                m01: -b / det,
                m11: a / det,
                delta: delta[idx],
                sig: sig[idx],
            });

            // Conservative coverage: cutoff sigmas of the largest
            // eigenvalue, plus one pixel of slack.
            let tr = a + c;
            let disc = ((a - c) * (a - c) / 4.0 + b * b).sqrt();
            let lmax = tr / 2.0 + disc;
            let radius = if cfg.cutoff_sigmas.is_finite() {
                cfg.cutoff_sigmas * lmax.sqrt() + 1.0
            } else {
                f64::INFINITY
            };

            let (ty0, ty1, cols) = coverage(s.pixel_mean, radius, width, ts, tiles_x, tiles_y);
            for ty in ty0..ty1 {
                for &tx in &cols {
                    tiles[ty * tiles_x + tx].push(idx as u32);
                }
            }
        }

        // Depth order within each tile, ties broken by splat id.
        for tile in &mut tiles {
            tile.sort_by(|&i, &j| {
                let (si, sj) = (&splats[i as usize], &splats[j as usize]);
                si.depth
                    .total_cmp(&sj.depth)
                    .then(si.gaussian_id.cmp(&sj.gaussian_id))
            });
        }

        Ok(Renderer { width, height, cfg, prepared, tiles, tiles_x })
    }

    fn tile_bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let ts = self.cfg.tile_size.max(1);
        let ty = t / self.tiles_x;
        let tx = t % self.tiles_x;
        let x0 = tx * ts;
        let y0 = ty * ts;
        (x0, y0, (x0 + ts).min(self.width), (y0 + ts).min(self.height))
    }

    /// Rasterize. Tiles own disjoint pixel ranges, so the result is
    /// identical at any worker count.
    pub fn forward(&self) -> PasImage {
        let cutoff_q = self.cfg.cutoff_sigmas * self.cfg.cutoff_sigmas;
        let patches: Vec<Vec<f64>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|t| {
                let (x0, y0, x1, y1) = self.tile_bounds(t);
                let mut patch = vec![0.0; (x1 - x0) * (y1 - y0)];
                for y in y0..y1 {
                    for x in x0..x1 {
                        patch[(y - y0) * (x1 - x0) + (x - x0)] =
                            self.forward_pixel(&self.tiles[t], x as f64, y as f64, cutoff_q);
                    }
                }
                patch
            })
            .collect();

        let mut img = PasImage::zeros(self.width, self.height);
        for (t, patch) in patches.iter().enumerate() {
            let (x0, y0, x1, y1) = self.tile_bounds(t);
            for y in y0..y1 {
                for x in x0..x1 {
                    *img.at_mut(x, y) = patch[(y - y0) * (x1 - x0) + (x - x0)];
                }
            }
        }
        img
    }

    fn kernel(&self, p: &Prepared, px: f64, py: f64, cutoff_q: f64) -> Option<f64> {
        let mut dx = px - p.mean[0];
        dx -= self.width as f64 * (dx / self.width as f64).round();
        let dy = py - p.mean[1];
        let q = p.m00 * dx * dx + 2.0 * p.m01 * dx * dy + p.m11 * dy * dy;
        if q > cutoff_q {
            None
        } else {
            Some((-0.5 * q).exp())
        }
    }

    fn forward_pixel(&self, instances: &[u32], px: f64, py: f64, cutoff_q: f64) -> f64 {
        let mut value = 0.0;
        match self.cfg.mode {
            RenderMode::Alpha => {
                let mut trans = 1.0;
                for &i in instances {
                    let p = &self.prepared[i as usize];
                    let Some(w) = self.kernel(p, px, py, cutoff_q) else { continue };
                    let alpha = (1.0 - p.delta) * w;
                    value += trans * alpha * p.sig;
                    trans *= 1.0 - alpha;
                    if trans < self.cfg.transmittance_floor {
                        break;
                    }
                }
            }
            RenderMode::PaperLiteral => {
                let mut prod = 1.0;
                for &i in instances {
                    let p = &self.prepared[i as usize];
                    let Some(w) = self.kernel(p, px, py, cutoff_q) else { continue };
                    value += prod * w * p.sig;
                    prod *= p.delta;
                    if prod < self.cfg.transmittance_floor {
                        break;
                    }
                }
            }
        }
        value
    }

    /// Exact reverse-mode gradients of `forward` in the active mode.
    /// Per-tile contributions merge in tile order: bitwise reproducible at
    /// any worker count.
    pub fn backward(&self, d_image: &PasImage) -> Result<RenderGrads, RenderError> {
        if d_image.width != self.width || d_image.height != self.height {
            return Err(RenderError::DimensionMismatch(format!(
                "gradient image {}x{}, renderer {}x{}",
                d_image.width, d_image.height, self.width, self.height
            )));
        }
        let cutoff_q = self.cfg.cutoff_sigmas * self.cfg.cutoff_sigmas;

        let tile_grads: Vec<TileGrads> = (0..self.tiles.len())
            .into_par_iter()
            .map(|t| {
                let instances = &self.tiles[t];
                let n = instances.len();
                let mut g = TileGrads {
                    d_delta: vec![0.0; n],
                    d_sig: vec![0.0; n],
                    d_mean: vec![[0.0; 2]; n],
                    d_cov: vec![[0.0; 3]; n],
                };
                let mut stack: Vec<PixelEntry> = Vec::with_capacity(n);
                let (x0, y0, x1, y1) = self.tile_bounds(t);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let up = d_image.at(x, y);
                        if up == 0.0 {
                            continue;
                        }
                        self.backward_pixel(instances, x as f64, y as f64, cutoff_q, up, &mut stack, &mut g);
                    }
                }
                g
            })
            .collect();

        let n = self.prepared.len();
        let mut out = RenderGrads {
            d_delta: vec![0.0; n],
            d_sig: vec![0.0; n],
            d_pixel_mean: vec![[0.0; 2]; n],
            d_cov2d: vec![[[0.0; 2]; 2]; n],
        };
        for (t, g) in tile_grads.iter().enumerate() {
            for (local, &i) in self.tiles[t].iter().enumerate() {
                let i = i as usize;
                out.d_delta[i] += g.d_delta[local];
                out.d_sig[i] += g.d_sig[local];
                out.d_pixel_mean[i][0] += g.d_mean[local][0];
                out.d_pixel_mean[i][1] += g.d_mean[local][1];
                out.d_cov2d[i][0][0] += g.d_cov[local][0];
                out.d_cov2d[i][0][1] += g.d_cov[local][1];
                out.d_cov2d[i][1][0] += g.d_cov[local][1];
                out.d_cov2d[i][1][1] += g.d_cov[local][2];
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_pixel(
        &self,
        instances: &[u32],
        px: f64,
        py: f64,
        cutoff_q: f64,
        upstream: f64,
        stack: &mut Vec<PixelEntry>,
        g: &mut TileGrads,
    ) {
        // Forward walk retaining per-instance state, then a reverse walk
        // with suffix accumulators; no divisions, so saturated opacities
        // and zero deltas stay exact.
        stack.clear();
        match self.cfg.mode {
            RenderMode::Alpha => {
                let mut trans = 1.0;
                for (local, &i) in instances.iter().enumerate() {
                    let p = &self.prepared[i as usize];
                    let mut dx = px - p.mean[0];
                    dx -= self.width as f64 * (dx / self.width as f64).round();
                    let dy = py - p.mean[1];
                    let q = p.m00 * dx * dx + 2.0 * p.m01 * dx * dy + p.m11 * dy * dy;
                    if q > cutoff_q {
                        continue;
                    }
                    let w = (-0.5 * q).exp();
                    let alpha = (1.0 - p.delta) * w;
                    stack.push(PixelEntry { local, w, dx, dy, front: trans });
                    trans *= 1.0 - alpha;
                    if trans < self.cfg.transmittance_floor {
                        break;
                    }
                }
                // behind = emission composited from just after the current
                // instance; dI/dalpha_i = t_before * (sig_i - behind).
                let mut behind = 0.0;
                for e in stack.iter().rev() {
                    let p = &self.prepared[instances[e.local] as usize];
                    let alpha = (1.0 - p.delta) * e.w;
                    g.d_sig[e.local] += upstream * e.front * alpha;
                    let d_alpha = upstream * e.front * (p.sig - behind);
                    g.d_delta[e.local] -= d_alpha * e.w;
                    let d_w = d_alpha * (1.0 - p.delta);
                    kernel_backward(p, d_w, e, g);
                    behind = alpha * p.sig + (1.0 - alpha) * behind;
                }
            }
            RenderMode::PaperLiteral => {
                let mut prod = 1.0;
                for (local, &i) in instances.iter().enumerate() {
                    let p = &self.prepared[i as usize];
                    let mut dx = px - p.mean[0];
                    dx -= self.width as f64 * (dx / self.width as f64).round();
                    let dy = py - p.mean[1];
                    let q = p.m00 * dx * dx + 2.0 * p.m01 * dx * dy + p.m11 * dy * dy;
                    if q > cutoff_q {
                        continue;
                    }
                    let w = (-0.5 * q).exp();
                    stack.push(PixelEntry { local, w, dx, dy, front: prod });
                    prod *= p.delta;
                    if prod < self.cfg.transmittance_floor {
                        break;
                    }
                }
                // behind = sum_{k>i} w_k sig_k prod_{i<j<k} delta_j;
                // dI/ddelta_i = P_i * behind.
                let mut behind = 0.0;
                for e in stack.iter().rev() {
                    let p = &self.prepared[instances[e.local] as usize];
                    g.d_sig[e.local] += upstream * e.front * e.w;
                    g.d_delta[e.local] += upstream * e.front * behind;
                    let d_w = upstream * e.front * p.sig;
                    kernel_backward(p, d_w, e, g);
                    behind = e.w * p.sig + p.delta * behind;
                }
            }
        }
    }
}

struct TileGrads {
    d_delta: Vec<f64>,
    d_sig: Vec<f64>,
    d_mean: Vec<[f64; 2]>,
    d_cov: Vec<[f64; 3]>,
}

#[derive(Clone, Copy)]
struct PixelEntry {
    local: usize,
    w: f64,
    dx: f64,
    dy: f64,
    /// Transmittance (alpha mode) or delta product (paper literal) in
    /// front of this instance.
    front: f64,
}

/// w = exp(-q/2), q = D^T M D with D = pixel - mean (wrapped):
/// dL/dmean = dL/dw * w * (M D); dL/dCov = (dL/dw * w / 2) (MD)(MD)^T.
fn kernel_backward(p: &Prepared, d_w: f64, e: &PixelEntry, g: &mut TileGrads) {
    let mdx = p.m00 * e.dx + p.m01 * e.dy;
    let mdy = p.m01 * e.dx + p.m11 * e.dy;
    let s = d_w * e.w;
    g.d_mean[e.local][0] += s * mdx;
    g.d_mean[e.local][1] += s * mdy;
    let half = 0.5 * s;
    g.d_cov[e.local][0] += half * mdx * mdx;
    g.d_cov[e.local][1] += half * mdx * mdy;
    g.d_cov[e.local][2] += half * mdy * mdy;
}

/// Which tiles a disc of `radius` around `mean` can touch: rows clamped,
/// columns wrapped.
fn coverage(
    mean: [f64; 2],
    radius: f64,
    width: usize,
    ts: usize,
    tiles_x: usize,
    tiles_y: usize,
) -> (usize, usize, Vec<usize>) {
    if !radius.is_finite() || radius * 2.0 >= width as f64 {
        return (0, tiles_y, (0..tiles_x).collect());
    }
    let ty0 = ((mean[1] - radius).floor().max(0.0) as usize) / ts;
    let ty1 = (((mean[1] + radius).ceil().max(0.0) as usize) / ts + 1).min(tiles_y);
    let cx0 = (mean[0] - radius).floor() as i64;
    let cx1 = (mean[0] + radius).ceil() as i64;
    let tx0 = cx0.div_euclid(ts as i64);
    let tx1 = cx1.div_euclid(ts as i64);
    let mut cols: Vec<usize> = Vec::new();
    for t in tx0..=tx1 {
        let tx = (t.rem_euclid(tiles_x as i64)) as usize;
        if !cols.contains(&tx) {
            cols.push(tx);
        }
    }
    cols.sort_unstable();
    (ty0.min(tiles_y), ty1, cols)
}

/// Convenience: build and run the tiled renderer once.
pub fn render(
    splats: &[Splat2D],
    delta: &[f64],
    sig: &[f64],
    width: usize,
    height: usize,
    cfg: RenderConfig,
) -> Result<PasImage, RenderError> {
    Ok(Renderer::new(splats, delta, sig, width, height, cfg)?.forward())
}

/// Reference renderer: per-pixel loop over all splats globally
/// depth-sorted, no tiling, no cutoff, no early stop. Same math.
pub fn render_bruteforce(
    splats: &[Splat2D],
    delta: &[f64],
    sig: &[f64],
    width: usize,
    height: usize,
    mode: RenderMode,
) -> Result<PasImage, RenderError> {
    if splats.len() != delta.len() || splats.len() != sig.len() {
        return Err(RenderError::DimensionMismatch(format!(
            "splats {} / delta {} / sig {}",
            splats.len(),
            delta.len(),
            sig.len()
        )));
    }
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&i, &j| {
        splats[i]
            .depth
            .total_cmp(&splats[j].depth)
            .then(splats[i].gaussian_id.cmp(&splats[j].gaussian_id))
    });

    let mut img = PasImage::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let mut value = 0.0;
            let mut acc = 1.0; // transmittance or delta product
            for &i in &order {
                let s = &splats[i];
                let (a, b, c) = (s.cov2d[0][0], s.cov2d[0][1], s.cov2d[1][1]);
                let det = a * c - b * b;
                let (m00, m01, m11) = (c / det, -b / det, a / det);
                let mut dx = fx - s.pixel_mean[0];
                dx -= width as f64 * (dx / width as f64).round();
                let dy = fy - s.pixel_mean[1];
                let q = m00 * dx * dx + 2.0 * m01 * dx * dy + m11 * dy * dy;
                let w = (-0.5 * q).exp();
                match mode {
                    RenderMode::Alpha => {
                        let alpha = (1.0 - delta[i]) * w;
                        value += acc * alpha * sig[i];
                        acc *= 1.0 - alpha;
                    }
                    RenderMode::PaperLiteral => {
                        value += acc * w * sig[i];
                        acc *= delta[i];
                    }
                }
            }
            *img.at_mut(x, y) = value;
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn splat(mean: [f64; 2], iso: f64, depth: f64, id: usize) -> Splat2D {
        Splat2D { pixel_mean: mean, cov2d: [[iso, 0.0], [0.0, iso]], depth, gaussian_id: id }
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n_max: usize,
        w: f64,
        h: f64,
    ) -> (Vec<Splat2D>, Vec<f64>, Vec<f64>) {
        let n = rng.gen_range(1..=n_max);
        let mut splats = Vec::new();
        let mut delta = Vec::new();
        let mut sig = Vec::new();
        for id in 0..n {
            let a: f64 = rng.gen_range(0.5..20.0);
            let c: f64 = rng.gen_range(0.5..20.0);
            let b = rng.gen_range(-0.4..0.4) * (a * c).sqrt();
            splats.push(Splat2D {
                pixel_mean: [rng.gen_range(0.0..w), rng.gen_range(0.0..h)],
                cov2d: [[a, b], [b, c]],
                depth: rng.gen_range(0.5..10.0),
                gaussian_id: id,
            });
            delta.push(rng.gen_range(0.05..0.95));
            sig.push(rng.gen_range(0.0..2.0));
        }
        (splats, delta, sig)
    }

    #[test]
    fn empty_input_zero_image() {
        for mode in [RenderMode::Alpha, RenderMode::PaperLiteral] {
            let img = render(&[], &[], &[], 32, 16, RenderConfig::exact(mode)).unwrap();
            assert_eq!(img.total_energy(), 0.0);
            let img = render_bruteforce(&[], &[], &[], 32, 16, mode).unwrap();
            assert_eq!(img.total_energy(), 0.0);
        }
    }

    #[test]
    fn single_splat_center_value_paper_literal() {
        let s = splat([8.0, 8.0], 2.0, 1.0, 0);
        let img =
            render(&[s], &[0.3], &[1.7], 16, 16, RenderConfig::exact(RenderMode::PaperLiteral))
                .unwrap();
        // w = 1 at the mean pixel, single splat: I = sig.
        assert!((img.at(8, 8) - 1.7).abs() < 1e-12);
        assert_eq!(img.argmax(), (8, 8));
    }

    #[test]
    fn two_colocated_splats_paper_literal() {
        let s1 = splat([8.0, 8.0], 2.0, 1.0, 0);
        let s2 = splat([8.0, 8.0], 2.0, 2.0, 1);
        let img = render(
            &[s1, s2],
            &[0.5, 0.0],
            &[1.0, 2.0],
            16,
            16,
            RenderConfig::exact(RenderMode::PaperLiteral),
        )
        .unwrap();
        // I = 1 + 0.5 * 2 = 2 at the shared center.
        assert!((img.at(8, 8) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_colocated_splats_alpha() {
        let s1 = splat([8.0, 8.0], 2.0, 1.0, 0);
        let s2 = splat([8.0, 8.0], 2.0, 2.0, 1);
        let img = render(
            &[s1, s2],
            &[0.5, 0.0],
            &[1.0, 2.0],
            16,
            16,
            RenderConfig::exact(RenderMode::Alpha),
        )
        .unwrap();
        // alpha1 = 0.5, alpha2 = 1: I = 0.5*1 + 0.5*1*2 = 1.5.
        assert!((img.at(8, 8) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn occluded_rear_splat_gets_zero_sig_gradient() {
        // Front delta = 0 in paper-literal mode blocks everything behind.
        let s1 = splat([8.0, 8.0], 2.0, 1.0, 0);
        let s2 = splat([8.0, 8.0], 2.0, 2.0, 1);
        let r = Renderer::new(
            &[s1, s2],
            &[0.0, 0.5],
            &[1.0, 2.0],
            16,
            16,
            RenderConfig::exact(RenderMode::PaperLiteral),
        )
        .unwrap();
        let mut d_img = PasImage::zeros(16, 16);
        for v in d_img.values.iter_mut() {
            *v = 1.0;
        }
        let g = r.backward(&d_img).unwrap();
        assert_eq!(g.d_sig[1], 0.0);
        assert!(g.d_sig[0] > 0.0);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let s = splat([4.0, 4.0], 3.0, 1.0, 0);
        let r = Renderer::new(&[s], &[0.4], &[1.0], 16, 16, RenderConfig::default()).unwrap();
        let g = r.backward(&PasImage::zeros(16, 16)).unwrap();
        assert!(g.d_delta.iter().all(|&v| v == 0.0));
        assert!(g.d_sig.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiled_matches_bruteforce_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for trial in 0..200 {
            let (splats, delta, sig) = random_instance(&mut rng, 50, 32.0, 32.0);
            for mode in [RenderMode::Alpha, RenderMode::PaperLiteral] {
                let tiled =
                    render(&splats, &delta, &sig, 32, 32, RenderConfig::exact(mode)).unwrap();
                let brute = render_bruteforce(&splats, &delta, &sig, 32, 32, mode).unwrap();
                for (a, b) in tiled.values.iter().zip(&brute.values) {
                    assert!((a - b).abs() < 1e-6, "trial {trial} mode {mode:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn input_order_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut splats, mut delta, mut sig) = random_instance(&mut rng, 20, 32.0, 32.0);
        let a = render(&splats, &delta, &sig, 32, 32, RenderConfig::default()).unwrap();
        // Rotate the input arrays; ids travel with their splats.
        let k = splats.len() / 2;
        splats.rotate_left(k);
        delta.rotate_left(k);
        sig.rotate_left(k);
        let b = render(&splats, &delta, &sig, 32, 32, RenderConfig::default()).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn sig_monotonicity_alpha_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (splats, delta, mut sig) = random_instance(&mut rng, 10, 32.0, 32.0);
        let before =
            render(&splats, &delta, &sig, 32, 32, RenderConfig::exact(RenderMode::Alpha)).unwrap();
        sig[0] += 0.5;
        let after =
            render(&splats, &delta, &sig, 32, 32, RenderConfig::exact(RenderMode::Alpha)).unwrap();
        for (a, b) in after.values.iter().zip(&before.values) {
            assert!(a >= b);
        }
    }

    #[test]
    fn azimuth_wrap_symmetric_contribution() {
        // A splat centered on column 0 reaches columns 1 and W-1 equally.
        let s = splat([0.0, 8.0], 4.0, 1.0, 0);
        let img =
            render(&[s], &[0.2], &[1.0], 32, 16, RenderConfig::exact(RenderMode::Alpha)).unwrap();
        assert!(img.at(1, 8) > 0.0);
        assert!((img.at(1, 8) - img.at(31, 8)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(211);
        for mode in [RenderMode::Alpha, RenderMode::PaperLiteral] {
            for trial in 0..20 {
                let (splats, delta, sig) = random_instance(&mut rng, 5, 8.0, 8.0);
                let cfg = RenderConfig::exact(mode);
                // Random upstream gradient defines the scalar objective
                // L = <d_img, render(...)>.
                let mut d_img = PasImage::zeros(8, 8);
                for v in d_img.values.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let objective = |splats: &[Splat2D], delta: &[f64], sig: &[f64]| {
                    let img = render(splats, delta, sig, 8, 8, cfg).unwrap();
                    img.values.iter().zip(&d_img.values).map(|(a, b)| a * b).sum::<f64>()
                };

                let r = Renderer::new(&splats, &delta, &sig, 8, 8, cfg).unwrap();
                let g = r.backward(&d_img).unwrap();

                let h = 1e-6;
                let check = |analytic: f64, fd: f64, what: &str| {
                    assert!(
                        (analytic - fd).abs() <= 1e-4 * fd.abs().max(1e-3),
                        "{mode:?} trial {trial} {what}: analytic {analytic} fd {fd}"
                    );
                };

                for i in 0..splats.len() {
                    let mut d = delta.clone();
                    d[i] += h;
                    let up = objective(&splats, &d, &sig);
                    d[i] -= 2.0 * h;
                    let down = objective(&splats, &d, &sig);
                    check(g.d_delta[i], (up - down) / (2.0 * h), "delta");

                    let mut s = sig.clone();
                    s[i] += h;
                    let up = objective(&splats, &delta, &s);
                    s[i] -= 2.0 * h;
                    let down = objective(&splats, &delta, &s);
                    check(g.d_sig[i], (up - down) / (2.0 * h), "sig");

                    for axis in 0..2 {
                        let mut sp = splats.clone();
                        sp[i].pixel_mean[axis] += h;
                        let up = objective(&sp, &delta, &sig);
                        sp[i].pixel_mean[axis] -= 2.0 * h;
                        let down = objective(&sp, &delta, &sig);
                        check(
                            g.d_pixel_mean[i][axis],
                            (up - down) / (2.0 * h),
                            &format!("mean[{axis}]"),
                        );
                    }
                    // Diagonal covariance entries, then the symmetric
                    // off-diagonal pair moved together.
                    for rc in [(0, 0), (1, 1)] {
                        let mut sp = splats.clone();
                        sp[i].cov2d[rc.0][rc.1] += h;
                        let up = objective(&sp, &delta, &sig);
                        sp[i].cov2d[rc.0][rc.1] -= 2.0 * h;
                        let down = objective(&sp, &delta, &sig);
                        check(
                            g.d_cov2d[i][rc.0][rc.1],
                            (up - down) / (2.0 * h),
                            &format!("cov[{}][{}]", rc.0, rc.1),
                        );
                    }
                    let mut sp = splats.clone();
                    sp[i].cov2d[0][1] += h;
                    sp[i].cov2d[1][0] += h;
                    let up = objective(&sp, &delta, &sig);
                    sp[i].cov2d[0][1] -= 2.0 * h;
                    sp[i].cov2d[1][0] -= 2.0 * h;
                    let down = objective(&sp, &delta, &sig);
                    check(
                        g.d_cov2d[i][0][1] + g.d_cov2d[i][1][0],
                        (up - down) / (2.0 * h),
                        "cov offdiag",
                    );
                }
            }
        }
    }
}
