//! Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
//! K2 = 0.03, dynamic range 1, averaged over valid window positions, plus
//! its analytic gradient with respect to the first image.

pub const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 1e-4; // (0.01 * 1)^2
const C2: f64 = 9e-4; // (0.03 * 1)^2

fn window_weights() -> [f64; WINDOW * WINDOW] {
    let mut w = [0.0; WINDOW * WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut total = 0.0;
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SIGMA * SIGMA)).exp();
            w[y * WINDOW + x] = v;
            total += v;
        }
    }
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// Per-window statistics at top-left (wx, wy).
#[allow(clippy::too_many_arguments)]
fn window_stats(
    a: &[f64],
    b: &[f64],
    width: usize,
    wx: usize,
    wy: usize,
    weights: &[f64; WINDOW * WINDOW],
) -> (f64, f64, f64, f64, f64) {
    let (mut mu_a, mut mu_b, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in 0..WINDOW {
        let row = (wy + y) * width + wx;
        for x in 0..WINDOW {
            let w = weights[y * WINDOW + x];
            let va = a[row + x];
            let vb = b[row + x];
            mu_a += w * va;
            mu_b += w * vb;
            aa += w * va * va;
            bb += w * vb * vb;
            ab += w * va * vb;
        }
    }
    (mu_a, mu_b, aa - mu_a * mu_a, bb - mu_b * mu_b, ab - mu_a * mu_b)
}

/// Mean SSIM over all valid window positions. Errors on dimension mismatch
/// or images smaller than the window.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64, String> {
    check_dims(a, b, width, height)?;
    let weights = window_weights();
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(height - WINDOW) {
        for wx in 0..=(width - WINDOW) {
            let (mu_a, mu_b, var_a, var_b, cov) = window_stats(a, b, width, wx, wy, &weights);
            let s = ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2))
                / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM plus d(mean SSIM)/d(a) scattered per pixel.
pub fn ssim_with_grad(
    a: &[f64],
    b: &[f64],
    width: usize,
    height: usize,
) -> Result<(f64, Vec<f64>), String> {
    check_dims(a, b, width, height)?;
    let weights = window_weights();
    let mut grad = vec![0.0; a.len()];
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(height - WINDOW) {
        for wx in 0..=(width - WINDOW) {
            let (mu_a, mu_b, var_a, var_b, cov) = window_stats(a, b, width, wx, wy, &weights);
            let a1 = 2.0 * mu_a * mu_b + C1;
            let a2 = 2.0 * cov + C2;
            let b1 = mu_a * mu_a + mu_b * mu_b + C1;
            let b2 = var_a + var_b + C2;
            let p = 1.0 / (b1 * b2);
            let s = a1 * a2 * p;
            total += s;
            count += 1;
            // dS/da_i = 2 p w_i [mu_b A2 + (b_i - mu_b) A1
            //                    - S (mu_a B2 + (a_i - mu_a) B1)]
            let two_p = 2.0 * p;
            let k0 = mu_b * a2 - s * mu_a * b2;
            for y in 0..WINDOW {
                let row = (wy + y) * width + wx;
                for x in 0..WINDOW {
                    let w = weights[y * WINDOW + x];
                    let da = a[row + x] - mu_a;
                    let db = b[row + x] - mu_b;
                    grad[row + x] += w * two_p * (k0 + db * a1 - s * da * b1);
                }
            }
        }
    }
    let inv_count = 1.0 / count as f64;
    for g in grad.iter_mut() {
        *g *= inv_count;
    }
    Ok((total * inv_count, grad))
}

fn check_dims(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<(), String> {
    if a.len() != width * height || b.len() != width * height {
        return Err(format!(
            "dimension mismatch: {}x{} expects {} values, got {} and {}",
            width,
            height,
            width * height,
            a.len(),
            b.len()
        ));
    }
    if width < WINDOW || height < WINDOW {
        return Err(format!("image {width}x{height} smaller than the {WINDOW}x{WINDOW} window"));
    }
    Ok(())
}
