//! Combined L1 + SSIM training loss:
//! L = (1 - lambda) * mean|pred - gt| + lambda * (1 - SSIM(pred, gt)).

use super::ssim::ssim_with_grad;
use crate::pas::PasImage;

/// Scalar loss plus the exact gradient with respect to every predicted
/// pixel.
pub fn loss(pred: &PasImage, gt: &PasImage, lambda: f64) -> Result<(f64, PasImage), String> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(format!(
            "dimension mismatch: pred {}x{}, gt {}x{}",
            pred.width, pred.height, gt.width, gt.height
        ));
    }
    let n = pred.values.len() as f64;
    let mut l1 = 0.0;
    let mut d_pred = PasImage::zeros(pred.width, pred.height);
    for (i, (&p, &g)) in pred.values.iter().zip(&gt.values).enumerate() {
        let diff = p - g;
        l1 += diff.abs();
        // Subgradient of |x|: zero at the kink (f64::signum(0) is 1).
        let sign = if diff == 0.0 { 0.0 } else { diff.signum() };
        d_pred.values[i] = (1.0 - lambda) * sign / n;
    }
    l1 /= n;

    let (s, s_grad) = ssim_with_grad(&pred.values, &gt.values, pred.width, pred.height)?;
    for (d, g) in d_pred.values.iter_mut().zip(&s_grad) {
        *d -= lambda * g;
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - s), d_pred))
}
