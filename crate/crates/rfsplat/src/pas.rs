//! Power angular spectrum images.

use crate::geom::Vec3;

/// Default PAS width (azimuth pixels over 360 degrees).
pub const DEFAULT_WIDTH: usize = 360;
/// Default PAS height (elevation pixels over 90 degrees).
pub const DEFAULT_HEIGHT: usize = 90;

/// An H x W grid of nonnegative power values on the RX hemisphere.
/// Row-major storage, row 0 at the boresight (zenith).
#[derive(Debug, Clone, PartialEq)]
pub struct PasImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub tx: Vec3,
    pub freq: f64,
}

impl PasImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        PasImage { width, height, values: vec![0.0; width * height], tx: [0.0; 3], freq: 0.0 }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut f64 {
        &mut self.values[y * self.width + x]
    }

    pub fn total_energy(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Index of the largest pixel as (x, y).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.at(x, y);
                if v > best_v {
                    best_v = v;
                    best = (x, y);
                }
            }
        }
        best
    }
}
