use super::{FrameMatrix, SpectralEnvelope};
use crate::error::{Error, Result};

pub const WARP_MIN: f32 = 0.85;
pub const WARP_MAX: f32 = 1.15;

/// Frequency-axis stretch factor in `[0.85, 1.15]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct WarpFactor(f32);

impl WarpFactor {
    pub const IDENTITY: WarpFactor = WarpFactor(1.0);

    pub fn new(alpha: f32) -> Result<Self> {
        if !(WARP_MIN..=WARP_MAX).contains(&alpha) {
            return Err(Error::invalid(format!(
                "warp factor {alpha} outside [{WARP_MIN}, {WARP_MAX}]"
            )));
        }
        Ok(Self(alpha))
    }

    pub fn alpha(self) -> f32 {
        self.0
    }
}

/// `H'(t, b) = H(t, b / alpha)` with linear interpolation between mel bins;
/// reads past the top bin take the edge value.
pub fn warp_envelope(h: &SpectralEnvelope, alpha: WarpFactor) -> SpectralEnvelope {
    let src = h.values();
    if alpha.0 == 1.0 {
        return h.clone();
    }
    let bins = src.cols();
    let last = (bins - 1) as f64;
    let taps: Vec<(usize, usize, f32)> = (0..bins)
        .map(|b| {
            let pos = (b as f64 / alpha.0 as f64).min(last);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(bins - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect();
    let mut out = FrameMatrix::zeros(src.rows(), bins);
    for t in 0..src.rows() {
        let row = src.row(t);
        for (o, &(lo, hi, frac)) in out.row_mut(t).iter_mut().zip(&taps) {
            *o = row[lo] * (1.0 - frac) + row[hi] * frac;
        }
    }
    SpectralEnvelope(out)
}
