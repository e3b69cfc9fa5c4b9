use std::sync::OnceLock;

use super::{FrameMatrix, LogMelSpectrogram, N_MELS};
use crate::error::{Error, Result};

pub const DEFAULT_LIFTER_COEFFS: usize = 20;

/// Smooth per-frame log-mel envelope, same axes as the source spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEnvelope(pub FrameMatrix);

impl SpectralEnvelope {
    pub fn new(values: FrameMatrix) -> Result<Self> {
        if values.cols() != N_MELS {
            return Err(Error::shape(format!(
                "envelope needs {N_MELS} bins, got {}",
                values.cols()
            )));
        }
        Ok(Self(values))
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn values(&self) -> &FrameMatrix {
        &self.0
    }
}

/// Orthonormal DCT-II over `n` points; row `k` is quefrency `k`.
pub fn dct_matrix(n: usize) -> FrameMatrix {
    let mut m = FrameMatrix::zeros(n, n);
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            let v = scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
            m.row_mut(k)[i] = v as f32;
        }
    }
    m
}

/// Projection matrix `Cᵀ diag(1..1,0..0) C` keeping the lowest `n_coeffs`
/// quefrencies, row-major `80 × 80` in f64.
fn projection(n_coeffs: usize) -> Vec<f64> {
    let n = N_MELS;
    let mut c = vec![0.0f64; n * n];
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            c[k * n + i] =
                scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (0..n_coeffs).map(|k| c[k * n + i] * c[k * n + j]).sum();
        }
    }
    p
}

fn cached_projection(n_coeffs: usize) -> &'static [f64] {
    static CACHE: [OnceLock<Vec<f64>>; N_MELS + 1] = [const { OnceLock::new() }; N_MELS + 1];
    CACHE[n_coeffs].get_or_init(|| projection(n_coeffs))
}

/// Low-quefrency liftering: per frame, take the orthonormal cosine transform
/// over the mel axis, keep the lowest `n_coeffs` coefficients, invert.
pub fn lifter_envelope(x: &LogMelSpectrogram, n_coeffs: usize) -> Result<SpectralEnvelope> {
    if !(1..=N_MELS).contains(&n_coeffs) {
        return Err(Error::invalid(format!(
            "lifter coefficient count {n_coeffs} outside [1, {N_MELS}]"
        )));
    }
    let p = cached_projection(n_coeffs);
    let src = x.values();
    let mut out = FrameMatrix::zeros(src.rows(), N_MELS);
    for t in 0..src.rows() {
        let frame = src.row(t);
        let row = out.row_mut(t);
        for (i, o) in row.iter_mut().enumerate() {
            *o = p[i * N_MELS..(i + 1) * N_MELS]
                .iter()
                .zip(frame)
                .map(|(a, b)| a * *b as f64)
                .sum::<f64>() as f32;
        }
    }
    SpectralEnvelope::new(out)
}
