//! Content-side features: log-mel spectrograms, liftered envelopes,
//! frequency warping, F0 contours and their quantized encodings.

mod cache;
mod conditioning;
mod lifter;
mod mel;
mod pitch;
mod warp;

pub use cache::{extract_features, UtteranceFeatures};
pub use conditioning::{build_conditioning, ConditioningBundle, ConditioningLayout};
pub use lifter::{dct_matrix, lifter_envelope, SpectralEnvelope, DEFAULT_LIFTER_COEFFS};
pub use mel::{
    compute_log_mel, default_filterbank, hann_window, log_mel_from_magnitude, mel_filterbank,
    num_frames, padded_window, stft_magnitude, LogMelSpectrogram, F_MAX, F_MIN, HOP, LOG_FLOOR,
    N_FFT, N_MELS, WIN_LENGTH,
};
pub use pitch::{
    estimate_f0, median_f0_bin, median_f0_onehot, pnorm_f0, F0Contour, MedianF0OneHot,
    NormalizedQuantizedF0, F0_MAX_HZ, F0_MIN_HZ, MEDIAN_BINS, PNORM_BINS, PNORM_CLASSES,
    VOICING_THRESHOLD,
};
pub use warp::{warp_envelope, WarpFactor, WARP_MAX, WARP_MIN};

/// Dense row-major matrix; rows are frames unless stated otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FrameMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> crate::Result<Self> {
        if data.len() != rows * cols {
            return Err(crate::Error::shape(format!(
                "{} values cannot fill {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        Self {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}
