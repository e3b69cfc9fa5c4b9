use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use super::FrameMatrix;
use crate::corpus::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_MELS: usize = 80;
pub const N_FFT: usize = 1024;
pub const HOP: usize = 256;
pub const WIN_LENGTH: usize = 1024;
/// Magnitudes are floored here before the log.
pub const LOG_FLOOR: f32 = 1e-5;
pub const F_MIN: f32 = 0.0;
pub const F_MAX: f32 = 8000.0;

/// `frames × 80` log mel-filterbank magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram(pub FrameMatrix);

impl LogMelSpectrogram {
    pub fn new(values: FrameMatrix) -> Result<Self> {
        if values.cols() != N_MELS {
            return Err(Error::shape(format!(
                "log-mel needs {N_MELS} bins, got {}",
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

/// Number of centered frames for a signal of `len` samples.
pub fn num_frames(len: usize, hop: usize) -> usize {
    1 + len / hop
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f32> {
    (0..len)
        .map(|n| {
            let x = std::f64::consts::PI * 2.0 * n as f64 / len as f64;
            (0.5 - 0.5 * x.cos()) as f32
        })
        .collect()
}

/// Window of `win_length` zero-padded symmetrically to `n_fft`.
pub fn padded_window(n_fft: usize, win_length: usize) -> Vec<f32> {
    assert!(win_length <= n_fft);
    let mut w = vec![0.0; n_fft];
    let off = (n_fft - win_length) / 2;
    w[off..off + win_length].copy_from_slice(&hann_window(win_length));
    w
}

fn fft_plan(n_fft: usize) -> Arc<dyn Fft<f32>> {
    FftPlanner::new().plan_fft_forward(n_fft)
}

/// Centered STFT magnitude with zero padding of `n_fft / 2` on each side.
/// Returns a `frames × (n_fft / 2 + 1)` matrix.
pub fn stft_magnitude(samples: &[f32], n_fft: usize, hop: usize, win_length: usize) -> FrameMatrix {
    let bins = n_fft / 2 + 1;
    let frames = num_frames(samples.len(), hop);
    let window = padded_window(n_fft, win_length);
    let fft = fft_plan(n_fft);
    let pad = n_fft / 2;
    let mut out = FrameMatrix::zeros(frames, bins);
    let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let start = (t * hop) as isize - pad as isize;
        for (j, slot) in buf.iter_mut().enumerate() {
            let idx = start + j as isize;
            let s = if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize]
            } else {
                0.0
            };
            *slot = Complex32::new(s * window[j], 0.0);
        }
        fft.process(&mut buf);
        for (b, v) in out.row_mut(t).iter_mut().zip(&buf[..bins]) {
            *b = v.norm();
        }
    }
    out
}

fn hz_to_mel(hz: f64) -> f64 {
    // Slaney: linear below 1 kHz, logarithmic above.
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

/// Slaney-style triangular mel filterbank with area normalization,
/// `n_mels × (n_fft / 2 + 1)`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f32, f_max: f32) -> FrameMatrix {
    let bins = n_fft / 2 + 1;
    let fft_freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    let mel_min = hz_to_mel(f_min as f64);
    let mel_max = hz_to_mel(f_max as f64);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = FrameMatrix::zeros(n_mels, bins);
    for m in 0..n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let up = (f - lo) / (center - lo);
            let down = (hi - f) / (hi - center);
            let w = up.min(down).max(0.0);
            fb.row_mut(m)[k] = (w * enorm) as f32;
        }
    }
    fb
}

/// The 80 × 513 filterbank used for every log-mel in the crate.
pub fn default_filterbank() -> &'static FrameMatrix {
    static FB: OnceLock<FrameMatrix> = OnceLock::new();
    FB.get_or_init(|| mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS, F_MIN, F_MAX))
}

/// Projects magnitude frames onto the mel filterbank and takes a floored log.
pub fn log_mel_from_magnitude(mag: &FrameMatrix) -> FrameMatrix {
    let fb = default_filterbank();
    let mut out = FrameMatrix::zeros(mag.rows(), N_MELS);
    for t in 0..mag.rows() {
        let frame = mag.row(t);
        for m in 0..N_MELS {
            let e: f32 = fb.row(m).iter().zip(frame).map(|(w, x)| w * x).sum();
            out.row_mut(t)[m] = e.max(LOG_FLOOR).ln();
        }
    }
    out
}

/// Centered 80-bin log-mel spectrogram (FFT 1024, Hann 1024, hop 256).
pub fn compute_log_mel(clip: &AudioClip) -> Result<LogMelSpectrogram> {
    if clip.len() < HOP {
        return Err(Error::invalid(format!(
            "clip of {} samples is shorter than one hop ({HOP})",
            clip.len()
        )));
    }
    let mag = stft_magnitude(clip.samples(), N_FFT, HOP, WIN_LENGTH);
    LogMelSpectrogram::new(log_mel_from_magnitude(&mag))
}
