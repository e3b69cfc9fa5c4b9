use super::{num_frames, FrameMatrix, HOP};
use crate::corpus::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const F0_MIN_HZ: f32 = 50.0;
pub const F0_MAX_HZ: f32 = 600.0;
/// Upper bound on the cumulative-mean-normalized difference at the chosen
/// lag for a frame to count as voiced.
pub const VOICING_THRESHOLD: f32 = 0.3;
/// Voiced quantization bins of `p_norm`; class `PNORM_BINS` marks unvoiced.
pub const PNORM_BINS: usize = 256;
pub const PNORM_CLASSES: usize = PNORM_BINS + 1;
pub const MEDIAN_BINS: usize = 64;
const PNORM_CLIP: f64 = 3.0;
/// Median-F0 range: C2 to C5.
const MEDIAN_LO_HZ: f64 = 65.4;
const MEDIAN_HI_HZ: f64 = 523.3;
/// Integration window of the difference function, in samples.
const ANALYSIS_WINDOW: usize = 768;

/// Per-frame F0 in Hz, `0.0` for unvoiced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour(Vec<f32>);

impl F0Contour {
    pub fn new(f0_hz: Vec<f32>) -> Result<Self> {
        if let Some(v) = f0_hz
            .iter()
            .find(|&&v| v != 0.0 && !(F0_MIN_HZ..=F0_MAX_HZ).contains(&v))
        {
            return Err(Error::invalid(format!("f0 value {v} outside search range")));
        }
        Ok(Self(f0_hz))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn voiced(&self) -> impl Iterator<Item = f32> + '_ {
        self.0.iter().copied().filter(|&v| v > 0.0)
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self(self.0[start..start + len].to_vec())
    }
}

/// One-hot-encoded normalized quantized log F0, stored as class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedQuantizedF0(Vec<u16>);

impl NormalizedQuantizedF0 {
    pub fn from_indices(indices: Vec<u16>) -> Result<Self> {
        if indices.iter().any(|&i| i as usize >= PNORM_CLASSES) {
            return Err(Error::invalid("p_norm class index out of range"));
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[u16] {
        &self.0
    }

    pub fn frames(&self) -> usize {
        self.0.len()
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self(self.0[start..start + len].to_vec())
    }

    /// `frames × 257` one-hot matrix.
    pub fn one_hot(&self) -> FrameMatrix {
        let mut m = FrameMatrix::zeros(self.0.len(), PNORM_CLASSES);
        for (t, &i) in self.0.iter().enumerate() {
            m.row_mut(t)[i as usize] = 1.0;
        }
        m
    }
}

/// 64-way one-hot of a median log F0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MedianF0OneHot(u8);

impl MedianF0OneHot {
    pub fn from_bin(bin: usize) -> Result<Self> {
        if bin >= MEDIAN_BINS {
            return Err(Error::invalid(format!("median F0 bin {bin} out of range")));
        }
        Ok(Self(bin as u8))
    }

    pub fn bin(self) -> usize {
        self.0 as usize
    }

    pub fn one_hot(self) -> [f32; MEDIAN_BINS] {
        let mut v = [0.0; MEDIAN_BINS];
        v[self.0 as usize] = 1.0;
        v
    }
}

/// Difference-function pitch tracker over `[50, 600]` Hz, one estimate per
/// centered spectrogram frame.
pub fn estimate_f0(clip: &AudioClip) -> F0Contour {
    let x = clip.samples();
    let fs = SAMPLE_RATE as f32;
    let min_lag = (fs / F0_MAX_HZ).floor() as usize;
    let max_lag = (fs / F0_MIN_HZ).ceil() as usize;
    let span = ANALYSIS_WINDOW + max_lag + 1;
    let frames = num_frames(x.len(), HOP);

    let mut seg = vec![0.0f32; span];
    let mut diff = vec![0.0f32; max_lag + 2];
    let mut f0 = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = (t * HOP) as isize - (span / 2) as isize;
        for (j, s) in seg.iter_mut().enumerate() {
            let idx = start + j as isize;
            *s = if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize]
            } else {
                0.0
            };
        }
        let energy: f32 = seg[..ANALYSIS_WINDOW].iter().map(|v| v * v).sum();
        if energy < 1e-6 {
            f0.push(0.0);
            continue;
        }
        for (lag, d) in diff.iter_mut().enumerate().skip(1) {
            *d = seg[..ANALYSIS_WINDOW]
                .iter()
                .zip(&seg[lag..lag + ANALYSIS_WINDOW])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
        // Cumulative mean normalization.
        let mut cmnd = vec![1.0f32; max_lag + 2];
        let mut running = 0.0f32;
        for lag in 1..=max_lag + 1 {
            running += diff[lag];
            cmnd[lag] = if running > 0.0 {
                diff[lag] * lag as f32 / running
            } else {
                1.0
            };
        }
        let mut chosen = None;
        let mut lag = min_lag.max(2);
        while lag <= max_lag {
            if cmnd[lag] < VOICING_THRESHOLD {
                while lag < max_lag && cmnd[lag + 1] < cmnd[lag] {
                    lag += 1;
                }
                chosen = Some(lag);
                break;
            }
            lag += 1;
        }
        let value = chosen
            .map(|lag| {
                let (a, b, c) = (cmnd[lag - 1], cmnd[lag], cmnd[lag + 1]);
                let denom = a - 2.0 * b + c;
                let shift = if denom.abs() > 1e-12 {
                    (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                fs / (lag as f32 + shift)
            })
            .filter(|hz| (F0_MIN_HZ..=F0_MAX_HZ).contains(hz))
            .unwrap_or(0.0);
        f0.push(value);
    }
    F0Contour(f0)
}

/// Per-utterance z-normalized log F0 over voiced frames, clipped to ±3σ,
/// quantized into 256 uniform bins; unvoiced frames map to class 256.
pub fn pnorm_f0(contour: &F0Contour) -> NormalizedQuantizedF0 {
    let logs: Vec<f64> = contour.voiced().map(|v| (v as f64).ln()).collect();
    let (mean, std) = if logs.is_empty() {
        (0.0, 0.0)
    } else {
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let indices = contour
        .values()
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                return PNORM_BINS as u16;
            }
            let z = if std > 1e-12 {
                ((v as f64).ln() - mean) / std
            } else {
                0.0
            };
            let z = z.clamp(-PNORM_CLIP, PNORM_CLIP);
            let bin = (PNORM_BINS as f64 * (z + PNORM_CLIP) / (2.0 * PNORM_CLIP)).floor() as usize;
            bin.min(PNORM_BINS - 1) as u16
        })
        .collect();
    NormalizedQuantizedF0(indices)
}

/// Bin of a frequency on the 64-bin log scale from C2 to C5, clamped.
pub fn median_f0_bin(hz: f64) -> usize {
    let pos = (hz.ln() - MEDIAN_LO_HZ.ln()) / (MEDIAN_HI_HZ.ln() - MEDIAN_LO_HZ.ln());
    let bin = (MEDIAN_BINS as f64 * pos).floor();
    bin.clamp(0.0, (MEDIAN_BINS - 1) as f64) as usize
}

/// One-hot of the median voiced log F0 across all given contours.
pub fn median_f0_onehot<'a>(
    contours: impl IntoIterator<Item = &'a F0Contour>,
) -> Result<MedianF0OneHot> {
    let mut logs: Vec<f64> = contours
        .into_iter()
        .flat_map(|c| c.voiced())
        .map(|v| (v as f64).ln())
        .collect();
    if logs.is_empty() {
        return Err(Error::AllUnvoiced);
    }
    logs.sort_by(f64::total_cmp);
    let n = logs.len();
    let median = if n % 2 == 1 {
        logs[n / 2]
    } else {
        0.5 * (logs[n / 2 - 1] + logs[n / 2])
    };
    MedianF0OneHot::from_bin(median_f0_bin(median.exp()))
}
