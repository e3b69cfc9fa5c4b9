use candle_core::{Result, Tensor};

use super::fft_ops::FramedDft;
use super::DEVICE;
use crate::features::{default_filterbank, padded_window, HOP, LOG_FLOOR, N_FFT, N_MELS, WIN_LENGTH};

/// Differentiable centered STFT magnitude. Zero padding of `n_fft / 2` on
/// both sides matches the host-side STFT.
#[derive(Clone)]
pub struct StftMagnitude {
    n_fft: usize,
    hop: usize,
    win_length: usize,
    dft: FramedDft,
    power_floor: f64,
}

impl std::fmt::Debug for StftMagnitude {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftMagnitude")
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .field("win_length", &self.win_length)
            .finish()
    }
}

impl StftMagnitude {
    pub fn new(n_fft: usize, hop: usize, win_length: usize, power_floor: f64) -> Result<Self> {
        if hop == 0 || win_length > n_fft {
            candle_core::bail!("invalid STFT parameters n_fft={n_fft} hop={hop} win={win_length}");
        }
        Ok(Self {
            n_fft,
            hop,
            win_length,
            dft: FramedDft::new(n_fft, hop, padded_window(n_fft, win_length)),
            power_floor,
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn win_length(&self) -> usize {
        self.win_length
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// `(B, T)` waveform to `(B, frames, bins)` magnitudes,
    /// `sqrt(max(re² + im², floor))`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let spec = self.dft.apply(x)?;
        let bins = self.bins();
        let re = spec.narrow(2, 0, bins)?;
        let im = spec.narrow(2, bins, bins)?;
        (re.sqr()? + im.sqr()?)?.maximum(self.power_floor)?.sqrt()
    }
}

/// Differentiable counterpart of `compute_log_mel`: `(B, T)` waveform to
/// `(B, frames, 80)` log-mel.
#[derive(Debug, Clone)]
pub struct MelFrontend {
    stft: StftMagnitude,
    filterbank: Tensor,
}

impl MelFrontend {
    pub fn new() -> Result<Self> {
        let fb = default_filterbank();
        let filterbank = Tensor::from_vec(fb.data().to_vec(), (N_MELS, fb.cols()), &DEVICE)?
            .t()?
            .contiguous()?;
        Ok(Self {
            stft: StftMagnitude::new(N_FFT, HOP, WIN_LENGTH, 1e-14)?,
            filterbank,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mag = self.stft.forward(x)?;
        mag.broadcast_matmul(&self.filterbank)?
            .maximum(LOG_FLOOR as f64)?
            .log()
    }
}
