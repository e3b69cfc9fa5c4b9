use candle_core::{Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, reflect_pad_end, Conv1d, Conv2d, ParamStore, StftMagnitude, LRELU_SLOPE};

/// Power floor applied before the square root of discriminator
/// spectrograms, keeping the log-magnitude loss finite.
const POWER_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftResolution {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
}

impl StftResolution {
    pub const fn new(n_fft: usize, hop: usize, win_length: usize) -> Self {
        Self {
            n_fft,
            hop,
            win_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop >= self.win_length || self.win_length > self.n_fft {
            return Err(Error::invalid(format!(
                "STFT resolution needs 0 < hop < window ≤ n_fft, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub resolutions: Vec<StftResolution>,
    pub periods: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            resolutions: vec![
                StftResolution::new(1024, 120, 600),
                StftResolution::new(2048, 240, 1200),
                StftResolution::new(512, 50, 240),
            ],
            periods: vec![2, 3, 5, 7, 11],
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::invalid("at least one STFT resolution is required"));
        }
        for (i, r) in self.resolutions.iter().enumerate() {
            r.validate()?;
            if self.resolutions[..i].contains(r) {
                return Err(Error::invalid("STFT resolutions must be distinct"));
            }
        }
        for (i, p) in self.periods.iter().enumerate() {
            if *p < 2 || self.periods[..i].contains(p) {
                return Err(Error::invalid("periods must be distinct and at least 2"));
            }
        }
        Ok(())
    }

    /// Number of sub-discriminators `K`.
    pub fn count(&self) -> usize {
        self.resolutions.len() + self.periods.len()
    }

    /// Shortest waveform every sub-discriminator accepts.
    pub fn min_samples(&self) -> usize {
        let win = self.resolutions.iter().map(|r| r.win_length).max().unwrap_or(1);
        let period = self.periods.iter().max().map_or(1, |p| p + 1);
        win.max(period)
    }
}

/// Reflect-pads `(B, T)` to a multiple of `period` and folds it into
/// `(B, ceil(T / period), period)`, so column `j` holds samples
/// `j, j + period, ...`.
pub fn period_reshape(x: &Tensor, period: usize) -> Result<Tensor> {
    let (b, t) = x.dims2()?;
    let rows = t.div_ceil(period);
    let padded = reflect_pad_end(x, rows * period - t)?;
    Ok(padded.reshape((b, rows, period))?)
}

#[derive(Debug, Clone)]
struct SpectralSub {
    stft: StftMagnitude,
    convs: Vec<Conv2d>,
    post: Conv2d,
}

impl SpectralSub {
    fn new(params: &mut ParamStore, name: &str, res: StftResolution, c: usize) -> Result<Self> {
        let mut convs = vec![Conv2d::new(params, &format!("{name}.conv0"), 1, c, 3, 1, 2)?];
        for i in 1..4 {
            convs.push(Conv2d::new(params, &format!("{name}.conv{i}"), c, c, 3, 1, 2)?);
        }
        convs.push(Conv2d::new(params, &format!("{name}.conv4"), c, c, 3, 1, 1)?);
        Ok(Self {
            stft: StftMagnitude::new(res.n_fft, res.hop, res.win_length, POWER_FLOOR)?,
            convs,
            post: Conv2d::new(params, &format!("{name}.post"), c, 1, 3, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let spec = self.stft.forward(x)?;
        let mut h = spec.unsqueeze(1)?;
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?, LRELU_SLOPE)?;
        }
        Ok((self.post.forward(&h)?.squeeze(1)?, spec))
    }
}

#[derive(Debug, Clone)]
struct PeriodSub {
    period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl PeriodSub {
    /// `(k, 1)` 2D convolutions over the folded waveform, run as 1D
    /// convolutions with the period folded into the batch.
    fn new(params: &mut ParamStore, name: &str, period: usize, c: usize) -> Result<Self> {
        let widths = [1, c, 2 * c, 4 * c, 4 * c];
        let mut convs = Vec::new();
        for i in 0..4 {
            convs.push(Conv1d::new(params, &format!("{name}.conv{i}"), widths[i], widths[i + 1], 5, 2, 3, 1)?);
        }
        convs.push(Conv1d::new(params, &format!("{name}.conv4"), 4 * c, 4 * c, 5, 2, 1, 1)?);
        Ok(Self {
            period,
            convs,
            post: Conv1d::new(params, &format!("{name}.post"), 4 * c, 1, 3, 1, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.dim(0)?;
        let folded = period_reshape(x, self.period)?;
        let rows = folded.dim(1)?;
        let mut h = folded
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b * self.period, 1, rows))?;
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?, LRELU_SLOPE)?;
        }
        let h = self.post.forward(&h)?;
        let out_rows = h.dim(2)?;
        Ok(h.reshape((b, self.period, out_rows))?.transpose(1, 2)?.contiguous()?)
    }
}

/// Score maps of every sub-discriminator, spectral ones first, plus the
/// magnitude spectrograms the spectral ones computed.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutputs {
    pub scores: Vec<Tensor>,
    pub spectrograms: Vec<Tensor>,
}

/// All `K = M + |periods|` sub-discriminators.
#[derive(Debug, Clone)]
pub struct MultiDiscriminator {
    config: DiscriminatorConfig,
    spectral: Vec<SpectralSub>,
    periodic: Vec<PeriodSub>,
}

impl MultiDiscriminator {
    pub fn new(params: &mut ParamStore, config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let spectral = config
            .resolutions
            .iter()
            .enumerate()
            .map(|(i, r)| SpectralSub::new(params, &format!("mrsd{i}"), *r, config.channels))
            .collect::<Result<Vec<_>>>()?;
        let periodic = config
            .periods
            .iter()
            .map(|&p| PeriodSub::new(params, &format!("mpwd{p}"), p, config.channels))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            spectral,
            periodic,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let t = x.dims2()?.1;
        if t < self.config.min_samples() {
            return Err(Error::invalid(format!(
                "waveform of {t} samples is shorter than the {} the discriminators need",
                self.config.min_samples()
            )));
        }
        Ok(())
    }

    /// Spectral score maps `(B, frames', bins')` and the magnitudes
    /// `(B, frames, bins)` they were computed from.
    pub fn mrsd_forward(&self, x: &Tensor) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        self.check(x)?;
        let mut scores = Vec::new();
        let mut specs = Vec::new();
        for sub in &self.spectral {
            let (s, spec) = sub.forward(x)?;
            scores.push(s);
            specs.push(spec);
        }
        Ok((scores, specs))
    }

    /// Periodic score maps `(B, rows', period)`.
    pub fn mpwd_forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check(x)?;
        self.periodic.iter().map(|sub| sub.forward(x)).collect()
    }

    /// `(B, T)` waveforms through every sub-discriminator.
    pub fn forward(&self, x: &Tensor) -> Result<DiscriminatorOutputs> {
        let (mut scores, spectrograms) = self.mrsd_forward(x)?;
        scores.extend(self.mpwd_forward(x)?);
        Ok(DiscriminatorOutputs {
            scores,
            spectrograms,
        })
    }

    /// Magnitude spectrograms at every resolution, without the networks.
    pub fn spectrograms(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.spectral.iter().map(|s| Ok(s.stft.forward(x)?)).collect()
    }
}
