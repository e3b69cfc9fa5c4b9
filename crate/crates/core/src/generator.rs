//! The waveform generator: noise input, three upsampling LVC stacks and a
//! tanh waveform head.

use candle_core::{Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::AudioClip;
use crate::error::{Error, Result};
use crate::features::{
    build_conditioning, ConditioningBundle, ConditioningLayout, MedianF0OneHot,
    NormalizedQuantizedF0, SpectralEnvelope, HOP,
};
use crate::lvc::{lvc_block, KernelPredictor, KernelPredictorConfig, KernelSet, LvcStackConfig};
use crate::nn::{leaky_relu, Conv1d, ParamStore, TransposedConv1d, DEVICE, LRELU_SLOPE};
use crate::speaker::SpeakerEmbedding;

pub const DEFAULT_Z_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    pub upsample_rates: Vec<usize>,
    pub stack: LvcStackConfig,
    pub predictor: KernelPredictorConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            z_dim: DEFAULT_Z_DIM,
            upsample_rates: vec![8, 8, 4],
            stack: LvcStackConfig::default(),
            predictor: KernelPredictorConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.stack.validate()?;
        if self.z_dim == 0 {
            return Err(Error::invalid("z_dim must be positive"));
        }
        if self.upsample_rates.iter().product::<usize>() != HOP {
            return Err(Error::invalid(format!(
                "upsample rates {:?} must multiply to the hop size {HOP}",
                self.upsample_rates
            )));
        }
        Ok(())
    }

    /// Samples per conditioning frame after stack `i`.
    pub fn cumulative_rate(&self, stack: usize) -> usize {
        self.upsample_rates[..=stack].iter().product()
    }
}

/// Standard normal noise, `z_dim × frames`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSequence {
    z_dim: usize,
    frames: usize,
    data: Vec<f32>,
}

impl NoiseSequence {
    pub fn from_rng(z_dim: usize, frames: usize, rng: &mut impl Rng) -> Result<Self> {
        if frames == 0 || z_dim == 0 {
            return Err(Error::invalid("noise needs at least one frame and channel"));
        }
        let data = (0..z_dim * frames).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self { z_dim, frames, data })
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), (1, self.z_dim, self.frames), &DEVICE)?)
    }
}

/// Fresh `64 × frames` noise, deterministic per seed.
pub fn sample_noise(frames: usize, seed: u64) -> Result<NoiseSequence> {
    NoiseSequence::from_rng(DEFAULT_Z_DIM, frames, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Activations after one upsampling stack, `channels × samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateTap {
    pub stack: usize,
    pub channels: usize,
    pub samples: usize,
    pub data: Vec<f32>,
}

impl IntermediateTap {
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }
}

#[derive(Debug, Clone)]
struct Stack {
    upsample: TransposedConv1d,
    predictor: KernelPredictor,
}

/// `x̂ = G(z, H, p_norm, s, m)`.
///
/// Conditioning channels are affinely rescaled before the kernel
/// predictors: the envelope maps through `(H + 4) / 4` and the unit-norm
/// embedding is scaled by `sqrt(d)`, so all inputs start near unit range.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    layout: ConditioningLayout,
    cond_scale: Tensor,
    cond_shift: Tensor,
    conv_pre: Conv1d,
    stacks: Vec<Stack>,
    conv_post: Conv1d,
}

impl Generator {
    pub fn new(params: &mut ParamStore, config: GeneratorConfig, layout: ConditioningLayout) -> Result<Self> {
        config.validate()?;
        let c = config.stack.channels;
        let conv_pre = Conv1d::same(params, "conv_pre", config.z_dim, c, 7)?;
        let stacks = config
            .upsample_rates
            .iter()
            .enumerate()
            .map(|(i, &rate)| {
                Ok(Stack {
                    upsample: TransposedConv1d::new(params, &format!("stack{i}.upsample"), c, c, rate)?,
                    predictor: KernelPredictor::new(
                        params,
                        &format!("stack{i}.predictor"),
                        layout.channels(),
                        &config.stack,
                        &config.predictor,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let conv_post = Conv1d::same(params, "conv_post", c, 1, 1)?;

        let channels = layout.channels();
        let mut scale = vec![1.0f32; channels];
        let mut shift = vec![0.0f32; channels];
        for ch in layout.envelope_range() {
            scale[ch] = 0.25;
            shift[ch] = 1.0;
        }
        for ch in layout.speaker_range() {
            scale[ch] = (layout.embed_dim as f32).sqrt();
        }
        Ok(Self {
            cond_scale: Tensor::from_vec(scale, (1, channels, 1), &DEVICE)?,
            cond_shift: Tensor::from_vec(shift, (1, channels, 1), &DEVICE)?,
            config,
            layout,
            conv_pre,
            stacks,
            conv_post,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn layout(&self) -> ConditioningLayout {
        self.layout
    }

    fn check_inputs(&self, z: &Tensor, cond: &Tensor) -> Result<()> {
        let (bz, cz, tz) = z.dims3()?;
        let (bc, cc, tc) = cond.dims3()?;
        if bz != bc || tz != tc {
            return Err(Error::shape(format!(
                "noise {:?} and conditioning {:?} disagree on batch or frames",
                z.dims(),
                cond.dims()
            )));
        }
        if cz != self.config.z_dim || cc != self.layout.channels() {
            return Err(Error::shape(format!(
                "expected {} noise and {} conditioning channels, got {cz} and {cc}",
                self.config.z_dim,
                self.layout.channels()
            )));
        }
        if tz == 0 {
            return Err(Error::invalid("cannot generate from zero frames"));
        }
        Ok(())
    }

    fn scaled(&self, cond: &Tensor) -> Result<Tensor> {
        Ok(cond.broadcast_mul(&self.cond_scale)?.broadcast_add(&self.cond_shift)?)
    }

    /// Kernels of stack `stack` for a `(B, C_cond, T_h)` conditioning batch.
    pub fn predict_kernels(&self, cond: &Tensor, stack: usize) -> Result<KernelSet> {
        let s = self
            .stacks
            .get(stack)
            .ok_or_else(|| Error::invalid(format!("no stack {stack}")))?;
        s.predictor.forward(&self.scaled(cond)?)
    }

    /// `(B, z_dim, T_h)` noise and `(B, C_cond, T_h)` conditioning to
    /// `(B, 256·T_h)` waveforms, plus the `(B, C, T_h·rate)` activation
    /// after every stack.
    pub fn forward_with_taps(&self, z: &Tensor, cond: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_inputs(z, cond)?;
        let cond = self.scaled(cond)?;
        let mut x = self.conv_pre.forward(z)?;
        let mut taps = Vec::with_capacity(self.stacks.len());
        for stack in &self.stacks {
            x = stack.upsample.forward(&leaky_relu(&x, LRELU_SLOPE)?)?;
            let kernels = stack.predictor.forward(&cond)?;
            x = lvc_block(&x, &kernels, &self.config.stack.dilations)?;
            taps.push(x.clone());
        }
        let y = self.conv_post.forward(&leaky_relu(&x, LRELU_SLOPE)?)?.tanh()?;
        Ok((y.squeeze(1)?, taps))
    }

    pub fn forward(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_taps(z, cond)?.0)
    }
}

fn bundle_tensor(bundle: &ConditioningBundle) -> Result<Tensor> {
    Ok(Tensor::from_vec(
        bundle.data().to_vec(),
        (1, bundle.channels(), bundle.frames()),
        &DEVICE,
    )?)
}

/// Synthesizes one waveform from a conditioning bundle.
pub fn generate_from_bundle(g: &Generator, z: &NoiseSequence, bundle: &ConditioningBundle) -> Result<AudioClip> {
    Ok(generate_from_bundle_with_taps(g, z, bundle)?.0)
}

pub fn generate_from_bundle_with_taps(
    g: &Generator,
    z: &NoiseSequence,
    bundle: &ConditioningBundle,
) -> Result<(AudioClip, Vec<IntermediateTap>)> {
    if z.frames() != bundle.frames() {
        return Err(Error::shape(format!(
            "noise has {} frames, conditioning {}",
            z.frames(),
            bundle.frames()
        )));
    }
    let (y, taps) = g.forward_with_taps(&z.to_tensor()?, &bundle_tensor(bundle)?)?;
    let clip = AudioClip::new(y.squeeze(0)?.to_vec1()?)?;
    let taps = taps
        .iter()
        .enumerate()
        .map(|(stack, t)| {
            let (_, channels, samples) = t.dims3()?;
            Ok(IntermediateTap {
                stack,
                channels,
                samples,
                data: t.flatten_all()?.to_vec1()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((clip, taps))
}

/// `x̂ = G(z, H, p_norm, s, m)` for a single utterance.
pub fn generate(
    g: &Generator,
    z: &NoiseSequence,
    envelope: &SpectralEnvelope,
    pnorm: &NormalizedQuantizedF0,
    speaker: &SpeakerEmbedding,
    median: MedianF0OneHot,
) -> Result<AudioClip> {
    let bundle = build_conditioning(g.layout(), envelope, pnorm, speaker, median)?;
    generate_from_bundle(g, z, &bundle)
}

/// As `generate`, also returning the activations after each stack.
pub fn generate_with_taps(
    g: &Generator,
    z: &NoiseSequence,
    envelope: &SpectralEnvelope,
    pnorm: &NormalizedQuantizedF0,
    speaker: &SpeakerEmbedding,
    median: MedianF0OneHot,
) -> Result<(AudioClip, Vec<IntermediateTap>)> {
    let bundle = build_conditioning(g.layout(), envelope, pnorm, speaker, median)?;
    generate_from_bundle_with_taps(g, z, &bundle)
}
