//! Conversion with a trained checkpoint: `x̂ = G(z, H_src, p_norm,src,
//! s_tgt, m_tgt)`, plus the reconstruction distance used for evaluation.

use std::path::Path;

use crate::corpus::AudioClip;
use crate::error::{Error, Result};
use crate::features::{
    build_conditioning, extract_features, median_f0_onehot, stft_magnitude, ConditioningBundle,
    MedianF0OneHot, UtteranceFeatures,
};
use crate::gan::StftResolution;
use crate::generator::{generate_from_bundle, generate_from_bundle_with_taps, sample_noise, Generator, IntermediateTap};
use crate::speaker::{GaussianStore, SpeakerEmbedding, SpeakerEncoder};
use crate::train::{Checkpoint, TrainConfig};

/// Speaker-side conditioning: the embedding `s` and median-F0 class `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpeaker {
    pub embedding: SpeakerEmbedding,
    pub median: MedianF0OneHot,
}

/// Generator, frozen encoder and Gaussian store restored from a checkpoint.
pub struct VoiceConverter {
    config: TrainConfig,
    generator: Generator,
    encoder: SpeakerEncoder,
    gaussians: GaussianStore,
}

impl VoiceConverter {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(Self {
            config: ckpt.config().clone(),
            generator: ckpt.generator()?,
            encoder: ckpt.encoder()?,
            gaussians: ckpt.gaussians()?,
        })
    }

    /// Loads a checkpoint file; every failure surfaces as
    /// `Error::Checkpoint`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Checkpoint::load(path)
            .and_then(|c| Self::from_checkpoint(&c))
            .map_err(|e| match e {
                Error::Checkpoint { .. } => e,
                other => Error::Checkpoint {
                    path: path.to_path_buf(),
                    msg: other.to_string(),
                },
            })
    }

    /// Replaces the checkpoint's Gaussian store, e.g. to register new
    /// speakers.
    pub fn with_gaussians(mut self, gaussians: GaussianStore) -> Self {
        self.gaussians = gaussians;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn encoder(&self) -> &SpeakerEncoder {
        &self.encoder
    }

    pub fn gaussians(&self) -> &GaussianStore {
        &self.gaussians
    }

    pub fn features(&self, clip: &AudioClip) -> Result<UtteranceFeatures> {
        extract_features("", "", clip, self.config.lifter_coeffs)
    }

    /// Raw utterance embedding and the utterance's own median F0.
    pub fn target_from_features(&self, feats: &UtteranceFeatures) -> Result<TargetSpeaker> {
        Ok(TargetSpeaker {
            embedding: self.encoder.embed(&feats.log_mel)?,
            median: median_f0_onehot([&feats.f0])?,
        })
    }

    pub fn target_from_clip(&self, clip: &AudioClip) -> Result<TargetSpeaker> {
        self.target_from_features(&self.features(clip)?)
    }

    /// Gaussian mean and stored median F0 of a registered speaker.
    pub fn target_from_speaker(&self, speaker_id: &str) -> Result<TargetSpeaker> {
        let stats = self
            .gaussians
            .get(speaker_id)
            .ok_or_else(|| Error::invalid(format!("speaker `{speaker_id}` is not registered")))?;
        Ok(TargetSpeaker {
            embedding: stats.gaussian.mean_embedding()?,
            median: stats.median_f0,
        })
    }

    /// Conditioning from the source's unwarped envelope and p_norm.
    pub fn bundle(&self, source: &UtteranceFeatures, target: &TargetSpeaker) -> Result<ConditioningBundle> {
        build_conditioning(
            self.generator.layout(),
            &source.envelope,
            &source.pnorm,
            &target.embedding,
            target.median,
        )
    }

    pub fn synthesize(&self, bundle: &ConditioningBundle, seed: u64) -> Result<AudioClip> {
        generate_from_bundle(&self.generator, &sample_noise(bundle.frames(), seed)?, bundle)
    }

    pub fn synthesize_with_taps(
        &self,
        bundle: &ConditioningBundle,
        seed: u64,
    ) -> Result<(AudioClip, Vec<IntermediateTap>)> {
        generate_from_bundle_with_taps(&self.generator, &sample_noise(bundle.frames(), seed)?, bundle)
    }

    /// Output has `256 × source frames` samples.
    pub fn convert(&self, source: &AudioClip, target: &TargetSpeaker, seed: u64) -> Result<AudioClip> {
        self.synthesize(&self.bundle(&self.features(source)?, target)?, seed)
    }

    /// Cosine between the encoder's embedding of `clip` and `target`.
    pub fn similarity(&self, clip: &AudioClip, target: &SpeakerEmbedding) -> Result<f32> {
        let e = self.encoder.embed(&crate::features::compute_log_mel(clip)?)?;
        Ok(crate::speaker::cosine(e.as_slice(), target.as_slice()))
    }
}

/// Multi-resolution STFT distance: the mean over resolutions of spectral
/// convergence plus mean absolute log-magnitude difference. The shorter
/// signal is zero padded.
pub fn stft_distance(reference: &[f32], estimate: &[f32], resolutions: &[StftResolution]) -> Result<f64> {
    if resolutions.is_empty() || reference.is_empty() {
        return Err(Error::invalid("STFT distance needs resolutions and a non-empty reference"));
    }
    let len = reference.len().max(estimate.len());
    let pad = |x: &[f32]| {
        let mut v = x.to_vec();
        v.resize(len, 0.0);
        v
    };
    let (a, b) = (pad(reference), pad(estimate));
    let floor = 1e-7f64.sqrt();
    let mut total = 0.0;
    for r in resolutions {
        let sa = stft_magnitude(&a, r.n_fft, r.hop, r.win_length);
        let sb = stft_magnitude(&b, r.n_fft, r.hop, r.win_length);
        let (mut num, mut den, mut mag) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in sa.data().iter().zip(sb.data()) {
            let (x, y) = ((x as f64).max(floor), (y as f64).max(floor));
            num += (x - y).powi(2);
            den += x * x;
            mag += (x.ln() - y.ln()).abs();
        }
        total += num.sqrt() / den.sqrt() + mag / sa.data().len() as f64;
    }
    Ok(total / resolutions.len() as f64)
}
