use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Module, Tensor, D};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SpeakerEmbedding, DEFAULT_EMBED_DIM};
use crate::container::{self, Array};
use crate::corpus::{read_wav, SpeakerRegistry, Split};
use crate::error::{Error, Result};
use crate::features::{compute_log_mel, LogMelSpectrogram, N_MELS};
use crate::nn::{log_softmax, softmax, to_scalar, AdamW, AdamWConfig, Conv1d, Linear, ParamStore, DEVICE};

const KIND: &str = "speaker-encoder";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub attention_dim: usize,
    pub seed: u64,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub crop_min_frames: usize,
    pub crop_max_frames: usize,
    /// Scale of the cosine-softmax logits.
    pub logit_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: DEFAULT_EMBED_DIM,
            hidden: 128,
            attention_dim: 64,
            seed: 0,
            pretrain_steps: 300,
            pretrain_batch: 16,
            pretrain_lr: 1e-3,
            crop_min_frames: 48,
            crop_max_frames: 64,
            logit_scale: 10.0,
        }
    }
}

/// Frame-level convolutional speaker encoder with self-attentive pooling.
///
/// Log-mel `(B, F, 80)` → three 1D convolutions with ReLU → attention
/// weights over frames → weighted mean → linear projection → unit norm.
pub struct SpeakerEncoder {
    config: EncoderConfig,
    params: ParamStore,
    layers: Layers,
}

struct Layers {
    convs: Vec<Conv1d>,
    attn_hidden: Linear,
    attn_score: Linear,
    proj: Linear,
}

impl Layers {
    fn build(params: &mut ParamStore, c: &EncoderConfig) -> candle_core::Result<Self> {
        let convs = vec![
            Conv1d::same(params, "conv0", N_MELS, c.hidden, 5)?,
            Conv1d::same(params, "conv1", c.hidden, c.hidden, 3)?,
            Conv1d::same(params, "conv2", c.hidden, c.hidden, 3)?,
        ];
        Ok(Self {
            convs,
            attn_hidden: Linear::new(params, "attn.hidden", c.hidden, c.attention_dim, true)?,
            attn_score: Linear::new(params, "attn.score", c.attention_dim, 1, true)?,
            proj: Linear::new(params, "proj", c.hidden, c.embed_dim, true)?,
        })
    }
}

/// Row-wise L2 normalization of `(B, d)`.
pub(crate) fn l2_normalize(x: &Tensor) -> candle_core::Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    x.broadcast_div(&norm)
}

impl SpeakerEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let mut params = ParamStore::new(config.seed);
        let layers = Layers::build(&mut params, &config)?;
        Ok(Self {
            config,
            params,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Stops gradient flow into the weights for good.
    pub fn freeze(&mut self) -> Result<()> {
        self.params.freeze();
        self.layers = Layers::build(&mut self.params, &self.config)?;
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.params.is_frozen()
    }

    /// `(B, F, 80)` log-mel to `(B, d)` unit-norm embeddings. Differentiable
    /// with respect to the input.
    pub fn forward(&self, mel: &Tensor) -> Result<Tensor> {
        let (_, frames, bins) = mel.dims3()?;
        if frames == 0 || bins != N_MELS {
            return Err(Error::shape(format!("encoder expects (B, F>0, {N_MELS}), got {:?}", mel.dims())));
        }
        let mut h = ((mel + 4.0)? / 4.0)?.transpose(1, 2)?.contiguous()?;
        for conv in &self.layers.convs {
            h = conv.forward(&h)?.relu()?;
        }
        let h = h.transpose(1, 2)?.contiguous()?;
        let scores = self
            .layers
            .attn_score
            .forward(&self.layers.attn_hidden.forward(&h)?.tanh()?)?;
        let weights = softmax(&scores, 1)?;
        let pooled = h.broadcast_mul(&weights)?.sum(1)?;
        Ok(l2_normalize(&self.layers.proj.forward(&pooled)?)?)
    }

    pub fn embed(&self, x: &LogMelSpectrogram) -> Result<SpeakerEmbedding> {
        if x.frames() == 0 {
            return Err(Error::invalid("cannot embed an empty spectrogram"));
        }
        let mel = Tensor::from_vec(x.values().data().to_vec(), (1, x.frames(), N_MELS), &DEVICE)?;
        let e = self.forward(&mel)?.squeeze(0)?.to_vec1::<f32>()?;
        SpeakerEmbedding::normalized(e)
    }

    /// Writes weights (`kind = "speaker-encoder"`, version 1) with the
    /// config as metadata.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::save(path, KIND, VERSION, &self.config, &self.params.export("")?)
    }

    /// Loads a saved encoder; the result is frozen.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let loaded = container::load::<EncoderConfig>(path, KIND)?;
        Self::from_arrays(loaded.meta, "", &loaded.arrays)
    }

    /// Frozen encoder from `arrays[prefix + name]`.
    pub(crate) fn from_arrays(config: EncoderConfig, prefix: &str, arrays: &BTreeMap<String, Array>) -> Result<Self> {
        let mut enc = Self::new(config)?;
        enc.params.import(prefix, arrays)?;
        enc.freeze()?;
        Ok(enc)
    }
}

/// One training spectrogram with its class index.
#[derive(Debug, Clone)]
pub struct LabeledMel {
    pub mel: LogMelSpectrogram,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub final_loss: f32,
    /// Accuracy on the held-out clips, `None` without held-out data.
    pub heldout_accuracy: Option<f32>,
}

/// Trains an encoder with a cosine-softmax speaker classifier and returns
/// it frozen.
pub fn pretrain_on_mels(
    train: &[LabeledMel],
    heldout: &[LabeledMel],
    num_classes: usize,
    config: EncoderConfig,
) -> Result<(SpeakerEncoder, PretrainReport)> {
    if num_classes < 2 {
        return Err(Error::invalid("speaker encoder pretraining needs at least 2 speakers"));
    }
    if train.is_empty() {
        return Err(Error::invalid("no training spectrograms"));
    }
    let encoder = SpeakerEncoder::new(config)?;
    let mut head_params = ParamStore::new(config.seed ^ 0x5eed);
    let classes = head_params.uniform("classes", &[num_classes, config.embed_dim], 1.0)?;
    let adam = AdamWConfig {
        lr: config.pretrain_lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut opt_enc = AdamW::new(&encoder.params, adam)?;
    let mut opt_head = AdamW::new(&head_params, adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let logits_of = |emb: &Tensor| -> candle_core::Result<Tensor> {
        emb.matmul(&l2_normalize(&classes)?.t()?)? * config.logit_scale
    };

    let mut final_loss = f32::NAN;
    for _ in 0..config.pretrain_steps {
        let max_frames = train.iter().map(|m| m.mel.frames()).min().unwrap_or(0);
        let hi = config.crop_max_frames.min(max_frames).max(1);
        let lo = config.crop_min_frames.min(hi).max(1);
        let crop = rng.random_range(lo..=hi);
        let mut batch = Vec::with_capacity(config.pretrain_batch * crop * N_MELS);
        let mut labels = Vec::with_capacity(config.pretrain_batch);
        for _ in 0..config.pretrain_batch {
            let item = train.choose(&mut rng).expect("non-empty");
            let start = rng.random_range(0..=item.mel.frames() - crop);
            batch.extend_from_slice(item.mel.values().slice_rows(start, crop).data());
            labels.push(item.label as u32);
        }
        let x = Tensor::from_vec(batch, (config.pretrain_batch, crop, N_MELS), &DEVICE)?;
        let labels = Tensor::from_vec(labels, (config.pretrain_batch, 1), &DEVICE)?;
        let logp = log_softmax(&logits_of(&encoder.forward(&x)?)?, 1)?;
        let loss = logp.gather(&labels, 1)?.mean_all()?.neg()?;
        final_loss = to_scalar(&loss)?;
        let grads = loss.backward()?;
        opt_enc.step(&grads)?;
        opt_head.step(&grads)?;
    }

    let mut encoder = encoder;
    encoder.freeze()?;
    let heldout_accuracy = if heldout.is_empty() {
        None
    } else {
        let mut correct = 0usize;
        for item in heldout {
            let e = encoder.embed(&item.mel)?;
            let e = Tensor::from_vec(e.as_slice().to_vec(), (1, config.embed_dim), &DEVICE)?;
            let pred = logits_of(&e)?.argmax(1)?.to_vec1::<u32>()?[0] as usize;
            correct += usize::from(pred == item.label);
        }
        Some(correct as f32 / heldout.len() as f32)
    };
    Ok((
        encoder,
        PretrainReport {
            final_loss,
            heldout_accuracy,
        },
    ))
}

/// Pretrains on the registry's training speakers: train-split clips for
/// fitting, test-split clips for the held-out accuracy.
pub fn pretrain_speaker_encoder(
    registry: &SpeakerRegistry,
    config: EncoderConfig,
) -> Result<(SpeakerEncoder, PretrainReport)> {
    let speakers = registry.training_speakers();
    if speakers.len() < 2 {
        return Err(Error::invalid("speaker encoder pretraining needs at least 2 training speakers"));
    }
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (label, id) in speakers.iter().enumerate() {
        let speaker = registry.speaker(id).expect("listed speaker exists");
        for rec in &speaker.utterances {
            let mel = compute_log_mel(&read_wav(&rec.path)?)?;
            let item = LabeledMel { mel, label };
            match rec.split {
                Split::Train => train.push(item),
                Split::Test => heldout.push(item),
                Split::Unseen => {}
            }
        }
    }
    pretrain_on_mels(&train, &heldout, speakers.len(), config)
}
