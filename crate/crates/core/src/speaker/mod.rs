//! Speaker features: embeddings, the pluggable encoder and per-speaker
//! Gaussians used to sample training embeddings.

mod embedding;
mod encoder;
mod gaussian;

pub use embedding::{cosine, SpeakerEmbedding, DEFAULT_EMBED_DIM};
pub use encoder::{
    pretrain_on_mels, pretrain_speaker_encoder, EncoderConfig, LabeledMel, PretrainReport,
    SpeakerEncoder,
};
pub use gaussian::{fit_gaussian, sample_embedding, GaussianStore, SpeakerGaussian, SpeakerStats, VAR_FLOOR};
