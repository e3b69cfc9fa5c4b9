use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::container::{self, Array};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::ParamStore;
use crate::speaker::{GaussianStore, SpeakerEncoder};

const KIND: &str = "checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub(crate) const GENERATOR_PREFIX: &str = "generator/";
pub(crate) const DISCRIMINATOR_PREFIX: &str = "discriminator/";
pub(crate) const OPT_G_PREFIX: &str = "opt_g/";
pub(crate) const OPT_D_PREFIX: &str = "opt_d/";
pub(crate) const ENCODER_PREFIX: &str = "encoder/";
pub(crate) const GAUSSIAN_PREFIX: &str = "gaussians/";

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::invalid("malformed rng state");
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    /// Completed iterations.
    pub step: u64,
    /// Phase of the next iteration (1 or 2).
    pub phase: u8,
    pub opt_g_step: u64,
    pub opt_d_step: u64,
    pub rng: RngState,
    pub gaussians: serde_json::Value,
}

/// Full training state: weights of G, D and the frozen encoder, both
/// optimizers' moments, the Gaussian store, the rng position and the
/// config snapshot.
///
/// On disk (`kind = "checkpoint"`): arrays under the prefixes
/// `generator/`, `discriminator/`, `opt_g/`, `opt_d/`, `encoder/` and
/// `gaussians/`; everything else in the metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub arrays: BTreeMap<String, Array>,
}

impl Checkpoint {
    pub fn config(&self) -> &TrainConfig {
        &self.meta.config
    }

    pub fn step(&self) -> u64 {
        self.meta.step
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::save(path, KIND, CHECKPOINT_VERSION, &self.meta, &self.arrays)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |msg: String| Error::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        let loaded = container::load::<CheckpointMeta>(path, KIND).map_err(|e| match e {
            Error::Container { msg, .. } => err(msg),
            other => other,
        })?;
        if loaded.version != CHECKPOINT_VERSION {
            return Err(err(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                loaded.version
            )));
        }
        loaded.meta.config.validate().map_err(|e| err(e.to_string()))?;
        Ok(Self {
            meta: loaded.meta,
            arrays: loaded.arrays,
        })
    }

    pub fn gaussians(&self) -> Result<GaussianStore> {
        GaussianStore::from_arrays(GAUSSIAN_PREFIX, &self.arrays, self.meta.gaussians.clone())
    }

    pub fn encoder(&self) -> Result<SpeakerEncoder> {
        SpeakerEncoder::from_arrays(self.meta.config.encoder, ENCODER_PREFIX, &self.arrays)
    }

    pub fn generator(&self) -> Result<Generator> {
        let config = &self.meta.config;
        let mut params = ParamStore::new(config.seed);
        let g = Generator::new(&mut params, config.generator.clone(), config.layout())?;
        params.import(GENERATOR_PREFIX, &self.arrays)?;
        Ok(g)
    }
}
