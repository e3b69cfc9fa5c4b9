use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SpeakerEmbedding;
use crate::container::{self, Array};
use crate::error::{Error, Result};
use crate::features::MedianF0OneHot;

/// Elementwise variance floor.
pub const VAR_FLOOR: f32 = 1e-6;

/// Diagonal Gaussian over one speaker's embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerGaussian {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub count: usize,
}

impl SpeakerGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The mean direction as a unit embedding.
    pub fn mean_embedding(&self) -> Result<SpeakerEmbedding> {
        SpeakerEmbedding::normalized(self.mean.clone())
    }
}

/// Maximum-likelihood mean and (floored) variance per coordinate.
pub fn fit_gaussian(embeddings: &[SpeakerEmbedding]) -> Result<SpeakerGaussian> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::invalid("cannot fit a Gaussian to zero embeddings"))?;
    let d = first.dim();
    if embeddings.iter().any(|e| e.dim() != d) {
        return Err(Error::shape("embeddings differ in dimension"));
    }
    let n = embeddings.len() as f64;
    let mut mean = vec![0.0f64; d];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e.as_slice()) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; d];
    for e in embeddings {
        for ((acc, v), m) in var.iter_mut().zip(e.as_slice()).zip(&mean) {
            *acc += (*v as f64 - m).powi(2);
        }
    }
    Ok(SpeakerGaussian {
        mean: mean.iter().map(|&m| m as f32).collect(),
        var: var
            .iter()
            .map(|&v| ((v / n) as f32).max(VAR_FLOOR))
            .collect(),
        count: embeddings.len(),
    })
}

/// Draws `mean + sqrt(var) * N(0, I)` and renormalizes to unit length.
pub fn sample_embedding(g: &SpeakerGaussian, rng: &mut impl Rng) -> SpeakerEmbedding {
    let draw: Vec<f32> = g
        .mean
        .iter()
        .zip(&g.var)
        .map(|(m, v)| {
            let z: f32 = rng.sample(StandardNormal);
            m + v.sqrt() * z
        })
        .collect();
    SpeakerEmbedding::normalized(draw).unwrap_or_else(|_| {
        g.mean_embedding()
            .expect("Gaussian mean and its sample cannot both vanish")
    })
}

/// Per-speaker Gaussian plus the speaker-level median-F0 class.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStats {
    pub gaussian: SpeakerGaussian,
    pub median_f0: MedianF0OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreMeta {
    speakers: Vec<StoreEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreEntry {
    speaker_id: String,
    count: usize,
    median_f0_bin: usize,
}

/// Gaussian store, one entry per training speaker.
///
/// On disk (`kind = "gaussians"`, version 1): arrays `<speaker>/mean` and
/// `<speaker>/var`, each `[d]`; counts and median-F0 bins live in the
/// metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianStore {
    speakers: BTreeMap<String, SpeakerStats>,
}

const STORE_KIND: &str = "gaussians";

impl GaussianStore {
    pub fn insert(&mut self, speaker_id: impl Into<String>, stats: SpeakerStats) {
        self.speakers.insert(speaker_id.into(), stats);
    }

    pub fn get(&self, speaker_id: &str) -> Option<&SpeakerStats> {
        self.speakers.get(speaker_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SpeakerStats)> {
        self.speakers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub(crate) fn to_arrays(&self, prefix: &str) -> (BTreeMap<String, Array>, serde_json::Value) {
        let mut arrays = BTreeMap::new();
        let mut entries = Vec::new();
        for (id, s) in &self.speakers {
            arrays.insert(format!("{prefix}{id}/mean"), Array::vector(s.gaussian.mean.clone()));
            arrays.insert(format!("{prefix}{id}/var"), Array::vector(s.gaussian.var.clone()));
            entries.push(StoreEntry {
                speaker_id: id.clone(),
                count: s.gaussian.count,
                median_f0_bin: s.median_f0.bin(),
            });
        }
        let meta = serde_json::to_value(StoreMeta { speakers: entries }).expect("serializable");
        (arrays, meta)
    }

    pub(crate) fn from_arrays(
        prefix: &str,
        arrays: &BTreeMap<String, Array>,
        meta: serde_json::Value,
    ) -> Result<Self> {
        let meta: StoreMeta = serde_json::from_value(meta)
            .map_err(|e| Error::invalid(format!("bad Gaussian store metadata: {e}")))?;
        let mut store = GaussianStore::default();
        for entry in meta.speakers {
            let get = |suffix: &str| {
                arrays
                    .get(&format!("{prefix}{}/{suffix}", entry.speaker_id))
                    .map(|a| a.data.clone())
                    .ok_or_else(|| Error::invalid(format!("missing {suffix} for `{}`", entry.speaker_id)))
            };
            let gaussian = SpeakerGaussian {
                mean: get("mean")?,
                var: get("var")?,
                count: entry.count,
            };
            store.insert(
                entry.speaker_id.clone(),
                SpeakerStats {
                    gaussian,
                    median_f0: MedianF0OneHot::from_bin(entry.median_f0_bin)?,
                },
            );
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (arrays, meta) = self.to_arrays("");
        container::save(path, STORE_KIND, 1, &meta, &arrays)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let loaded = container::load::<serde_json::Value>(path.as_ref(), STORE_KIND)?;
        Self::from_arrays("", &loaded.arrays, loaded.meta)
    }
}
