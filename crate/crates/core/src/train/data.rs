use std::path::Path;

use rand::Rng;

use crate::corpus::{read_wav, SpeakerRegistry, Split};
use crate::error::{Error, Result};
use crate::features::{
    extract_features, median_f0_onehot, F0Contour, NormalizedQuantizedF0, SpectralEnvelope,
    UtteranceFeatures, HOP,
};
use crate::speaker::{fit_gaussian, GaussianStore, SpeakerEmbedding, SpeakerEncoder, SpeakerStats};

/// One training utterance with everything a training step reads.
#[derive(Debug, Clone)]
pub struct TrainingUtterance {
    pub utt_id: String,
    pub speaker: usize,
    /// Waveform zero-padded to `256 × frames` samples.
    pub samples: Vec<f32>,
    pub envelope: SpectralEnvelope,
    pub f0: F0Contour,
    pub pnorm: NormalizedQuantizedF0,
    pub embedding: SpeakerEmbedding,
}

impl TrainingUtterance {
    pub fn frames(&self) -> usize {
        self.envelope.frames()
    }
}

/// Training utterances grouped by speaker, plus the Gaussian store fit
/// once over their embeddings.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    speakers: Vec<String>,
    utterances: Vec<TrainingUtterance>,
    by_speaker: Vec<Vec<usize>>,
    stats: GaussianStore,
}

/// Fits one Gaussian and one speaker-level median-F0 class per speaker.
pub fn build_gaussian_store<'a>(
    items: impl IntoIterator<Item = (&'a str, &'a SpeakerEmbedding, &'a F0Contour)>,
) -> Result<GaussianStore> {
    let mut grouped: std::collections::BTreeMap<&str, (Vec<SpeakerEmbedding>, Vec<&F0Contour>)> =
        Default::default();
    for (spk, e, f0) in items {
        let entry = grouped.entry(spk).or_default();
        entry.0.push(e.clone());
        entry.1.push(f0);
    }
    let mut store = GaussianStore::default();
    for (spk, (embeddings, contours)) in grouped {
        let median_f0 = median_f0_onehot(contours).map_err(|e| match e {
            Error::AllUnvoiced => Error::invalid(format!("speaker `{spk}` has no voiced frame")),
            other => other,
        })?;
        store.insert(
            spk,
            SpeakerStats {
                gaussian: fit_gaussian(&embeddings)?,
                median_f0,
            },
        );
    }
    Ok(store)
}

/// Features for one record: a cache file `<feature_dir>/<utt_id>.safetensors`
/// when present, otherwise computed from the waveform.
pub fn utterance_features(
    utt_id: &str,
    speaker_id: &str,
    wav: &Path,
    lifter_coeffs: usize,
    feature_dir: Option<&Path>,
) -> Result<UtteranceFeatures> {
    if let Some(dir) = feature_dir {
        let path = dir.join(format!("{utt_id}.safetensors"));
        if path.exists() {
            return UtteranceFeatures::load(path);
        }
    }
    extract_features(utt_id, speaker_id, &read_wav(wav)?, lifter_coeffs)
}

impl TrainingSet {
    /// Loads every train-split utterance of the registry's training
    /// speakers, embeds it with the frozen encoder (unless its cache
    /// supplies an embedding) and fits the Gaussian store.
    pub fn prepare(
        registry: &SpeakerRegistry,
        encoder: &SpeakerEncoder,
        lifter_coeffs: usize,
        feature_dir: Option<&Path>,
    ) -> Result<Self> {
        let speakers: Vec<String> = registry
            .training_speakers()
            .into_iter()
            .map(str::to_string)
            .collect();
        if speakers.len() < 2 {
            return Err(Error::invalid("training needs at least 2 training speakers"));
        }
        let mut utterances = Vec::new();
        for (si, id) in speakers.iter().enumerate() {
            let entry = registry.speaker(id).expect("listed speaker exists");
            for rec in entry.utterances.iter().filter(|r| r.split == Split::Train) {
                let feats = utterance_features(&rec.utt_id, id, &rec.path, lifter_coeffs, feature_dir)?;
                let mut samples = read_wav(&rec.path)?.into_samples();
                samples.resize(feats.frames() * HOP, 0.0);
                let embedding = match feats.embedding {
                    Some(e) => e,
                    None => encoder.embed(&feats.log_mel)?,
                };
                if embedding.dim() != encoder.embed_dim() {
                    return Err(Error::shape(format!(
                        "embedding of `{}` has dim {}, expected {}",
                        rec.utt_id,
                        embedding.dim(),
                        encoder.embed_dim()
                    )));
                }
                utterances.push(TrainingUtterance {
                    utt_id: rec.utt_id.clone(),
                    speaker: si,
                    samples,
                    envelope: feats.envelope,
                    f0: feats.f0,
                    pnorm: feats.pnorm,
                    embedding,
                });
            }
        }
        Self::from_utterances(speakers, utterances)
    }

    pub fn from_utterances(speakers: Vec<String>, utterances: Vec<TrainingUtterance>) -> Result<Self> {
        let mut by_speaker = vec![Vec::new(); speakers.len()];
        for (i, u) in utterances.iter().enumerate() {
            by_speaker
                .get_mut(u.speaker)
                .ok_or_else(|| Error::invalid(format!("utterance `{}` has no speaker", u.utt_id)))?
                .push(i);
        }
        if by_speaker.iter().any(Vec::is_empty) {
            return Err(Error::invalid("every training speaker needs a training utterance"));
        }
        let stats = build_gaussian_store(
            utterances
                .iter()
                .map(|u| (speakers[u.speaker].as_str(), &u.embedding, &u.f0)),
        )?;
        Ok(Self {
            speakers,
            utterances,
            by_speaker,
            stats,
        })
    }

    /// Replaces the fitted Gaussian store, e.g. with one restored from a
    /// checkpoint. Every training speaker must be covered.
    pub fn with_stats(mut self, stats: GaussianStore) -> Result<Self> {
        if let Some(id) = self.speakers.iter().find(|id| stats.get(id).is_none()) {
            return Err(Error::invalid(format!("no Gaussian for speaker `{id}`")));
        }
        self.stats = stats;
        Ok(self)
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn utterances(&self) -> &[TrainingUtterance] {
        &self.utterances
    }

    pub fn stats(&self) -> &GaussianStore {
        &self.stats
    }

    pub fn speaker_stats(&self, speaker: usize) -> Result<&SpeakerStats> {
        let id = &self.speakers[speaker];
        self.stats
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no Gaussian for speaker `{id}`")))
    }

    pub fn min_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.frames()).min().unwrap_or(0)
    }

    pub fn random_utterance(&self, rng: &mut impl Rng) -> &TrainingUtterance {
        &self.utterances[rng.random_range(0..self.utterances.len())]
    }

    /// One random utterance from each of `n` distinct speakers other than
    /// `speaker`.
    pub fn random_others(&self, speaker: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<&TrainingUtterance>> {
        let others = self.speakers.len() - 1;
        if n > others {
            return Err(Error::invalid(format!(
                "{n} cross-speaker conversions need {} training speakers, found {}",
                n + 1,
                self.speakers.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, others, n)
            .into_iter()
            .map(|s| {
                let s = if s >= speaker { s + 1 } else { s };
                let pool = &self.by_speaker[s];
                &self.utterances[pool[rng.random_range(0..pool.len())]]
            })
            .collect())
    }
}
