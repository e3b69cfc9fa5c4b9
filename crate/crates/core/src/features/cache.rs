use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    compute_log_mel, estimate_f0, lifter_envelope, median_f0_onehot, pnorm_f0, F0Contour,
    FrameMatrix, LogMelSpectrogram, MedianF0OneHot, NormalizedQuantizedF0, SpectralEnvelope,
    N_MELS,
};
use crate::container::{self, Array};
use crate::corpus::AudioClip;
use crate::error::{Error, Result};
use crate::speaker::SpeakerEmbedding;

const KIND: &str = "features";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureMeta {
    utt_id: String,
    speaker_id: String,
    frames: usize,
}

/// Every content feature of one utterance, plus an optional externally
/// supplied speaker embedding.
///
/// On disk (`kind = "features"`, version 1): `X` and `H` as `[frames, 80]`,
/// `p_norm` class indices and `f0_hz` as `[frames]`, `m` as `[1]` (absent
/// when the utterance has no voiced frame), optional `speaker_embedding`
/// as `[d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub utt_id: String,
    pub speaker_id: String,
    pub log_mel: LogMelSpectrogram,
    pub envelope: SpectralEnvelope,
    pub f0: F0Contour,
    pub pnorm: NormalizedQuantizedF0,
    pub median: Option<MedianF0OneHot>,
    pub embedding: Option<SpeakerEmbedding>,
}

/// Computes X, H, F0, p_norm and m for a clip.
pub fn extract_features(
    utt_id: &str,
    speaker_id: &str,
    clip: &AudioClip,
    lifter_coeffs: usize,
) -> Result<UtteranceFeatures> {
    let log_mel = compute_log_mel(clip)?;
    let envelope = lifter_envelope(&log_mel, lifter_coeffs)?;
    let f0 = estimate_f0(clip);
    debug_assert_eq!(f0.len(), log_mel.frames());
    let pnorm = pnorm_f0(&f0);
    let median = match median_f0_onehot([&f0]) {
        Ok(m) => Some(m),
        Err(Error::AllUnvoiced) => None,
        Err(e) => return Err(e),
    };
    Ok(UtteranceFeatures {
        utt_id: utt_id.to_string(),
        speaker_id: speaker_id.to_string(),
        log_mel,
        envelope,
        f0,
        pnorm,
        median,
        embedding: None,
    })
}

impl UtteranceFeatures {
    pub fn frames(&self) -> usize {
        self.log_mel.frames()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let frames = self.frames();
        let mut arrays = BTreeMap::new();
        arrays.insert(
            "X".to_string(),
            Array::new(vec![frames, N_MELS], self.log_mel.values().data().to_vec())?,
        );
        arrays.insert(
            "H".to_string(),
            Array::new(vec![frames, N_MELS], self.envelope.values().data().to_vec())?,
        );
        arrays.insert(
            "p_norm".to_string(),
            Array::vector(self.pnorm.indices().iter().map(|&i| i as f32).collect()),
        );
        arrays.insert("f0_hz".to_string(), Array::vector(self.f0.values().to_vec()));
        if let Some(m) = self.median {
            arrays.insert("m".to_string(), Array::scalar(m.bin() as f32));
        }
        if let Some(e) = &self.embedding {
            arrays.insert("speaker_embedding".to_string(), Array::vector(e.as_slice().to_vec()));
        }
        let meta = FeatureMeta {
            utt_id: self.utt_id.clone(),
            speaker_id: self.speaker_id.clone(),
            frames,
        };
        container::save(path, KIND, VERSION, &meta, &arrays)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut loaded = container::load::<FeatureMeta>(path, KIND)?;
        let bad = |msg: String| Error::Container {
            path: path.to_path_buf(),
            msg,
        };
        if loaded.version != VERSION {
            return Err(bad(format!("unsupported feature version {}", loaded.version)));
        }
        let frames = loaded.meta.frames;
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let a = loaded
                .take(name)
                .ok_or_else(|| bad(format!("missing array `{name}`")))?;
            if a.shape != shape {
                return Err(bad(format!("array `{name}` has shape {:?}", a.shape)));
            }
            Ok(a.data)
        };
        let x = take("X", &[frames, N_MELS])?;
        let h = take("H", &[frames, N_MELS])?;
        let p = take("p_norm", &[frames])?;
        let f0 = take("f0_hz", &[frames])?;
        let median = loaded
            .take("m")
            .map(|a| MedianF0OneHot::from_bin(a.data[0] as usize))
            .transpose()?;
        let embedding = loaded
            .take("speaker_embedding")
            .map(|a| SpeakerEmbedding::normalized(a.data))
            .transpose()?;
        Ok(Self {
            utt_id: loaded.meta.utt_id,
            speaker_id: loaded.meta.speaker_id,
            log_mel: LogMelSpectrogram::new(FrameMatrix::from_vec(frames, N_MELS, x)?)?,
            envelope: SpectralEnvelope::new(FrameMatrix::from_vec(frames, N_MELS, h)?)?,
            f0: F0Contour::new(f0)?,
            pnorm: NormalizedQuantizedF0::from_indices(p.into_iter().map(|v| v as u16).collect())?,
            median,
            embedding,
        })
    }
}
