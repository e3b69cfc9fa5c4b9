use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{
    MedianF0OneHot, NormalizedQuantizedF0, SpectralEnvelope, MEDIAN_BINS, N_MELS, PNORM_CLASSES,
};
use crate::error::{Error, Result};
use crate::speaker::SpeakerEmbedding;

/// Channel layout of the conditioning sequence: envelope, then optional
/// p_norm, then the broadcast speaker embedding, then optional median F0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditioningLayout {
    pub embed_dim: usize,
    pub use_pnorm: bool,
    pub use_median_f0: bool,
}

impl ConditioningLayout {
    pub fn full(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            use_pnorm: true,
            use_median_f0: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.median_range().map_or(self.speaker_range().end, |r| r.end)
    }

    pub fn envelope_range(&self) -> Range<usize> {
        0..N_MELS
    }

    pub fn pnorm_range(&self) -> Option<Range<usize>> {
        self.use_pnorm.then_some(N_MELS..N_MELS + PNORM_CLASSES)
    }

    pub fn speaker_range(&self) -> Range<usize> {
        let start = self.pnorm_range().map_or(N_MELS, |r| r.end);
        start..start + self.embed_dim
    }

    pub fn median_range(&self) -> Option<Range<usize>> {
        let start = self.speaker_range().end;
        self.use_median_f0.then_some(start..start + MEDIAN_BINS)
    }

    /// Channels carrying content (envelope and p_norm).
    pub fn content_ranges(&self) -> Vec<Range<usize>> {
        std::iter::once(self.envelope_range())
            .chain(self.pnorm_range())
            .collect()
    }

    /// Channels carrying speaker identity (embedding and median F0).
    pub fn speaker_ranges(&self) -> Vec<Range<usize>> {
        std::iter::once(self.speaker_range())
            .chain(self.median_range())
            .collect()
    }
}

/// Frame-aligned conditioning, stored channel-major (`channels × frames`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    layout: ConditioningLayout,
    frames: usize,
    data: Vec<f32>,
}

impl ConditioningBundle {
    pub fn layout(&self) -> ConditioningLayout {
        self.layout
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    /// Channel-major values, `channels × frames`.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    fn zero_ranges(&mut self, ranges: Vec<Range<usize>>) {
        for r in ranges {
            self.data[r.start * self.frames..r.end * self.frames].fill(0.0);
        }
    }

    /// Zeroes the embedding and median-F0 channels.
    pub fn zero_speaker(&mut self) {
        self.zero_ranges(self.layout.speaker_ranges());
    }

    /// Zeroes the envelope and p_norm channels.
    pub fn zero_content(&mut self) {
        self.zero_ranges(self.layout.content_ranges());
    }
}

/// Concatenates per-frame content features with broadcast speaker features.
pub fn build_conditioning(
    layout: ConditioningLayout,
    envelope: &SpectralEnvelope,
    pnorm: &NormalizedQuantizedF0,
    speaker: &SpeakerEmbedding,
    median: MedianF0OneHot,
) -> Result<ConditioningBundle> {
    let frames = envelope.frames();
    if pnorm.frames() != frames {
        return Err(Error::shape(format!(
            "envelope has {frames} frames but p_norm has {}",
            pnorm.frames()
        )));
    }
    if speaker.dim() != layout.embed_dim {
        return Err(Error::shape(format!(
            "embedding dim {} does not match layout {}",
            speaker.dim(),
            layout.embed_dim
        )));
    }
    let mut data = vec![0.0f32; layout.channels() * frames];
    let env = envelope.values();
    for t in 0..frames {
        for (b, &v) in env.row(t).iter().enumerate() {
            data[b * frames + t] = v;
        }
    }
    if let Some(r) = layout.pnorm_range() {
        for (t, &class) in pnorm.indices().iter().enumerate() {
            data[(r.start + class as usize) * frames + t] = 1.0;
        }
    }
    let sr = layout.speaker_range();
    for (i, &v) in speaker.as_slice().iter().enumerate() {
        data[(sr.start + i) * frames..(sr.start + i + 1) * frames].fill(v);
    }
    if let Some(r) = layout.median_range() {
        data[(r.start + median.bin()) * frames..(r.start + median.bin() + 1) * frames].fill(1.0);
    }
    Ok(ConditioningBundle {
        layout,
        frames,
        data,
    })
}
