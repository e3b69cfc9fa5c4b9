//! Synthetic multi-speaker corpus built from a harmonic source driven
//! through formant resonators. Speakers differ in pitch and vocal-tract
//! length; utterances differ in their vowel/fricative/silence sequence.

use std::f32::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_manifest, write_wav, AudioClip, Split, UtteranceRecord, SAMPLE_RATE};
use crate::error::{Error, Result};

const VOWELS: [[f32; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];
const BANDWIDTHS: [f32; 3] = [80.0, 100.0, 130.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpeaker {
    pub id: String,
    pub f0_hz: f32,
    /// Multiplies every formant frequency (shorter tract → larger scale).
    pub formant_scale: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpusSpec {
    pub speakers: Vec<ToySpeaker>,
    pub train_utts: usize,
    pub test_utts: usize,
    pub seconds: f32,
    pub seed: u64,
}

impl ToyCorpusSpec {
    /// Two clearly separated voices, four 2-second training clips each plus
    /// one held-out clip.
    pub fn two_speaker(seed: u64) -> Self {
        Self {
            speakers: vec![
                ToySpeaker {
                    id: "low".into(),
                    f0_hz: 110.0,
                    formant_scale: 0.95,
                },
                ToySpeaker {
                    id: "high".into(),
                    f0_hz: 220.0,
                    formant_scale: 1.15,
                },
            ],
            train_utts: 4,
            test_utts: 1,
            seconds: 2.0,
            seed,
        }
    }

    /// `n` speakers with pitches spread log-uniformly over roughly 90..260 Hz.
    pub fn many_speakers(n: usize, train_utts: usize, seconds: f32, seed: u64) -> Self {
        let speakers = (0..n)
            .map(|i| {
                let t = if n > 1 { i as f32 / (n - 1) as f32 } else { 0.5 };
                ToySpeaker {
                    id: format!("spk{i:02}"),
                    f0_hz: 90.0 * (260.0f32 / 90.0).powf(t),
                    formant_scale: 0.9 + 0.3 * ((i * 7 % n.max(1)) as f32 / n.max(1) as f32),
                }
            })
            .collect();
        Self {
            speakers,
            train_utts,
            test_utts: 1,
            seconds,
            seed,
        }
    }
}

struct Resonator {
    b0: f32,
    a1: f32,
    a2: f32,
    y1: f32,
    y2: f32,
}

impl Resonator {
    fn new() -> Self {
        Self {
            b0: 0.0,
            a1: 0.0,
            a2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tune(&mut self, freq: f32, bw: f32) {
        let fs = SAMPLE_RATE as f32;
        let r = (-PI * bw / fs).exp();
        self.a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
        self.a2 = -r * r;
        self.b0 = 1.0 - r;
    }

    fn step(&mut self, x: f32) -> f32 {
        let y = self.b0 * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

#[derive(Clone, Copy)]
enum Segment {
    Vowel(usize),
    Fricative,
    Silence,
}

/// Synthesizes one utterance for `speaker`. Deterministic in `rng`.
pub fn synthesize_utterance(speaker: &ToySpeaker, seconds: f32, rng: &mut impl Rng) -> AudioClip {
    let fs = SAMPLE_RATE as f32;
    let n = (seconds * fs).round().max(1.0) as usize;

    // Segment plan: (segment, length in samples).
    let mut plan = Vec::new();
    let mut total = 0;
    while total < n {
        let len = (rng.random_range(0.12f32..0.28) * fs) as usize;
        let roll: f32 = rng.random();
        let seg = if roll < 0.78 {
            Segment::Vowel(rng.random_range(0..VOWELS.len()))
        } else if roll < 0.9 {
            Segment::Fricative
        } else {
            Segment::Silence
        };
        plan.push((seg, len));
        total += len;
    }

    let phase_mod: f32 = rng.random_range(0.0..2.0 * PI);
    let n_harm = ((3800.0 / speaker.f0_hz) as usize).max(1);
    let mut formant_state = VOWELS[0].map(|f| f * speaker.formant_scale);
    let mut resonators = [Resonator::new(), Resonator::new(), Resonator::new()];
    let mut hiss = Resonator::new();
    hiss.tune(4500.0, 2000.0);
    let mut voiced_gain = 0.0f32;
    let mut noise_gain = 0.0f32;
    let mut phase = 0.0f32;
    let mut out = Vec::with_capacity(n);

    let mut seg_iter = plan.into_iter();
    let (mut seg, mut remaining) = seg_iter.next().unwrap();
    for i in 0..n {
        while remaining == 0 {
            (seg, remaining) = seg_iter.next().unwrap_or((Segment::Silence, usize::MAX));
        }
        remaining -= 1;
        let t = i as f32 / fs;
        let (target_formants, target_voiced, target_noise) = match seg {
            Segment::Vowel(v) => (VOWELS[v].map(|f| f * speaker.formant_scale), 1.0, 0.0),
            Segment::Fricative => (formant_state, 0.0, 1.0),
            Segment::Silence => (formant_state, 0.0, 0.0),
        };
        for (state, target) in formant_state.iter_mut().zip(target_formants) {
            *state += 0.004 * (target - *state);
        }
        voiced_gain += 0.003 * (target_voiced - voiced_gain);
        noise_gain += 0.003 * (target_noise - noise_gain);
        if i % 32 == 0 {
            for ((r, f), bw) in resonators.iter_mut().zip(formant_state).zip(BANDWIDTHS) {
                r.tune(f, bw);
            }
        }

        let f0 = speaker.f0_hz
            * (1.0 + 0.06 * (2.0 * PI * 0.8 * t + phase_mod).sin() - 0.05 * t / seconds);
        phase = (phase + 2.0 * PI * f0 / fs) % (2.0 * PI);
        let mut source = 0.0;
        for h in 1..=n_harm {
            source += (h as f32 * phase).sin() / h as f32;
        }
        let mut x = voiced_gain * source;
        for r in resonators.iter_mut() {
            x = r.step(x) * 4.0;
        }
        let noise = rng.random_range(-1.0f32..1.0);
        x += noise_gain * hiss.step(noise) * 1.5;
        out.push(x);
    }

    let peak = out.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-6);
    let scale = 0.6 / peak;
    AudioClip::from_clamped(out.into_iter().map(|v| v * scale).collect())
        .expect("synthesized audio is finite and non-empty")
}

/// Writes every utterance as `<dir>/<speaker>/<utt>.wav` together with
/// `<dir>/manifest.jsonl`, returning the manifest path.
pub fn write_toy_corpus(spec: &ToyCorpusSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if spec.speakers.is_empty() || spec.train_utts == 0 {
        return Err(Error::invalid("toy corpus needs speakers and utterances"));
    }
    let mut records = Vec::new();
    for (si, spk) in spec.speakers.iter().enumerate() {
        let spk_dir = dir.join(&spk.id);
        std::fs::create_dir_all(&spk_dir).map_err(|e| Error::io(&spk_dir, e))?;
        for ui in 0..spec.train_utts + spec.test_utts {
            let mut rng = ChaCha8Rng::seed_from_u64(
                spec.seed ^ ((si as u64) << 32) ^ (ui as u64).wrapping_mul(0x9E37_79B9),
            );
            let clip = synthesize_utterance(spk, spec.seconds, &mut rng);
            let name = format!("{}_{ui:03}", spk.id);
            let rel = PathBuf::from(&spk.id).join(format!("{name}.wav"));
            write_wav(&clip, dir.join(&rel))?;
            records.push(UtteranceRecord {
                utt_id: name,
                speaker_id: spk.id.clone(),
                path: rel,
                split: if ui < spec.train_utts {
                    Split::Train
                } else {
                    Split::Test
                },
            });
        }
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&records, &manifest)?;
    Ok(manifest)
}
