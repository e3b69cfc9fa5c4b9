//! The `lvc-vc` command-line surface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::container::{self, Array};
use crate::corpus::{load_manifest, read_wav, write_wav, AudioClip};
use crate::error::{Error, Result};
use crate::features::{compute_log_mel, extract_features, stft_magnitude, N_MELS};
use crate::inference::{stft_distance, TargetSpeaker, VoiceConverter};
use crate::speaker::{pretrain_speaker_encoder, SpeakerEncoder};
use crate::train::{build_gaussian_store, run_training, utterance_features, Checkpoint, TrainConfig, Trainer, TrainingSet};

#[derive(Debug, Parser)]
#[command(name = "lvc-vc", version, about = "Zero-shot voice conversion with location-variable convolutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute X, H, F0, p_norm and m for every manifest utterance.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pretrain and freeze the speaker encoder on the training speakers.
    PretrainEncoder {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit one embedding Gaussian per speaker over every manifest utterance.
    FitGaussians {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Run (or resume) the two-phase training schedule.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Stop once this many iterations have run in total.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Convert a source utterance toward a target utterance or speaker.
    Convert {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        gaussians: Option<PathBuf>,
    },
    /// STFT magnitudes of every channel after each upsampling stack.
    ProbeStacks {
        #[command(flatten)]
        common: Common,
    },
    /// Synthesis with the speaker or the content features zeroed.
    ZeroAblate {
        #[command(flatten)]
        common: Common,
    },
    /// Objective metrics over a list of source/target pairs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Line-delimited pairs `{"pair_id", "source", "target"}`.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TargetArgs {
    /// Target utterance; its raw embedding and median F0 are used.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Registered speaker; its Gaussian mean and stored median F0 are used.
    #[arg(long)]
    pub target_speaker: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
    Toy,
}

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
    Checkpoint(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Checkpoint(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "data error: {e}"),
            CliError::Checkpoint(e) => write!(f, "checkpoint error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Checkpoint { .. } => CliError::Checkpoint(e),
            Error::Config(m) => CliError::Usage(m),
            other => CliError::Data(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load_config(path: Option<&Path>, preset: Option<Preset>) -> CliResult<TrainConfig> {
    match (path, preset) {
        (Some(_), Some(_)) => Err(CliError::Usage("--config and --preset are mutually exclusive".into())),
        (Some(p), None) => Ok(TrainConfig::load(p)?),
        (None, Some(Preset::Paper)) => Ok(TrainConfig::paper()),
        (None, Some(Preset::Toy)) => Ok(TrainConfig::toy()),
        (None, _) => Ok(TrainConfig::desk()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_converter(path: &Path) -> CliResult<VoiceConverter> {
    VoiceConverter::load(path).map_err(CliError::Checkpoint)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Extract { manifest, out, config } => cmd_extract(&manifest, &out, config.as_deref()),
        Command::PretrainEncoder {
            manifest,
            out,
            config,
            seed,
        } => {
            let mut encoder_config = load_config(config.as_deref(), None)?.encoder;
            if let Some(s) = seed {
                encoder_config.seed = s;
            }
            let registry = load_manifest(&manifest)?;
            let (encoder, report) = pretrain_speaker_encoder(&registry, encoder_config)?;
            encoder.save(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "final_loss": report.final_loss,
                    "heldout_accuracy": report.heldout_accuracy,
                })
            );
            Ok(())
        }
        Command::FitGaussians {
            manifest,
            encoder,
            out,
            config,
            features,
        } => {
            let config = load_config(config.as_deref(), None)?;
            let encoder = SpeakerEncoder::load(&encoder)?;
            let registry = load_manifest(&manifest)?;
            let mut items = Vec::new();
            for rec in registry.records() {
                let f = utterance_features(
                    &rec.utt_id,
                    &rec.speaker_id,
                    &rec.path,
                    config.lifter_coeffs,
                    features.as_deref(),
                )?;
                let e = match &f.embedding {
                    Some(e) => e.clone(),
                    None => encoder.embed(&f.log_mel)?,
                };
                items.push((rec.speaker_id.clone(), e, f.f0));
            }
            build_gaussian_store(items.iter().map(|(s, e, f)| (s.as_str(), e, f)))?.save(&out)?;
            Ok(())
        }
        Command::Train {
            manifest,
            encoder,
            out,
            config,
            preset,
            seed,
            resume,
            features,
            steps,
        } => {
            let registry = load_manifest(&manifest)?;
            let mut trainer = match resume {
                Some(path) => {
                    let ckpt = Checkpoint::load(&path)?;
                    let encoder = ckpt.encoder().map_err(CliError::Checkpoint)?;
                    let data = TrainingSet::prepare(&registry, &encoder, ckpt.config().lifter_coeffs, features.as_deref())?;
                    Trainer::resume(&ckpt, data)?
                }
                None => {
                    let mut config = load_config(config.as_deref(), preset)?;
                    if let Some(s) = seed {
                        config.seed = s;
                    }
                    let encoder = match encoder {
                        Some(p) => SpeakerEncoder::load(&p)?,
                        None => pretrain_speaker_encoder(&registry, config.encoder)?.0,
                    };
                    let data = TrainingSet::prepare(&registry, &encoder, config.lifter_coeffs, features.as_deref())?;
                    Trainer::new(config, data, encoder)?
                }
            };
            run_training(&mut trainer, &out, steps)?;
            Ok(())
        }
        Command::Convert {
            common,
            target,
            gaussians,
        } => {
            let mut vc = load_converter(&common.checkpoint)?;
            if let Some(g) = gaussians {
                vc = vc.with_gaussians(crate::speaker::GaussianStore::load(g)?);
            }
            let target = match (target.target, target.target_speaker) {
                (Some(path), None) => vc.target_from_clip(&read_wav(path)?)?,
                (None, Some(id)) => vc.target_from_speaker(&id)?,
                _ => return Err(CliError::Usage("give exactly one of --target and --target-speaker".into())),
            };
            let out = vc.convert(&read_wav(&common.source)?, &target, common.seed)?;
            write_wav(&out, &common.out)?;
            Ok(())
        }
        Command::ProbeStacks { common } => cmd_probe_stacks(&common),
        Command::ZeroAblate { common } => cmd_zero_ablate(&common),
        Command::Eval {
            checkpoint,
            manifest,
            out,
            seed,
        } => cmd_eval(&checkpoint, &manifest, &out, seed),
    }
}

fn cmd_extract(manifest: &Path, out: &Path, config: Option<&Path>) -> CliResult<()> {
    let config = load_config(config, None)?;
    let registry = load_manifest(manifest)?;
    create_dir(out)?;
    let mut failures = 0usize;
    for rec in registry.records() {
        let result = read_wav(&rec.path)
            .and_then(|clip| extract_features(&rec.utt_id, &rec.speaker_id, &clip, config.lifter_coeffs))
            .and_then(|f| f.save(out.join(format!("{}.safetensors", rec.utt_id))));
        if let Err(e) = result {
            eprintln!("{}: {e}", rec.utt_id);
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::Data(Error::invalid(format!(
            "{failures} of {} utterances failed",
            registry.num_records()
        ))));
    }
    Ok(())
}

/// Probe layout: FFT size and hop of the per-channel STFT after a stack
/// whose activations run at `rate` samples per frame.
pub fn probe_stft_params(rate: usize) -> (usize, usize) {
    (4 * rate, rate)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProbeMeta {
    pub frames: usize,
    pub stacks: Vec<ProbeStack>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProbeStack {
    pub stack: usize,
    pub channels: usize,
    pub samples_per_frame: usize,
    pub samples: usize,
    pub n_fft: usize,
    pub hop: usize,
}

fn source_bundle(vc: &VoiceConverter, source: &Path) -> CliResult<(AudioClip, crate::features::ConditioningBundle)> {
    let clip = read_wav(source)?;
    let feats = vc.features(&clip)?;
    let target = vc.target_from_features(&feats)?;
    let bundle = vc.bundle(&feats, &target)?;
    Ok((clip, bundle))
}

fn cmd_probe_stacks(c: &Common) -> CliResult<()> {
    let vc = load_converter(&c.checkpoint)?;
    let (_, bundle) = source_bundle(&vc, &c.source)?;
    let (_, taps) = vc.synthesize_with_taps(&bundle, c.seed)?;
    let mut arrays = BTreeMap::new();
    let mut stacks = Vec::new();
    for tap in &taps {
        let rate = vc.generator().config().cumulative_rate(tap.stack);
        let (n_fft, hop) = probe_stft_params(rate);
        for ch in 0..tap.channels {
            let m = stft_magnitude(tap.channel(ch), n_fft, hop, n_fft);
            arrays.insert(
                format!("stack{}/channel{ch:02}", tap.stack),
                Array::new(vec![m.rows(), m.cols()], m.into_vec())?,
            );
        }
        stacks.push(ProbeStack {
            stack: tap.stack,
            channels: tap.channels,
            samples_per_frame: rate,
            samples: tap.samples,
            n_fft,
            hop,
        });
    }
    create_dir(&c.out)?;
    let meta = ProbeMeta {
        frames: bundle.frames(),
        stacks,
    };
    container::save(c.out.join("probes.safetensors"), "probes", 1, &meta, &arrays)?;
    Ok(())
}

fn log_mel_array(clip: &AudioClip) -> Result<Array> {
    let m = compute_log_mel(clip)?;
    Array::new(vec![m.frames(), N_MELS], m.values().data().to_vec())
}

fn cmd_zero_ablate(c: &Common) -> CliResult<()> {
    let vc = load_converter(&c.checkpoint)?;
    let (clip, bundle) = source_bundle(&vc, &c.source)?;
    let mut speaker_zeroed = bundle.clone();
    speaker_zeroed.zero_speaker();
    let mut content_zeroed = bundle;
    content_zeroed.zero_content();
    let a = vc.synthesize(&speaker_zeroed, c.seed)?;
    let b = vc.synthesize(&content_zeroed, c.seed)?;
    create_dir(&c.out)?;
    write_wav(&a, c.out.join("speaker_zeroed.wav"))?;
    write_wav(&b, c.out.join("content_zeroed.wav"))?;
    let mut arrays = BTreeMap::new();
    arrays.insert("original".to_string(), log_mel_array(&clip)?);
    arrays.insert("speaker_zeroed".to_string(), log_mel_array(&a)?);
    arrays.insert("content_zeroed".to_string(), log_mel_array(&b)?);
    let order = ["original", "speaker_zeroed", "content_zeroed"];
    container::save(c.out.join("spectrograms.safetensors"), "spectrograms", 1, &order, &arrays)?;
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    pair_id: String,
    source: PathBuf,
    target: PathBuf,
}

/// One evaluation report row; metrics are absent when the pair failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pair_id: String,
    pub cosine: Option<f64>,
    pub stft_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut p: PairRecord = serde_json::from_str(l).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            p.source = base.join(&p.source);
            p.target = base.join(&p.target);
            Ok(p)
        })
        .collect()
}

fn eval_pair(vc: &VoiceConverter, pair: &PairRecord, out: &Path, seed: u64) -> Result<(f64, f64)> {
    let source = read_wav(&pair.source)?;
    let target_clip = read_wav(&pair.target)?;
    let target: TargetSpeaker = vc.target_from_clip(&target_clip)?;
    let converted = vc.convert(&source, &target, seed)?;
    write_wav(&converted, out.join(format!("{}.wav", pair.pair_id)))?;
    let cosine = vc.similarity(&converted, &target.embedding)? as f64;
    let own = vc.target_from_clip(&source)?;
    let recon = vc.convert(&source, &own, seed)?;
    let dist = stft_distance(source.samples(), recon.samples(), &vc.config().discriminator.resolutions)?;
    Ok((cosine, dist))
}

fn cmd_eval(checkpoint: &Path, pairs: &Path, out: &Path, seed: u64) -> CliResult<()> {
    let vc = load_converter(checkpoint)?;
    let pairs = load_pairs(pairs)?;
    create_dir(out)?;
    let mut lines = String::new();
    for pair in &pairs {
        let row = match eval_pair(&vc, pair, out, seed) {
            Ok((cosine, d)) => EvalRow {
                pair_id: pair.pair_id.clone(),
                cosine: Some(cosine),
                stft_distance: Some(d),
                error: None,
            },
            Err(e) => {
                eprintln!("{}: {e}", pair.pair_id);
                EvalRow {
                    pair_id: pair.pair_id.clone(),
                    cosine: None,
                    stft_distance: None,
                    error: Some(e.to_string()),
                }
            }
        };
        lines.push_str(&serde_json::to_string(&row).expect("row serializes"));
        lines.push('\n');
    }
    let path = out.join("report.jsonl");
    std::fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
