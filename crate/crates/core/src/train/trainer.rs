use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{
    Checkpoint, CheckpointMeta, RngState, DISCRIMINATOR_PREFIX, ENCODER_PREFIX, GAUSSIAN_PREFIX,
    GENERATOR_PREFIX, OPT_D_PREFIX, OPT_G_PREFIX,
};
use super::{TrainConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::features::{build_conditioning, warp_envelope, SpectralEnvelope, WarpFactor, HOP};
use crate::gan::{
    loss_aux, loss_discriminator, loss_generator, loss_ssc, mean_cosine, MultiDiscriminator,
};
use crate::generator::{Generator, NoiseSequence};
use crate::nn::{to_scalar, AdamW, AdamWConfig, MelFrontend, ParamStore, DEVICE};
use crate::speaker::{sample_embedding, SpeakerEmbedding, SpeakerEncoder};

/// Losses of one iteration. `alphas` holds the warp factor drawn for each
/// batch sample and is not written to the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub phase: u8,
    pub loss_d: f32,
    pub loss_g: f32,
    pub loss_aux: f32,
    pub loss_ssc: f32,
    pub lambda_ssc: f64,
    #[serde(skip)]
    pub alphas: Vec<f32>,
}

/// Append-only line-delimited JSON loss log.
pub struct LossLog {
    out: BufWriter<File>,
}

impl LossLog {
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &LossRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io("loss log", e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::invalid(format!("bad loss record: {e}"))))
            .collect()
    }
}

/// Conditioning, noise and (for reconstruction) the matching waveform for
/// a batch, already stacked.
struct Batch {
    cond: Tensor,
    z: Tensor,
    target: Tensor,
}

/// Two-phase adversarial trainer: self-reconstruction, then
/// self-reconstruction plus the annealed speaker similarity criterion.
pub struct Trainer {
    config: TrainConfig,
    data: TrainingSet,
    encoder: SpeakerEncoder,
    g_params: ParamStore,
    d_params: ParamStore,
    generator: Generator,
    discriminator: MultiDiscriminator,
    opt_g: AdamW,
    opt_d: AdamW,
    mel: MelFrontend,
    rng: ChaCha8Rng,
    crop: usize,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: TrainingSet, encoder: SpeakerEncoder) -> Result<Self> {
        config.validate()?;
        if !encoder.is_frozen() {
            return Err(Error::invalid("the speaker encoder must be frozen before training"));
        }
        if encoder.config() != &config.encoder {
            return Err(Error::Config("encoder does not match the encoder config".into()));
        }
        if config.use_ssc && config.iters_phase2 > 0 && data.speakers().len() < config.n_ssc + 1 {
            return Err(Error::invalid(format!(
                "the SSC loss with n_ssc = {} needs {} training speakers, found {}",
                config.n_ssc,
                config.n_ssc + 1,
                data.speakers().len()
            )));
        }
        let crop = config.crop_frames.min(data.min_frames());
        if crop * HOP < config.discriminator.min_samples() {
            return Err(Error::invalid("training utterances are too short for the discriminators"));
        }
        let mut g_params = ParamStore::new(config.seed);
        let generator = Generator::new(&mut g_params, config.generator.clone(), config.layout())?;
        let mut d_params = ParamStore::new(config.seed.wrapping_add(1));
        let discriminator = MultiDiscriminator::new(&mut d_params, config.discriminator.clone())?;
        let adam = AdamWConfig {
            lr: config.lr_phase1,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: 1e-8,
            weight_decay: config.weight_decay,
        };
        let opt_g = AdamW::new(&g_params, adam)?;
        let opt_d = AdamW::new(&d_params, adam)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            config,
            data,
            encoder,
            g_params,
            d_params,
            generator,
            discriminator,
            opt_g,
            opt_d,
            mel: MelFrontend::new()?,
            rng,
            crop,
            step: 0,
        })
    }

    /// Restores a trainer mid-run. The training data must be prepared the
    /// same way as for the original run; the checkpoint's Gaussian store
    /// replaces the freshly fit one.
    pub fn resume(checkpoint: &Checkpoint, data: TrainingSet) -> Result<Self> {
        let data = data.with_stats(checkpoint.gaussians()?)?;
        let mut t = Self::new(checkpoint.config().clone(), data, checkpoint.encoder()?)?;
        let a = &checkpoint.arrays;
        t.g_params.import(GENERATOR_PREFIX, a)?;
        t.d_params.import(DISCRIMINATOR_PREFIX, a)?;
        t.opt_g.import(OPT_G_PREFIX, a, checkpoint.meta.opt_g_step)?;
        t.opt_d.import(OPT_D_PREFIX, a, checkpoint.meta.opt_d_step)?;
        t.rng = checkpoint.meta.rng.restore()?;
        t.step = checkpoint.meta.step;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn encoder(&self) -> &SpeakerEncoder {
        &self.encoder
    }

    /// Completed iterations.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn crop_frames(&self) -> usize {
        self.crop
    }

    pub fn phase(&self) -> u8 {
        if self.step < self.config.iters_phase1 {
            1
        } else {
            2
        }
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_iters()
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut arrays = self.g_params.export(GENERATOR_PREFIX)?;
        arrays.extend(self.d_params.export(DISCRIMINATOR_PREFIX)?);
        arrays.extend(self.opt_g.export(OPT_G_PREFIX)?);
        arrays.extend(self.opt_d.export(OPT_D_PREFIX)?);
        arrays.extend(self.encoder.params().export(ENCODER_PREFIX)?);
        let (g_arrays, gaussians) = self.data.stats().to_arrays(GAUSSIAN_PREFIX);
        arrays.extend(g_arrays);
        Ok(Checkpoint {
            meta: CheckpointMeta {
                config: self.config.clone(),
                step: self.step,
                phase: self.phase(),
                opt_g_step: self.opt_g.step_count(),
                opt_d_step: self.opt_d.step_count(),
                rng: RngState::capture(&self.rng),
                gaussians,
            },
            arrays,
        })
    }

    fn stack(&self, bundles: Vec<(Vec<f32>, NoiseSequence, Vec<f32>)>, with_audio: bool) -> Result<Batch> {
        let b = bundles.len();
        let channels = self.config.layout().channels();
        let (mut cond, mut z, mut audio) = (Vec::new(), Vec::new(), Vec::new());
        for (c, n, a) in bundles {
            cond.extend(c);
            z.extend_from_slice(n.data());
            audio.extend(a);
        }
        let t = self.crop;
        Ok(Batch {
            cond: Tensor::from_vec(cond, (b, channels, t), &DEVICE)?,
            z: Tensor::from_vec(z, (b, self.config.generator.z_dim, t), &DEVICE)?,
            target: if with_audio {
                Tensor::from_vec(audio, (b, t * HOP), &DEVICE)?
            } else {
                Tensor::zeros((b, 1), candle_core::DType::F32, &DEVICE)?
            },
        })
    }

    /// Samples the reconstruction batch and, in phase 2 with SSC enabled,
    /// the cross-speaker conversion batch with its target embeddings.
    fn sample(&mut self, with_ssc: bool) -> Result<(Batch, Vec<f32>, Option<(Batch, Tensor)>)> {
        let cfg = &self.config;
        let layout = cfg.layout();
        let crop = self.crop;
        let rng = &mut self.rng;
        let mut recon = Vec::with_capacity(cfg.batch_size);
        let mut alphas = Vec::with_capacity(cfg.batch_size);
        let mut targets: Vec<(SpeakerEmbedding, usize)> = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let u = self.data.random_utterance(rng);
            let start = rng.random_range(0..=u.frames() - crop);
            let env = SpectralEnvelope::new(u.envelope.values().slice_rows(start, crop))?;
            let alpha = if cfg.use_warping {
                rng.random_range(cfg.warp_min..=cfg.warp_max)
            } else {
                1.0
            };
            let env = warp_envelope(&env, WarpFactor::new(alpha)?);
            let stats = self.data.speaker_stats(u.speaker)?;
            let s = if cfg.use_gaussian_embeddings {
                sample_embedding(&stats.gaussian, rng)
            } else {
                u.embedding.clone()
            };
            let bundle = build_conditioning(layout, &env, &u.pnorm.slice(start, crop), &s, stats.median_f0)?;
            let z = NoiseSequence::from_rng(cfg.generator.z_dim, crop, rng)?;
            let audio = u.samples[start * HOP..(start + crop) * HOP].to_vec();
            recon.push((bundle.data().to_vec(), z, audio));
            alphas.push(alpha);
            targets.push((s, u.speaker));
        }
        let mut ssc = None;
        if with_ssc {
            let mut conv = Vec::with_capacity(cfg.batch_size * cfg.n_ssc);
            let mut target_rows = Vec::with_capacity(cfg.batch_size * cfg.n_ssc * layout.embed_dim);
            for (s, speaker) in &targets {
                let median = self.data.speaker_stats(*speaker)?.median_f0;
                for u in self.data.random_others(*speaker, cfg.n_ssc, rng)? {
                    let start = rng.random_range(0..=u.frames() - crop);
                    let env = SpectralEnvelope::new(u.envelope.values().slice_rows(start, crop))?;
                    let bundle = build_conditioning(layout, &env, &u.pnorm.slice(start, crop), s, median)?;
                    let z = NoiseSequence::from_rng(cfg.generator.z_dim, crop, rng)?;
                    conv.push((bundle.data().to_vec(), z, Vec::new()));
                    target_rows.extend_from_slice(s.as_slice());
                }
            }
            let n = conv.len();
            let target = Tensor::from_vec(target_rows, (n, layout.embed_dim), &DEVICE)?;
            ssc = Some((self.stack(conv, false)?, target));
        }
        Ok((self.stack(recon, true)?, alphas, ssc))
    }

    /// One iteration: a discriminator update on detached generator output,
    /// then a generator update.
    pub fn train_step(&mut self) -> Result<LossRecord> {
        let phase = self.phase();
        let lr = if phase == 1 {
            self.config.lr_phase1
        } else {
            self.config.lr_phase2
        };
        self.opt_g.set_lr(lr);
        self.opt_d.set_lr(lr);
        let with_ssc = phase == 2 && self.config.use_ssc;
        let lambda_ssc = if with_ssc {
            self.config.lambda_ssc_at(self.step - self.config.iters_phase1)
        } else {
            0.0
        };
        let (batch, alphas, ssc_batch) = self.sample(with_ssc)?;

        let fake = self.generator.forward(&batch.z, &batch.cond)?;

        let real_out = self.discriminator.forward(&batch.target)?;
        let fake_out = self.discriminator.forward(&fake.detach())?;
        let loss_d = loss_discriminator(&real_out.scores, &fake_out.scores)?;
        self.opt_d.step(&loss_d.backward()?)?;

        let fake_out = self.discriminator.forward(&fake)?;
        let real_specs: Vec<Tensor> = real_out.spectrograms.iter().map(Tensor::detach).collect();
        let aux = loss_aux(&real_specs, &fake_out.spectrograms)?;
        let ssc = match ssc_batch {
            Some((conv, target)) => {
                let x = self.generator.forward(&conv.z, &conv.cond)?;
                let e = self.encoder.forward(&self.mel.forward(&x)?)?;
                Some(if self.config.ssc_raw_cosine {
                    mean_cosine(&e, &target)?
                } else {
                    loss_ssc(&e, &target)?
                })
            }
            None => None,
        };
        let loss_g = loss_generator(
            &fake_out.scores,
            &aux,
            ssc.as_ref(),
            self.config.lambda_aux,
            lambda_ssc,
        )?;
        self.opt_g.step(&loss_g.backward()?)?;

        let record = LossRecord {
            step: self.step,
            phase,
            loss_d: to_scalar(&loss_d)?,
            loss_g: to_scalar(&loss_g)?,
            loss_aux: to_scalar(&aux)?,
            loss_ssc: ssc.as_ref().map(to_scalar).transpose()?.unwrap_or(0.0),
            lambda_ssc,
            alphas,
        };
        self.step += 1;
        Ok(record)
    }

    /// Trains until `end_step` (clamped to the schedule's total), handing
    /// every loss record to `on_record`.
    pub fn train_until(
        &mut self,
        end_step: u64,
        mut on_record: impl FnMut(&Self, &LossRecord) -> Result<()>,
    ) -> Result<()> {
        let end = end_step.min(self.config.total_iters());
        while self.step < end {
            let record = self.train_step()?;
            if !record.loss_g.is_finite() || !record.loss_d.is_finite() {
                return Err(Error::invalid(format!("non-finite loss at step {}", record.step)));
            }
            on_record(self, &record)?;
        }
        Ok(())
    }
}

/// Runs (or continues) the schedule up to `end_step` (the full schedule
/// when `None`), appending to `out_dir/loss.jsonl` and writing
/// `checkpoint_<step>.safetensors` every `checkpoint_every` steps plus
/// `final.safetensors` at the end.
pub fn run_training(trainer: &mut Trainer, out_dir: impl AsRef<Path>, end_step: Option<u64>) -> Result<Checkpoint> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut log = LossLog::append(out_dir.join("loss.jsonl"))?;
    let every = trainer.config().checkpoint_every;
    let total = end_step.map_or(trainer.config().total_iters(), |e| e.min(trainer.config().total_iters()));
    trainer.train_until(total, |t, rec| {
        log.write(rec)?;
        if rec.step % 50 == 0 {
            log::info!(
                "step {} phase {}: L_D {:.4} L_G {:.4} L_aux {:.4} L_ssc {:.4}",
                rec.step,
                rec.phase,
                rec.loss_d,
                rec.loss_g,
                rec.loss_aux,
                rec.loss_ssc
            );
        }
        if every > 0 && t.step() % every == 0 && t.step() < total {
            t.checkpoint()?.save(checkpoint_path(out_dir, t.step()))?;
        }
        Ok(())
    })?;
    let ckpt = trainer.checkpoint()?;
    ckpt.save(out_dir.join("final.safetensors"))?;
    Ok(ckpt)
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("checkpoint_{step:08}.safetensors"))
}
