use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::collapse_metrics;
use super::state::ByolState;
use crate::augment::AugmentContext;
use crate::data::batch_tensor;
use crate::dsp::{crop_or_pad, LogMelSpectrogram, NormStats};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, RunConfig};
use crate::nn::{Encoder, Mode, Tensor};
use crate::rng::{seeded, substream, Rng};

pub const JOURNAL_FILE: &str = "journal.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.byla";
const METRIC_CLIPS: usize = 128;
const METRIC_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JournalRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub mean_std: f64,
    pub effective_rank: f64,
}

#[derive(Clone, Debug, Default)]
pub struct PretrainOptions {
    /// Rewritten at every epoch boundary.
    pub checkpoint: PathBuf,
    pub journal: PathBuf,
    /// Continue from this checkpoint; the config fingerprint must match.
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs in this invocation.
    pub stop_after: Option<usize>,
}

impl PretrainOptions {
    /// [`CHECKPOINT_FILE`] and [`JOURNAL_FILE`] inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            checkpoint: dir.join(CHECKPOINT_FILE),
            journal: dir.join(JOURNAL_FILE),
            ..Self::default()
        }
    }

    /// Journal next to `checkpoint`, named `<stem>.journal.csv`.
    pub fn for_checkpoint(checkpoint: &Path) -> Self {
        let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self {
            checkpoint: checkpoint.to_path_buf(),
            journal: checkpoint.with_file_name(format!("{stem}.journal.csv")),
            ..Self::default()
        }
    }
}

/// A self-supervised objective that the pretraining loop can drive and
/// checkpoint.
pub trait Pretrainable: Sized {
    /// Checkpoint `method` tag.
    const METHOD: &'static str;

    fn init(cfg: &RunConfig, rng: &mut Rng) -> Self;

    /// One optimization step on a batch of full-length clips; the method
    /// samples its own `t`-frame segments, padding with `silence`.
    fn step_on_clips(
        &mut self,
        clips: &[&LogMelSpectrogram],
        t: usize,
        silence: f32,
        ctx: &mut AugmentContext,
        rng: &mut Rng,
    ) -> Result<f64>;

    fn encoder_mut(&mut self) -> &mut Encoder;
    fn steps_taken(&self) -> u64;
    fn write_into(&self, ckpt: &mut Checkpoint);
    fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<()>;
}

impl Pretrainable for ByolState {
    const METHOD: &'static str = "byol";

    fn init(cfg: &RunConfig, rng: &mut Rng) -> Self {
        ByolState::from_config(cfg, rng)
    }

    fn step_on_clips(
        &mut self,
        clips: &[&LogMelSpectrogram],
        t: usize,
        silence: f32,
        ctx: &mut AugmentContext,
        rng: &mut Rng,
    ) -> Result<f64> {
        let raw: Vec<_> = clips.iter().map(|c| crop_or_pad(c, t, silence, rng)).collect();
        self.train_step(&raw, ctx, rng)
    }

    fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.online.encoder
    }

    fn steps_taken(&self) -> u64 {
        self.step
    }

    fn write_into(&self, ckpt: &mut Checkpoint) {
        ByolState::write_into(self, ckpt)
    }

    fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ByolState::restore_from(self, ckpt)
    }
}

#[derive(Clone, Debug)]
pub struct PretrainSummary<S = ByolState> {
    pub state: S,
    pub stats: NormStats,
    pub journal: Vec<JournalRow>,
    pub checkpoint: PathBuf,
}

/// BYOL pretraining; see [`pretrain_with`].
pub fn pretrain(cfg: &RunConfig, clips: &[LogMelSpectrogram], opts: &PretrainOptions) -> Result<PretrainSummary> {
    pretrain_with::<ByolState>(cfg, clips, opts)
}

/// Pretraining over full-length clips. Each epoch draws from its own RNG
/// stream, and the checkpoint written at every epoch boundary holds the
/// complete training state, so resuming reproduces an uninterrupted run
/// exactly.
pub fn pretrain_with<S: Pretrainable>(
    cfg: &RunConfig,
    clips: &[LogMelSpectrogram],
    opts: &PretrainOptions,
) -> Result<PretrainSummary<S>> {
    cfg.validate()?;
    if clips.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    for p in [&opts.checkpoint, &opts.journal] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let ckpt_path = opts.checkpoint.clone();
    let journal_path = opts.journal.clone();
    let fingerprint = cfg.fingerprint();

    let mut state = S::init(cfg, &mut substream(cfg.seed, 0));
    let mut ctx;
    let mut journal;
    let start_epoch;
    match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.method != S::METHOD {
                return Err(Error::Checkpoint(format!("cannot resume from a `{}` checkpoint", ck.method)));
            }
            ck.check_fingerprint(&fingerprint, true)?;
            state.restore_from(&ck)?;
            let stats = ck.stats.ok_or_else(|| Error::Checkpoint("missing normalization stats".into()))?;
            ctx = AugmentContext::new(stats, cfg.augment.clone());
            restore_bank(&ck, &mut ctx)?;
            start_epoch = ck.meta_u64("epoch")? as usize;
            journal = read_journal(&journal_path).unwrap_or_default();
            journal.retain(|r| r.epoch <= start_epoch);
        }
        None => {
            let stats = crate::dsp::compute_dataset_stats(clips.iter())?;
            ctx = AugmentContext::new(stats, cfg.augment.clone());
            start_epoch = 0;
            journal = Vec::new();
        }
    }

    let t = cfg.segment_frames;
    let silence = cfg.frontend.silence();
    let batch = cfg.train.batch_size.min(clips.len());
    let metric_set = {
        let mut r = substream(cfg.seed, METRIC_STREAM);
        let segs: Vec<_> = clips
            .iter()
            .take(METRIC_CLIPS)
            .map(|c| ctx.normalize(&crop_or_pad(c, t, silence, &mut r)))
            .collect();
        batch_tensor(&segs)?
    };
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut epoch = start_epoch;
    let end = match opts.stop_after {
        Some(n) => (start_epoch + n).min(cfg.train.epochs),
        None => cfg.train.epochs,
    };
    while epoch < end {
        let mut rng = substream(cfg.seed, epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for idx in order.chunks_exact(batch) {
            let batch_clips: Vec<_> = idx.iter().map(|&i| &clips[i]).collect();
            total += state.step_on_clips(&batch_clips, t, silence, &mut ctx, &mut rng)?;
            steps += 1;
        }
        epoch += 1;
        let emb = state.encoder_mut().forward(&metric_set, Mode::Eval, &mut seeded(0))?;
        let m = collapse_metrics(&emb);
        let row = JournalRow {
            epoch,
            step: state.steps_taken(),
            loss: total / steps as f64,
            mean_std: m.mean_std,
            effective_rank: m.effective_rank,
        };
        log::info!("epoch {} step {} loss {:.5} std {:.4} rank {:.2}", row.epoch, row.step, row.loss, row.mean_std, row.effective_rank);
        journal.push(row);
        write_journal(&journal_path, &journal)?;
        checkpoint_for(cfg, &state, &ctx, epoch).save(&ckpt_path)?;
    }
    if start_epoch == end && opts.resume.is_none() {
        write_journal(&journal_path, &journal)?;
        checkpoint_for(cfg, &state, &ctx, epoch).save(&ckpt_path)?;
    }
    Ok(PretrainSummary {
        state,
        stats: ctx.stats,
        journal,
        checkpoint: ckpt_path,
    })
}

/// Full training state at an epoch boundary.
pub fn checkpoint_for<S: Pretrainable>(cfg: &RunConfig, state: &S, ctx: &AugmentContext, epoch: usize) -> Checkpoint {
    let mut ck = Checkpoint::new(S::METHOD);
    ck.fingerprint = cfg.fingerprint();
    ck.stats = Some(ctx.stats);
    ck.config = serde_json::to_value(cfg).expect("config serializes");
    ck.meta.insert("epoch".into(), (epoch as u64).into());
    ck.meta.insert("bank_len".into(), (ctx.bank.len() as u64).into());
    state.write_into(&mut ck);
    for (i, seg) in ctx.bank.iter().enumerate() {
        ck.insert(
            format!("bank.{i:05}"),
            Tensor::from_vec(&[seg.n_mels(), seg.n_frames()], seg.data().to_vec()),
        );
    }
    ck
}

fn restore_bank(ck: &Checkpoint, ctx: &mut AugmentContext) -> Result<()> {
    let n = ck.meta_u64("bank_len")? as usize;
    ctx.bank.clear();
    for i in 0..n {
        let t = ck.require(&format!("bank.{i:05}"))?;
        let &[f, tt] = t.shape() else {
            return Err(Error::Checkpoint("bank entries must be 2-d".into()));
        };
        ctx.bank.push(LogMelSpectrogram::from_vec(f, tt, t.data().to_vec()))?;
    }
    Ok(())
}

pub fn write_journal(path: &Path, rows: &[JournalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::io(path, e.into())))
        .collect()
}
