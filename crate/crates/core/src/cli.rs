//! Command-line entry points. Every failure ends in a single
//! `error: <kind>: <message>` line on stderr and a nonzero exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::augment::{make_views, AugmentContext};
use crate::cola::cola_augment;
use crate::data::Dataset;
use crate::dsp::{compute_dataset_stats, compute_logmel, crop_or_pad, load_wav, LogMelSpectrogram};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_run, evaluate_features, pretrain_frozen, run_seeds, synth_dataset, write_results, AblationGrid,
    FrozenEncoder, Method, ProbeConfig, SynthKind, SynthSpec,
};
use crate::io::{read_features, write_features, Checkpoint, RunConfig};
use crate::nn::gradcheck::GradCheckConfig;
use crate::nn::{count_params, Encoder, EncoderConfig};
use crate::rng::substream;
use crate::train::{byol_grad_check, PretrainOptions};

#[derive(Debug, Parser)]
#[command(name = "byola", version, about = "Self-supervised audio representations: pretraining, featurization and linear evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain with bootstrapped latents; writes a checkpoint and a journal next to it.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `manifest` in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Pretrain the contrastive baseline.
    ColaPretrain {
        #[arg(long)]
        config: PathBuf,
        /// `none`, `mixup`, `mixup+rrc` or `gaussian`.
        #[arg(long, default_value = "none")]
        aug: String,
        #[arg(long, default_value = "cola.byla")]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Embed every clip of a manifest with a frozen encoder.
    Featurize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Segment length in frames; the checkpoint's setting by default.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Linear evaluation of a feature file; prints one JSON line.
    Probe {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an ablation grid and write per-task results as CSV.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "ablation")]
        work_dir: PathBuf,
        /// Defaults to `<work-dir>/results.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the log-mel input and two augmented views of one clip as CSV.
    AugmentPreview {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient check of the training objectives.
    GradCheck {
        #[arg(long, default_value = "toy")]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Learnable parameter count of the encoder.
    ParamCount {
        #[arg(long)]
        dim: usize,
    },
    /// Generate a labelled synthetic dataset with a manifest.
    Synth {
        #[arg(long, default_value = "tones")]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 300)]
        clips: usize,
        #[arg(long, default_value_t = 1.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn emit(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn load_config(path: &Path, manifest: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if manifest.is_some() {
        cfg.manifest = manifest;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pretrain_clips(cfg: &RunConfig) -> Result<Vec<LogMelSpectrogram>> {
    let manifest = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no manifest: set `manifest` in the config or pass --manifest".into()))?;
    Ok(Dataset::from_manifest(manifest, &cfg.frontend)?.clips)
}

fn run_pretrain(method: Method, cfg: &RunConfig, out: &Path, resume: Option<PathBuf>, w: &mut dyn Write) -> Result<()> {
    let clips = pretrain_clips(cfg)?;
    let opts = PretrainOptions {
        resume,
        ..PretrainOptions::for_checkpoint(out)
    };
    let frozen = pretrain_frozen(method, cfg, &clips, &opts)?;
    emit(
        w,
        json!({
            "checkpoint": out,
            "journal": opts.journal,
            "clips": clips.len(),
            "dim": frozen.dim(),
        }),
    )
}

fn execute(cmd: Command, w: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Pretrain {
            config,
            out,
            manifest,
            seed,
            resume,
        } => {
            let cfg = load_config(&config, manifest, seed)?;
            run_pretrain(Method::Byol, &cfg, &out, resume, w)
        }
        Command::ColaPretrain {
            config,
            aug,
            out,
            manifest,
            seed,
            resume,
        } => {
            let mut cfg = load_config(&config, manifest, seed)?;
            cfg.augment = cola_augment(&cfg.augment, &aug)?;
            cfg.validate()?;
            run_pretrain(Method::Cola, &cfg, &out, resume, w)
        }
        Command::Featurize {
            ckpt,
            manifest,
            out,
            frames,
            seed,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let frozen = FrozenEncoder::from_checkpoint(&ck)?;
            let ds = Dataset::from_manifest(&manifest, &frozen.config.frontend)?;
            let t = frames.unwrap_or(frozen.config.segment_frames);
            let feats = frozen.featurize(&ds.clips, t, seed)?;
            write_features(&out, &feats, &ds.labels, &ds.label_names, &ck.fingerprint)?;
            emit(w, json!({"features": out, "rows": feats.shape()[0], "dim": feats.shape()[1]}))
        }
        Command::Probe { features, runs, seed } => {
            if runs == 0 {
                return Err(Error::InvalidInput("--runs must be positive".into()));
            }
            let (x, labels, names) = read_features(&features)?;
            let r = evaluate_features(&x, &labels, names.len(), &run_seeds(seed, runs), &ProbeConfig::default())?;
            emit(w, json!({"mean": r.mean, "std": r.std, "accuracies": r.accuracies}))
        }
        Command::Ablate { grid, work_dir, out } => {
            let text = std::fs::read_to_string(&grid).map_err(|e| Error::io(&grid, e))?;
            let g: AblationGrid = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let rows = ablation_run(&g, &work_dir)?;
            let out = out.unwrap_or_else(|| work_dir.join("results.csv"));
            write_results(&out, &rows)?;
            for r in &rows {
                emit(
                    w,
                    format_args!(
                        "{}\t{}\t{:.4}\t{:.4}\tavg {:.4}\tdelta {:+.4}",
                        r.config, r.task, r.accuracy_mean, r.accuracy_std, r.average, r.degradation
                    ),
                )?;
            }
            Ok(())
        }
        Command::AugmentPreview { wav, seed, out, config } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let logmel = compute_logmel(&load_wav(&wav)?, &cfg.frontend)?;
            let stats = compute_dataset_stats(std::iter::once(&logmel))?;
            let mut ctx = AugmentContext::new(stats, cfg.augment.clone());
            let mut rng = substream(seed, 0);
            let seg = crop_or_pad(&logmel, cfg.segment_frames, cfg.frontend.silence(), &mut rng);
            let views = make_views(&seg, &mut ctx, &mut rng)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for (name, s) in [("input", &seg), ("view1", &views.v), ("view2", &views.v_prime)] {
                write_matrix_csv(&out.join(format!("{name}.csv")), s)?;
            }
            emit(w, json!({"out": out, "n_mels": seg.n_mels(), "n_frames": seg.n_frames()}))
        }
        Command::GradCheck { size, seed } => {
            if size != "toy" {
                return Err(Error::InvalidInput(format!("unknown size `{size}`; only `toy` is supported")));
            }
            let cfg = GradCheckConfig {
                seed,
                ..GradCheckConfig::default()
            };
            let byol = byol_grad_check(seed, &cfg);
            let cola = crate::cola::cola_grad_check(seed, &cfg);
            for (name, r) in [("byol", &byol), ("cola", &cola)] {
                emit(
                    w,
                    json!({"objective": name, "checked": r.checked, "skipped": r.skipped, "max_rel_err": r.max_rel_err, "passed": r.passed()}),
                )?;
            }
            if byol.passed() && cola.passed() {
                Ok(())
            } else {
                let worst = byol.max_rel_err.max(cola.max_rel_err);
                Err(Error::NonFinite(format!(
                    "gradient check failed: max relative error {worst:.3e} exceeds {:.0e}",
                    cfg.tolerance
                )))
            }
        }
        Command::ParamCount { dim } => {
            if ![512, 1024, 2048].contains(&dim) {
                return Err(Error::InvalidInput(format!("--dim must be 512, 1024 or 2048, got {dim}")));
            }
            let enc = Encoder::new(&EncoderConfig::with_dim(dim), &mut substream(0, 0));
            emit(w, count_params(&enc))
        }
        Command::Synth {
            kind,
            out,
            classes,
            clips,
            seconds,
            seed,
        } => {
            let spec = SynthSpec {
                kind: kind.parse::<SynthKind>()?,
                n_classes: classes,
                n_clips: clips,
                clip_seconds: seconds,
                seed,
                ..SynthSpec::default()
            };
            let manifest = synth_dataset(&spec, &out)?;
            emit(w, json!({"manifest": manifest, "clips": clips, "classes": classes}))
        }
    }
}

fn write_matrix_csv(path: &Path, s: &LogMelSpectrogram) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for m in 0..s.n_mels() {
        let row: Vec<String> = (0..s.n_frames()).map(|t| s.get(m, t).to_string()).collect();
        wtr.write_record(&row).map_err(|e| Error::io(path, e.into()))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run(std::iter::once("byola").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn param_count_prints_reference_sizes() {
        for (d, n) in [(512, 600192), (1024, 1649792), (2048, 5321856)] {
            let (code, out) = run_capture(&["param-count", "--dim", &d.to_string()]);
            assert_eq!(code, 0);
            assert_eq!(out.trim(), n.to_string());
        }
        assert_ne!(run_capture(&["param-count", "--dim", "100"]).0, 0);
    }

    #[test]
    fn unknown_flags_and_missing_files_fail() {
        assert_eq!(run_capture(&["param-count", "--dim", "512", "--bogus"]).0, 2);
        assert_eq!(run_capture(&["nope"]).0, 2);
        let (code, _) = run_capture(&["probe", "--features", "/definitely/missing.byla"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn grad_check_toy_passes() {
        let (code, out) = run_capture(&["grad-check", "--size", "toy"]);
        assert_eq!(code, 0, "{out}");
        assert_eq!(out.lines().count(), 2);
        assert_ne!(run_capture(&["grad-check", "--size", "huge"]).0, 0);
    }
}
