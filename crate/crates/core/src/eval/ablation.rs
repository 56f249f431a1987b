use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::featurize::FrozenEncoder;
use super::probe::{evaluate_features, run_seeds, ProbeConfig};
use super::synth::{synth_dataset, SynthSpec};
use crate::augment::AugmentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::cola::{cola_augment, ColaState};
use crate::dsp::LogMelSpectrogram;
use crate::train::{pretrain_with, ByolState, PretrainOptions};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Byol,
    Cola,
}

/// One row of the ablation grid, applied on top of the base augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub name: String,
    #[serde(default)]
    pub method: Method,
    /// Per-view blocks joined by `+`: `mixup`, `gaussian`, `rrc`, or `none`.
    pub blocks: String,
    #[serde(default = "yes")]
    pub pre_norm: bool,
    /// Defaults to on for BYOL and to "some block enabled" for COLA.
    #[serde(default)]
    pub post_norm: Option<bool>,
    #[serde(default)]
    pub mixup_alpha: Option<f64>,
}

fn yes() -> bool {
    true
}

impl AblationConfig {
    pub fn new(name: &str, blocks: &str) -> Self {
        Self {
            name: name.to_string(),
            method: Method::Byol,
            blocks: blocks.to_string(),
            pre_norm: true,
            post_norm: None,
            mixup_alpha: None,
        }
    }

    pub fn cola(name: &str, blocks: &str) -> Self {
        Self {
            method: Method::Cola,
            ..Self::new(name, blocks)
        }
    }

    pub fn apply(&self, base: &AugmentConfig) -> Result<AugmentConfig> {
        let mut a = match self.method {
            Method::Byol => base.clone().with_blocks(&self.blocks)?,
            Method::Cola => cola_augment(base, &self.blocks)?,
        };
        a.pre_norm = self.pre_norm;
        if let Some(p) = self.post_norm {
            a.post_norm = p;
        }
        if let Some(alpha) = self.mixup_alpha {
            a.mixup.alpha = alpha;
        }
        a.validate()?;
        Ok(a)
    }
}

/// A labelled task given either as a manifest or as a synthetic spec that
/// is generated into the work directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSource {
    pub name: String,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

impl TaskSource {
    pub fn load(&self, work_dir: &Path, cfg: &RunConfig) -> Result<Dataset> {
        let manifest = match (&self.manifest, &self.synth) {
            (Some(m), None) => m.clone(),
            (None, Some(spec)) => synth_dataset(spec, &work_dir.join("tasks").join(&self.name))?,
            _ => {
                return Err(Error::Config(format!(
                    "task `{}`: give exactly one of `manifest` or `synth`",
                    self.name
                )))
            }
        };
        Dataset::from_manifest(&manifest, &cfg.frontend)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    #[serde(default)]
    pub base: RunConfig,
    pub configs: Vec<AblationConfig>,
    pub tasks: Vec<TaskSource>,
    /// Unlabelled pretraining data; the union of the task clips when empty.
    #[serde(default)]
    pub pretrain: Vec<TaskSource>,
    #[serde(default = "ten")]
    pub runs: usize,
    /// Config whose average defines zero degradation; the first if unset.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub probe: ProbeConfig,
}

fn ten() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub task: String,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Mean over tasks of `accuracy_mean` for this config.
    pub average: f64,
    /// `average` minus the reference config's average.
    pub degradation: f64,
}

/// Pretrains with `method` and freezes the resulting encoder.
pub fn pretrain_frozen(
    method: Method,
    cfg: &RunConfig,
    clips: &[LogMelSpectrogram],
    opts: &PretrainOptions,
) -> Result<FrozenEncoder> {
    Ok(match method {
        Method::Byol => {
            let s = pretrain_with::<ByolState>(cfg, clips, opts)?;
            FrozenEncoder::new(s.state.online.encoder, s.stats, cfg.clone())
        }
        Method::Cola => {
            let s = pretrain_with::<ColaState>(cfg, clips, opts)?;
            FrozenEncoder::new(s.state.net.encoder, s.stats, cfg.clone())
        }
    })
}

/// Pretrains once per config, evaluates every task with the linear
/// protocol, and reports per-task and average accuracy.
pub fn ablation_run(grid: &AblationGrid, work_dir: &Path) -> Result<Vec<AblationRow>> {
    if grid.configs.is_empty() || grid.tasks.is_empty() {
        return Err(Error::Config("ablation grid needs at least one config and one task".into()));
    }
    let mut names: Vec<&str> = grid.configs.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("ablation config names must be unique".into()));
    }
    let reference = grid.reference.clone().unwrap_or_else(|| grid.configs[0].name.clone());
    if !grid.configs.iter().any(|c| c.name == reference) {
        return Err(Error::Config(format!("reference config `{reference}` not in grid")));
    }
    let tasks: Vec<(String, Dataset)> = grid
        .tasks
        .iter()
        .map(|t| Ok((t.name.clone(), t.load(work_dir, &grid.base)?)))
        .collect::<Result<_>>()?;
    let pretrain_clips: Vec<_> = if grid.pretrain.is_empty() {
        tasks.iter().flat_map(|(_, d)| d.clips.iter().cloned()).collect()
    } else {
        let mut v = Vec::new();
        for p in &grid.pretrain {
            v.extend(p.load(work_dir, &grid.base)?.clips);
        }
        v
    };
    let seeds = run_seeds(grid.base.seed, grid.runs);
    let mut rows = Vec::new();
    for ac in &grid.configs {
        let mut cfg = grid.base.clone();
        cfg.augment = ac.apply(&grid.base.augment)?;
        let opts = PretrainOptions::in_dir(&work_dir.join("runs").join(&ac.name));
        let frozen = pretrain_frozen(ac.method, &cfg, &pretrain_clips, &opts)?;
        let mut per_task = Vec::new();
        for (name, ds) in &tasks {
            let feats = frozen.featurize(&ds.clips, cfg.segment_frames, cfg.seed)?;
            let r = evaluate_features(&feats, &ds.labels, ds.n_classes(), &seeds, &grid.probe)?;
            log::info!("{} / {}: {:.4} +- {:.4}", ac.name, name, r.mean, r.std);
            per_task.push((name.clone(), r));
        }
        let average = per_task.iter().map(|(_, r)| r.mean).sum::<f64>() / per_task.len() as f64;
        for (task, r) in per_task {
            rows.push(AblationRow {
                config: ac.name.clone(),
                task,
                accuracy_mean: r.mean,
                accuracy_std: r.std,
                average,
                degradation: 0.0,
            });
        }
    }
    let ref_avg = rows.iter().find(|r| r.config == reference).map(|r| r.average).unwrap();
    for r in &mut rows {
        r.degradation = if r.config == reference { 0.0 } else { r.average - ref_avg };
    }
    Ok(rows)
}

pub fn write_results(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<AblationRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::io(path, e.into())))
        .collect()
}
