//! Frozen-encoder featurization, the linear evaluation protocol, synthetic
//! tasks and the augmentation ablation runner.

mod ablation;
mod featurize;
mod probe;
pub mod synth;

pub use ablation::{
    ablation_run, pretrain_frozen, read_results, write_results, AblationConfig, AblationGrid, AblationRow, Method, TaskSource,
};
pub use featurize::FrozenEncoder;
pub use probe::{
    evaluate_features, run_seeds, stratified_split, train_probe, LinearProbe, ProbeConfig, ProbeOutcome, Split, TaskResult,
};
pub use synth::{synth_dataset, SynthKind, SynthSpec};
