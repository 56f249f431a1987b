//! BYOL pretraining: online/target networks, symmetric loss, EMA target
//! updates, the epoch loop with journal and checkpoints, and collapse
//! diagnostics.

mod metrics;
mod pretrain;
mod state;

pub use metrics::{collapse_metrics, CollapseMetrics};
pub use pretrain::{checkpoint_for, pretrain, pretrain_with, read_journal, write_journal, JournalRow, PretrainOptions, PretrainSummary, Pretrainable, CHECKPOINT_FILE, JOURNAL_FILE};
pub use state::{byol_grad_check, ema_lerp, ByolState, OnlineNetwork, TargetNetwork};
