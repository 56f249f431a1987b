//! Audio frontend: WAV ingestion, log-mel features, cropping and dataset
//! statistics.

mod manifest;
mod mel;
mod spectrogram;
mod stats;
mod wav;

pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use mel::{compute_logmel, hz_to_mel, mel_to_hz, FrontendConfig, MelFilterbank};
pub use spectrogram::{crop_or_pad, LogMelSpectrogram};
pub use stats::{compute_dataset_stats, NormStats, StatsAccumulator, STD_FLOOR};
pub use wav::{load_wav, write_wav_i16, Waveform, SAMPLE_RATE};
