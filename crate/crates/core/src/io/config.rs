use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::dsp::FrontendConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, EncoderConfig, HeadConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Target EMA decay.
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            batch_size: 256,
            epochs: 100,
            tau: 0.99,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Everything that determines a pretraining run. Defaults reproduce the
/// reference setup; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Pretraining clips; relative paths resolve against the working
    /// directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Segment length in frames fed to the encoder.
    pub segment_frames: usize,
    pub frontend: FrontendConfig,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    /// Shared by the projector and the predictor.
    pub head: HeadConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            manifest: None,
            segment_frames: 96,
            frontend: FrontendConfig::default(),
            augment: AugmentConfig::default(),
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.augment.validate()?;
        self.encoder.validate()?;
        if self.encoder.n_mels != self.frontend.n_mels {
            return Err(Error::Config(format!(
                "encoder.n_mels {} differs from frontend.n_mels {}",
                self.encoder.n_mels, self.frontend.n_mels
            )));
        }
        let k = self.encoder.downsample();
        if self.segment_frames == 0 || self.segment_frames % k != 0 {
            return Err(Error::Config(format!(
                "segment_frames {} must be a positive multiple of {k}",
                self.segment_frames
            )));
        }
        if self.head.hidden == 0 || self.head.out == 0 {
            return Err(Error::Config("head sizes must be positive".into()));
        }
        let t = &self.train;
        if t.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&t.tau) {
            return Err(Error::Config("train.tau must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return Err(Error::Config("train: need beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.train.lr, 3e-4);
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.train.tau, 0.99);
        assert_eq!(c.encoder.d, 2048);
        assert_eq!(c.head.hidden, 4096);
        assert_eq!(c.head.out, 256);
        assert_eq!(c.segment_frames, 96);
        assert_eq!(c.augment.mixup.alpha, 0.4);
        assert_eq!(c.augment.mixup.bank_capacity, 2048);
        assert_eq!(c.augment.rrc.freq_scale, [0.6, 1.5]);
        assert_eq!(c.frontend.n_mels, 64);
        c.validate().unwrap();
    }

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_json(r#"{"train": {"learning_rate": 0.1}}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epochs": 0}}"#).is_ok());
    }

    #[test]
    fn round_trips_and_fingerprint_tracks_content() {
        let mut c = RunConfig::default();
        c.train.epochs = 3;
        let back = RunConfig::from_json(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
        assert_eq!(c.fingerprint().len(), 64);
        assert_ne!(c.fingerprint(), RunConfig::default().fingerprint());
        c.manifest = Some("data/manifest.csv".into());
        assert_eq!(RunConfig::from_json(&c.to_json_pretty()).unwrap(), c);
    }

    #[test]
    fn invalid_values_rejected() {
        for json in [
            r#"{"segment_frames": 90}"#,
            r#"{"train": {"batch_size": 1}}"#,
            r#"{"train": {"tau": 1.5}}"#,
            r#"{"train": {"lr": 0}}"#,
            r#"{"encoder": {"n_mels": 32}}"#,
        ] {
            assert!(RunConfig::from_json(json).is_err(), "{json}");
        }
    }
}
