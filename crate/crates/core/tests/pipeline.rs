use std::path::Path;
use std::process::Command;

use byola::cola::ColaState;
use byola::data::Dataset;
use byola::eval::{evaluate_features, run_seeds, synth_dataset, FrozenEncoder, ProbeConfig, SynthKind, SynthSpec};
use byola::io::{read_features, write_features, Checkpoint, RunConfig};
use byola::nn::{EncoderConfig, HeadConfig};
use byola::train::{pretrain, pretrain_with, read_journal, PretrainOptions};

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.segment_frames = 32;
    cfg.encoder = EncoderConfig {
        d: 16,
        conv_channels: 4,
        ..EncoderConfig::default()
    };
    cfg.head = HeadConfig { hidden: 32, out: 16 };
    cfg.augment.mixup.bank_capacity = 16;
    cfg.train.batch_size = 8;
    cfg.train.epochs = 3;
    cfg
}

fn tiny_dataset(dir: &Path) -> Dataset {
    let spec = SynthSpec {
        kind: SynthKind::Tones,
        n_clips: 24,
        clip_seconds: 0.5,
        ..SynthSpec::default()
    };
    let m = synth_dataset(&spec, dir).unwrap();
    Dataset::from_manifest(&m, &RunConfig::default().frontend).unwrap()
}

#[test]
fn pretraining_is_deterministic_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(&dir.path().join("data"));
    let cfg = tiny_config();
    let a = pretrain(&cfg, &ds.clips, &PretrainOptions::in_dir(&dir.path().join("a"))).unwrap();
    let b = pretrain(&cfg, &ds.clips, &PretrainOptions::in_dir(&dir.path().join("b"))).unwrap();
    assert_eq!(a.journal.len(), 3);
    assert_eq!(a.journal, b.journal);
    assert_eq!(read_journal(&dir.path().join("a/journal.csv")).unwrap(), a.journal);
    let bytes = std::fs::read(&a.checkpoint).unwrap();
    assert_eq!(bytes, std::fs::read(&b.checkpoint).unwrap());
    let ck = Checkpoint::load(&a.checkpoint).unwrap();
    assert_eq!(ck.method, "byol");
    assert_eq!(ck.to_bytes(), bytes);
    ck.check_fingerprint(&cfg.fingerprint(), true).unwrap();
    let mut other = cfg.clone();
    other.seed = 1;
    assert!(ck.check_fingerprint(&other.fingerprint(), true).is_err());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(&dir.path().join("data"));
    let cfg = tiny_config();
    let full = pretrain(&cfg, &ds.clips, &PretrainOptions::in_dir(&dir.path().join("full"))).unwrap();

    let part_dir = dir.path().join("part");
    let first = PretrainOptions {
        stop_after: Some(1),
        ..PretrainOptions::in_dir(&part_dir)
    };
    let head = pretrain(&cfg, &ds.clips, &first).unwrap();
    assert_eq!(head.journal.len(), 1);
    let rest = PretrainOptions {
        resume: Some(head.checkpoint.clone()),
        ..PretrainOptions::in_dir(&part_dir)
    };
    let resumed = pretrain(&cfg, &ds.clips, &rest).unwrap();
    assert_eq!(resumed.journal, full.journal);
    assert_eq!(std::fs::read(&resumed.checkpoint).unwrap(), std::fs::read(&full.checkpoint).unwrap());

    let mut changed = cfg.clone();
    changed.train.lr *= 2.0;
    assert!(pretrain(&changed, &ds.clips, &rest).is_err());
}

#[test]
fn zero_epochs_still_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(&dir.path().join("data"));
    let mut cfg = tiny_config();
    cfg.train.epochs = 0;
    let s = pretrain(&cfg, &ds.clips, &PretrainOptions::in_dir(&dir.path().join("run"))).unwrap();
    assert!(s.journal.is_empty());
    let frozen = FrozenEncoder::from_checkpoint(&Checkpoint::load(&s.checkpoint).unwrap()).unwrap();
    let random = FrozenEncoder::random(&cfg, s.stats, cfg.seed);
    let a = frozen.featurize(&ds.clips, 32, 0).unwrap();
    assert_eq!(a, random.featurize(&ds.clips, 32, 0).unwrap());
}

#[test]
fn features_survive_the_file_format_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(&dir.path().join("data"));
    let cfg = tiny_config();
    let s = pretrain(&cfg, &ds.clips, &PretrainOptions::in_dir(&dir.path().join("run"))).unwrap();
    let frozen = FrozenEncoder::from_checkpoint(&Checkpoint::load(&s.checkpoint).unwrap()).unwrap();
    let live = FrozenEncoder::new(s.state.online.encoder.clone(), s.stats, cfg.clone());
    let feats = frozen.featurize(&ds.clips, 32, 0).unwrap();
    assert_eq!(feats, live.featurize(&ds.clips, 32, 0).unwrap());
    let path = dir.path().join("feats.byla");
    write_features(&path, &feats, &ds.labels, &ds.label_names, &cfg.fingerprint()).unwrap();
    let (x, y, names) = read_features(&path).unwrap();
    assert_eq!((&x, &y, &names), (&feats, &ds.labels, &ds.label_names));
    let r = evaluate_features(&x, &y, names.len(), &run_seeds(0, 2), &ProbeConfig::default()).unwrap();
    assert_eq!(r.accuracies.len(), 2);
    assert!(r.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
}

#[test]
fn contrastive_pretraining_uses_the_same_plumbing() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(&dir.path().join("data"));
    let mut cfg = tiny_config();
    cfg.augment = byola::cola::cola_augment(&cfg.augment, "mixup").unwrap();
    let run = |name: &str| pretrain_with::<ColaState>(&cfg, &ds.clips, &PretrainOptions::in_dir(&dir.path().join(name))).unwrap();
    let a = run("a");
    assert_eq!(a.journal, run("b").journal);
    let ck = Checkpoint::load(&a.checkpoint).unwrap();
    assert_eq!(ck.method, "cola");
    let frozen = FrozenEncoder::from_checkpoint(&ck).unwrap();
    assert_eq!(frozen.featurize(&ds.clips, 32, 0).unwrap().shape(), &[24, 16]);
    // A BYOL run cannot resume from a contrastive checkpoint.
    let opts = PretrainOptions {
        resume: Some(a.checkpoint.clone()),
        ..PretrainOptions::in_dir(&dir.path().join("c"))
    };
    assert!(pretrain(&cfg, &ds.clips, &opts).is_err());
}

fn byola(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_byola"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn command_line_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();

    let out = byola(&["synth", "--kind", "tones", "--out", &p("data"), "--clips", "24", "--seconds", "0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut cfg = tiny_config();
    cfg.manifest = Some(dir.path().join("data/manifest.csv"));
    cfg.train.epochs = 1;
    std::fs::write(p("cfg.json"), cfg.to_json_pretty()).unwrap();

    let out = byola(&["pretrain", "--config", &p("cfg.json"), "--out", &p("run/model.byla")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/model.journal.csv").exists());

    let manifest = p("data/manifest.csv");
    let out = byola(&["featurize", "--ckpt", &p("run/model.byla"), "--manifest", &manifest, "--out", &p("f.byla")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = byola(&["probe", "--features", &p("f.byla"), "--runs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["accuracies"].as_array().unwrap().len(), 2);

    let out = byola(&["cola-pretrain", "--config", &p("cfg.json"), "--aug", "mixup+rrc", "--out", &p("cola.byla")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(Checkpoint::load(&dir.path().join("cola.byla")).unwrap().method, "cola");

    let wav = p("data/class00_00000.wav");
    let out = byola(&["augment-preview", "--wav", &wav, "--seed", "3", "--out", &p("preview")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let view = std::fs::read_to_string(dir.path().join("preview/view1.csv")).unwrap();
    assert_eq!(view.lines().count(), 64);

    let out = byola(&["param-count", "--dim", "2048"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "5321856");
}

#[test]
fn command_line_errors_are_one_parseable_line() {
    let out = byola(&["featurize", "--ckpt", "/no/such/model.byla", "--manifest", "m.csv", "--out", "f.byla"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<_> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error: io: "), "{err}");
    assert!(lines[0].contains("/no/such/model.byla"), "{err}");

    let out = byola(&["pretrain", "--config", "x.json", "--out", "y", "--frobnicate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: usage: "), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"train": {"learning_rate": 1}}"#).unwrap();
    let out = byola(&["pretrain", "--config", bad.to_str().unwrap(), "--out", "y.byla"]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: config: "));
}
