use ndarray::Array2;

use super::*;
use crate::corpus::build_vocab;
use crate::corpus::synthetic::{Lexicon, LexiconSpec};
use crate::encoder::EncoderConfig;
use crate::numerics::FloatMode;

fn tiny_data() -> TrainData {
    let lex = Lexicon::generate(&LexiconSpec {
        words: 6,
        max_sentence_words: 4,
        ..LexiconSpec::default()
    });
    let train = lex.sentences(30, 0);
    let valid = lex.sentences(5, 1);
    let vocab = build_vocab(&train, 1);
    TrainData {
        train: vocab.encode_all(&train).0,
        valid: vocab.encode_all(&valid).0,
        vocab_size: vocab.len(),
    }
}

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::with_lr(5e-3);
    cfg.steps = 20;
    cfg.checkpoint_every = 10;
    cfg.warmup_steps = 4;
    cfg.char_budget = 60;
    cfg.max_seg_len = 3;
    cfg.encoder = EncoderConfig {
        d_model: 8,
        heads: 2,
        ff_size: 16,
        layers: 1,
        dropout_in: 0.1,
        dropout_layer: 0.15,
    };
    cfg
}

#[test]
fn missing_lr_is_named() {
    let err = TrainConfig::from_toml("steps = 10\n", &[]).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("lr"), "{text}");
}

#[test]
fn every_offending_field_is_listed() {
    let err = TrainConfig::from_toml("steps = 10\nwarmup_steps = 20\nclip_norm = -1.0\n[encoder]\nheads = 3\n", &[])
        .unwrap_err();
    let ConfigError::Invalid(errs) = err else { panic!("{err}") };
    for field in ["lr", "warmup_steps", "clip_norm", "heads"] {
        assert!(errs.iter().any(|e| e.contains(field)), "{field} missing from {errs:?}");
    }
}

#[test]
fn overrides_reach_nested_keys() {
    let cfg = TrainConfig::from_toml(
        "lr = 1e-3\nvariant = \"rslm\"\n",
        &[
            "encoder.d_model=64".into(),
            "max_seg_len=10".into(),
            "schedule=linear-decay".into(),
            "data.train=\"a.txt\"".into(),
        ],
    )
    .unwrap();
    assert_eq!(cfg.encoder.d_model, 64);
    assert_eq!(cfg.max_seg_len, 10);
    assert_eq!(cfg.schedule, Schedule::LinearDecay);
    assert_eq!(cfg.data.train.as_deref(), Some(std::path::Path::new("a.txt")));
    assert!(TrainConfig::from_toml("lr = 1e-3", &["novalue".into()]).is_err());
    assert!(TrainConfig::from_toml("lr = 1e-3\nbogus = 1", &[]).is_err());
}

#[test]
fn defaults_follow_the_published_setup() {
    let cfg = TrainConfig::from_toml("lr = 2e-3", &[]).unwrap();
    assert_eq!(cfg.steps, 8192);
    assert_eq!(cfg.checkpoint_every, 128);
    assert_eq!(cfg.char_budget, 8192);
    assert_eq!(cfg.clip_norm, 1.0);
    assert_eq!(cfg.warmup_steps, 1024);
    assert_eq!(cfg.sweep.seeds, vec![2, 3, 5, 8, 13]);
    assert_eq!(cfg.sweep.lrs, vec![6e-4, 7e-4, 8e-4, 9e-4, 1e-3, 2e-3]);
    let back = TrainConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn checkpoint_round_trip() {
    let data = tiny_data();
    for float in [FloatMode::F32, FloatMode::F64] {
        let mut cfg = tiny_config();
        cfg.float = float;
        cfg.steps = 3;
        cfg.warmup_steps = 1;
        cfg.checkpoint_every = 3;
        let out = train(&cfg, &data, RunOptions::default()).unwrap();
        let bytes = out.last.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, out.last);
        assert_eq!(back.float, float);
        assert_eq!(back.meta.step, 3);
    }
}

#[test]
fn checkpoint_rejects_garbage() {
    let data = tiny_data();
    let mut cfg = tiny_config();
    cfg.steps = 2;
    cfg.warmup_steps = 1;
    let bytes = train(&cfg, &data, RunOptions::default()).unwrap().last.encode();
    assert!(Checkpoint::decode(b"").is_err());
    assert!(Checkpoint::decode(b"slm-checkpoint v2 f64\n2\n{}").is_err());
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut extended = bytes.clone();
    extended.push(0);
    assert!(Checkpoint::decode(&extended).is_err());
    let ckpt = Checkpoint::decode(&bytes).unwrap();
    assert!(matches!(ckpt.params_as::<f32>(), Err(CheckpointError::FloatMode { .. })));
}

#[test]
fn identical_runs_give_identical_logs() {
    let data = tiny_data();
    let cfg = tiny_config();
    let a = train(&cfg, &data, RunOptions::default()).unwrap();
    let b = train(&cfg, &data, RunOptions::default()).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.step_losses, b.step_losses);
    assert_eq!(a.last, b.last);
    assert_eq!(a.records.len(), 2);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = tiny_data();
    let cfg = tiny_config();
    let full = train(&cfg, &data, RunOptions::default()).unwrap();
    let half = train(
        &cfg,
        &data,
        RunOptions {
            stop_after: Some(10),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let resumed = train(
        &cfg,
        &data,
        RunOptions {
            resume: Some(Checkpoint::decode(&half.last.encode()).unwrap()),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(resumed.step_losses.len(), 10);
    for (r, f) in resumed.step_losses.iter().zip(&full.step_losses[10..]) {
        assert_eq!(r.0, f.0);
        assert!((r.1 - f.1).abs() <= 1e-6);
    }
    assert_eq!(resumed.records.last(), full.records.last());
}

#[test]
fn non_finite_loss_names_the_batch() {
    let data = tiny_data();
    let cfg = tiny_config();
    let table = Array2::from_elem((data.vocab_size, cfg.encoder.d_model), f64::NAN);
    let err = train(
        &cfg,
        &data,
        RunOptions {
            init_embeddings: Some(table),
            ..RunOptions::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { step: 1, batch: 0, .. }), "{err}");
}

#[test]
fn files_are_written() {
    let data = tiny_data();
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let out = train(
        &cfg,
        &data,
        RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        },
    )
    .unwrap();
    for f in ["metrics.jsonl", "last.ckpt", "best-mcc.ckpt", "best-bpc.ckpt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let parsed: Vec<MetricRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, out.records);
    let last = Checkpoint::load(&dir.path().join("last.ckpt")).unwrap();
    let model = model_from_checkpoint::<f64>(&last).unwrap();
    assert_eq!(model.params().values(), &last.params_as::<f64>().unwrap()[..]);
}
