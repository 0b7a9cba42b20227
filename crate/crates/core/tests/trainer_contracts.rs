use std::fs;

use acl_core::data::synth::{self, SynthConfig};
use acl_core::data::{load_dataset, Dataset};
use acl_core::net::{ModelParams, NetConfig, SaliencyNet};
use acl_core::trainer::{
    adam_step, train, OptimState, TrainConfig, TrainData, CHECKPOINT_DIR, LAST_GOOD_DIR, LOG_FILE,
};
use acl_core::{Error, Tensor};

fn dataset(seed: u64) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    synth::write_dataset(&SynthConfig::new(2, 6, 32, seed), dir.path()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    (dir, ds)
}

fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        base_lr: 1e-3,
        steps_per_epoch: 4,
        max_epochs: 2,
        video_len: 3,
        image_batch: 2,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn adam_matches_hand_computed_steps() {
    // f(a) = a^2 from 1.0 and f(b) = 3b from -2.0, lr 0.1
    let want = [
        (0.9000000005, -2.0999999996666667),
        (0.8004122286917927, -2.1999999993333326),
        (0.70158627294603, -2.2999999989999993),
    ];
    let mut a = Tensor::scalar(1.0);
    let mut b = Tensor::scalar(-2.0);
    let mut state = OptimState::new(&[1, 1]);
    for (wa, wb) in want {
        let ga = [2.0 * a.item()];
        let gb = [3.0];
        adam_step(
            &mut [("a", &mut a), ("b", &mut b)],
            &[Some(&ga), Some(&gb)],
            &mut state,
            0.1,
        )
        .unwrap();
        assert!((a.item() - wa).abs() < 1e-12, "{} vs {wa}", a.item());
        assert!((b.item() - wb).abs() < 1e-12, "{} vs {wb}", b.item());
    }
    assert_eq!(state.param_steps(0), 3);
}

#[test]
fn log_lines_are_key_value_pairs() {
    let (_d, ds) = dataset(1);
    let out = tempfile::tempdir().unwrap();
    let vids: Vec<_> = ds.videos.iter().collect();
    let net = SaliencyNet::new(NetConfig::tiny(), 0).unwrap();
    let data = TrainData {
        train: &vids,
        val: &[],
        statics: &vids,
    };
    let report = train(net, data, &small(0), Some(out.path())).unwrap();
    let log = fs::read_to_string(out.path().join(LOG_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), report.batches.len() + report.epochs.len());
    for line in &lines {
        let keys: Vec<&str> = line
            .split(' ')
            .filter_map(|t| t.split_once('=').map(|kv| kv.0))
            .collect();
        assert!(
            keys.starts_with(&["step", "epoch", "kind"]) || keys.starts_with(&["epoch", "kind"]),
            "{line}"
        );
    }
    assert!(
        lines[0].starts_with("step=1 epoch=0 kind=video lr=1e-3 "),
        "{}",
        lines[0]
    );
    assert!(lines[1].contains("kind=image"));
    assert!(lines[4].starts_with("epoch=0 kind=validation"));
    assert_eq!(report.epochs[1].lr, 1e-3);
    assert!(out.path().join(CHECKPOINT_DIR).is_dir());

    // a second run appends
    let net = SaliencyNet::new(NetConfig::tiny(), 0).unwrap();
    train(net, data, &small(0), Some(out.path())).unwrap();
    let again = fs::read_to_string(out.path().join(LOG_FILE)).unwrap();
    assert_eq!(again, format!("{log}{log}"));
}

#[test]
fn divergence_stops_and_keeps_last_good_parameters() {
    let (_d, ds) = dataset(2);
    let mut poisoned = ds.videos[1].clone();
    poisoned.frames[2] = poisoned.frames[2].map(|_| f64::NAN);
    let clean = &ds.videos[0];
    let vids = vec![clean, &poisoned];
    let out = tempfile::tempdir().unwrap();
    let net = SaliencyNet::new(NetConfig::tiny(), 0).unwrap();
    let cfg = TrainConfig {
        steps_per_epoch: 40,
        video_len: 6,
        image_batches: 0,
        ..small(3)
    };
    let err = train(
        net,
        TrainData {
            train: &vids,
            val: &[clean],
            statics: &[],
        },
        &cfg,
        Some(out.path()),
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    let (_, params) = ModelParams::load(out.path().join(LAST_GOOD_DIR)).unwrap();
    assert!(params.entries().iter().all(|(_, _, t)| t.all_finite()));
    let log = fs::read_to_string(out.path().join(LOG_FILE)).unwrap();
    assert!(log.lines().last().unwrap().contains("diverged"), "{log}");
}

#[test]
fn stalled_validation_stops_early() {
    let (_d, ds) = dataset(3);
    let vids: Vec<_> = ds.videos.iter().collect();
    // after the first epoch the rate is too small to move any parameter
    let cfg = TrainConfig {
        decay_factor: 1e300,
        decay_every: 1,
        max_epochs: 10,
        patience: 2,
        ..small(1)
    };
    let net = SaliencyNet::new(NetConfig::tiny(), 1).unwrap();
    let report = train(
        net,
        TrainData {
            train: &vids,
            val: &vids,
            statics: &vids,
        },
        &cfg,
        None,
    )
    .unwrap();
    assert!(report.stopped_early);
    assert_eq!(report.epochs.len(), 3);
    assert_eq!(report.best_epoch, 0);
    let losses: Vec<f64> = report.epochs.iter().map(|e| e.val_loss.unwrap()).collect();
    assert_eq!(losses[1], losses[2]);
}

#[test]
fn frozen_encoder_is_never_updated() {
    let (_d, ds) = dataset(4);
    let vids: Vec<_> = ds.videos.iter().collect();
    let net = SaliencyNet::new(NetConfig::tiny(), 2).unwrap();
    let before = net.params.encoder.clone();
    let cfg = TrainConfig {
        freeze_encoder: true,
        max_epochs: 1,
        ..small(2)
    };
    let report = train(
        net,
        TrainData {
            train: &vids,
            val: &vids,
            statics: &vids,
        },
        &cfg,
        None,
    )
    .unwrap();
    assert_eq!(report.best.params.encoder, before);
}
