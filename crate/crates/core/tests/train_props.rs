mod common;

use common::toy_config;
use wpad::data::synth_dataset;
use wpad::model::{Model, SkipMode};
use wpad::nn::Network;
use wpad::train::{feature_set, fit, train, LabeledSet, TrainConfig, TrainError};

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        image_size: (16, 16),
        ..TrainConfig::default()
    }
}

fn toy_model(cfg: &TrainConfig) -> Model {
    Model::build(
        toy_config(cfg.feature_shape(), SkipMode::SingleLayer),
        cfg.seed,
    )
    .unwrap()
}

fn sets(cfg: &TrainConfig) -> (LabeledSet, LabeledSet) {
    let ds = synth_dataset(8, cfg.image_size, 3).unwrap();
    (
        feature_set(&ds, &ds.splits.train, cfg).unwrap(),
        feature_set(&ds, &ds.splits.val, cfg).unwrap(),
    )
}

#[test]
fn zero_learning_rate_is_a_null_update() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small_cfg(1)
    };
    let model = toy_model(&cfg);
    let (tr, va) = sets(&cfg);
    let out = fit(model.clone(), &tr, &va, &cfg).unwrap();
    for (a, b) in model.params().iter().zip(out.model.params()) {
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn same_seed_same_losses() {
    let cfg = small_cfg(3);
    let (tr, va) = sets(&cfg);
    let a = fit(toy_model(&cfg), &tr, &va, &cfg).unwrap();
    let b = fit(toy_model(&cfg), &tr, &va, &cfg).unwrap();
    let bits = |l: Vec<f64>| l.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(a.log.losses()), bits(b.log.losses()));
    assert_eq!(a.model, b.model);

    let other = TrainConfig {
        seed: 8,
        ..cfg.clone()
    };
    let c = fit(toy_model(&cfg), &tr, &va, &other).unwrap();
    assert_ne!(bits(a.log.losses()), bits(c.log.losses()));
}

#[test]
fn loss_falls_and_stays_finite_over_fifty_epochs() {
    let cfg = small_cfg(50);
    let (tr, va) = sets(&cfg);
    let out = fit(toy_model(&cfg), &tr, &va, &cfg).unwrap();
    let losses = out.log.losses();
    assert_eq!(losses.len(), 50);
    assert!(losses[49] < losses[0], "{} vs {}", losses[49], losses[0]);
    assert!(out.model.params().iter().all(|p| p.is_finite()));
    let times: Vec<f64> = out.log.records.iter().map(|r| r.wall_time_s).collect();
    assert!(times.windows(2).all(|w| w[1] >= w[0]));
    assert!(out.log.records.iter().all(|r| r.val_accuracy.is_some()));
}

#[test]
fn nan_input_aborts_with_batch_index() {
    let cfg = small_cfg(2);
    let (mut tr, va) = sets(&cfg);
    for t in tr.features.iter_mut() {
        t.data_mut()[0] = f64::NAN;
    }
    match fit(toy_model(&cfg), &tr, &va, &cfg) {
        Err(e @ TrainError::NonFiniteLoss { epoch: 1, batch: 0 }) => {
            assert!(e.is_numeric());
            assert!(e.to_string().contains("batch 0"));
        }
        other => panic!("expected a numeric abort, got {other:?}"),
    }
}

#[test]
fn empty_splits_are_errors() {
    let cfg = small_cfg(1);
    let (tr, _) = sets(&cfg);
    let empty = LabeledSet::default();
    assert!(matches!(
        fit(toy_model(&cfg), &tr, &empty, &cfg),
        Err(TrainError::EmptySplit(_))
    ));
    assert!(matches!(
        fit(toy_model(&cfg), &empty, &tr, &cfg),
        Err(TrainError::EmptySplit(_))
    ));

    let mut ds = synth_dataset(2, (16, 16), 0).unwrap();
    ds.split_stratified(1.0, 0.0, 0);
    assert!(matches!(
        train(toy_model(&cfg), &ds, &cfg),
        Err(TrainError::EmptySplit(_))
    ));
}

#[test]
fn mismatched_model_is_rejected() {
    let cfg = small_cfg(1);
    let ds = synth_dataset(4, (16, 16), 0).unwrap();
    let wrong = Model::build(toy_config((1, 8, 8), SkipMode::SingleLayer), 0).unwrap();
    assert!(matches!(
        train(wrong, &ds, &cfg),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn log_csv_layout() {
    let cfg = TrainConfig {
        eval_every: 2,
        ..small_cfg(3)
    };
    let (tr, va) = sets(&cfg);
    let csv = fit(toy_model(&cfg), &tr, &va, &cfg).unwrap().log.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_acc,val_acc,wall_time_s");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1].split(',').nth(3), Some(""));
    assert_ne!(lines[2].split(',').nth(3), Some(""));
    assert_ne!(lines[3].split(',').nth(3), Some(""));
}
