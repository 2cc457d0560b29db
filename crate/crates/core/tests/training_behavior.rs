use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qudit_qnn::baselines::{split_macro_f1, train_logreg, LogRegConfig};
use qudit_qnn::data::{seeded_stream, streams, Dataset, Split};
use qudit_qnn::generators::build_generators;
use qudit_qnn::qnn::{predict, ModelParams, Readout};
use qudit_qnn::training::{
    balanced_class_weights, samples, total_loss, train, LossConfig, QnnArchitecture, TrainConfig,
};

/// Points in `[0, 1]²` labelled by `x0 + x1 > 1`, with a 0.3 margin.
///
/// At d = 2 the parity readout satisfies p(x) = p(−x) (conjugation by σz
/// flips both feature generators), so the classes sit in one quadrant.
fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    while labels.len() < n {
        let a: f64 = rng.random_range(0.0..1.0);
        let b: f64 = rng.random_range(0.0..1.0);
        if (a + b - 1.0).abs() < 0.3 {
            continue;
        }
        feats.extend([a, b]);
        labels.push(u8::from(a + b > 1.0));
    }
    let tags = (0..n)
        .map(|i| match i % 5 {
            0..=2 => Split::Train,
            3 => Split::Validation,
            _ => Split::Test,
        })
        .collect();
    Dataset::new(feats, labels, vec!["a".into(), "b".into()])
        .unwrap()
        .with_splits(tags)
        .unwrap()
}

fn arch() -> QnnArchitecture {
    QnnArchitecture {
        dim: 2,
        layers: 2,
        readout: Readout::Parity,
    }
}

fn loss_cfg(ds: &Dataset, ridge: f64) -> LossConfig {
    let train_rows = ds.indices(Split::Train).unwrap();
    LossConfig {
        readout: Readout::Parity,
        class_weights: balanced_class_weights(train_rows.iter().map(|&i| ds.label(i))),
        ridge,
    }
}

#[test]
fn learns_separable_toy_set() {
    let ds = separable(300, 1);
    let gs = build_generators(2).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 32,
        max_epochs: 200,
        patience: 200,
        ..TrainConfig::default()
    };
    let (params, history) = train(&ds, &cfg, arch(), &gs).unwrap();
    assert!(history.stopped_epoch <= 200);
    let f1 = split_macro_f1(&ds, Split::Validation, |x| predict(x, &params, &gs).unwrap()).unwrap();
    assert!(f1 >= 0.95, "validation macro-F1 {f1}");

    let lr = train_logreg(&ds, &LogRegConfig::default()).unwrap();
    let lr_f1 = split_macro_f1(&ds, Split::Validation, |x| lr.predict(x)).unwrap();
    assert_eq!(lr_f1, 1.0);
}

#[test]
fn zero_epochs_returns_initialization() {
    let ds = separable(50, 2);
    let gs = build_generators(2).unwrap();
    let cfg = TrainConfig {
        max_epochs: 0,
        seed: 17,
        ..TrainConfig::default()
    };
    let (params, history) = train(&ds, &cfg, arch(), &gs).unwrap();
    assert!(history.epochs.is_empty());
    assert_eq!(history.stopped_epoch, 0);
    let mut rng = seeded_stream(17, streams::INIT);
    let expected = ModelParams::random_uniform(2, 2, 2, Readout::Parity, 0.1, &mut rng).unwrap();
    assert_eq!(params, expected);
}

#[test]
fn infinite_min_delta_stops_one_epoch_after_first() {
    let ds = separable(50, 3);
    let gs = build_generators(2).unwrap();
    let cfg = TrainConfig {
        patience: 1,
        min_delta: f64::INFINITY,
        ..TrainConfig::default()
    };
    let (_, history) = train(&ds, &cfg, arch(), &gs).unwrap();
    assert_eq!(history.stopped_epoch, 2);
    assert_eq!(history.epochs.len(), 2);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let ds = separable(120, 4);
    let gs = build_generators(2).unwrap();
    let cfg = TrainConfig {
        max_epochs: 15,
        batch_size: 16,
        seed: 5,
        ..TrainConfig::default()
    };
    let (a, ha) = train(&ds, &cfg, arch(), &gs).unwrap();
    let (b, hb) = train(&ds, &cfg, arch(), &gs).unwrap();
    let bits = |p: &ModelParams| p.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let hist_bits = |h: &qudit_qnn::training::TrainHistory| {
        h.epochs
            .iter()
            .map(|e| (e.train_loss.to_bits(), e.val_loss.to_bits(), e.val_macro_f1.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(hist_bits(&ha), hist_bits(&hb));
    assert_eq!((ha.stopped_epoch, ha.best_epoch), (hb.stopped_epoch, hb.best_epoch));
}

#[test]
fn heavy_ridge_keeps_weights_small() {
    let ds = separable(150, 6);
    let gs = build_generators(2).unwrap();
    let cfg = TrainConfig {
        ridge: 1e3,
        max_epochs: 100,
        ..TrainConfig::default()
    };
    let (params, _) = train(&ds, &cfg, arch(), &gs).unwrap();
    let max = params.weights().iter().fold(0.0f64, |m, w| m.max(w.abs()));
    assert!(max < 0.05, "max |w| = {max}");
}

#[test]
fn full_batch_small_rate_loss_is_monotone() {
    let ds = separable(120, 7);
    let gs = build_generators(2).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 10_000,
        max_epochs: 150,
        patience: 1000,
        ..TrainConfig::default()
    };
    let (_, history) = train(&ds, &cfg, arch(), &gs).unwrap();
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.train_loss).collect();
    let increases: Vec<f64> = losses
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .collect();
    assert!(increases.iter().all(|&d| d < 1e-6), "{increases:?}");
    assert!(increases.len() as f64 <= 0.02 * losses.len() as f64, "{} increases", increases.len());
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn returned_parameters_have_minimum_validation_loss() {
    let ds = separable(150, 8);
    let gs = build_generators(2).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        max_epochs: 40,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (params, history) = train(&ds, &cfg, arch(), &gs).unwrap();
    let val = samples(&ds, &ds.indices(Split::Validation).unwrap());
    let loss = total_loss(&val, &params, &gs, &loss_cfg(&ds, cfg.ridge)).unwrap();
    let min = history
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(loss.to_bits(), min.to_bits());
    assert!(history.best_epoch >= 1 && history.best_epoch <= history.stopped_epoch);
    assert_eq!(history.epochs[history.best_epoch - 1].val_loss, min);
    assert!(history.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
}

#[test]
fn threshold_tuning_changes_only_threshold() {
    let ds = separable(150, 9);
    let gs = build_generators(2).unwrap();
    let base = TrainConfig {
        max_epochs: 10,
        ..TrainConfig::default()
    };
    let tuned = TrainConfig {
        tune_threshold: true,
        ..base.clone()
    };
    let (a, _) = train(&ds, &base, arch(), &gs).unwrap();
    let (b, _) = train(&ds, &tuned, arch(), &gs).unwrap();
    assert_eq!(a.weights(), b.weights());
    assert_eq!(a.threshold, 0.5);
    assert!(b.threshold > 0.0 && b.threshold < 1.0);
}

#[test]
fn dimension_mismatch_rejected() {
    let ds = separable(40, 10);
    let gs = build_generators(3).unwrap();
    assert!(train(&ds, &TrainConfig::default(), arch(), &gs).is_err());
}
