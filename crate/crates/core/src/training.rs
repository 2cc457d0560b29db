//! Loss assembly, Adam, and the early-stopped training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::generators::GeneratorSet;
use crate::gradients::{loss_gradient, Sample};
use crate::metrics::macro_f1;
use crate::qnn::{forward, readout, ClassDistribution, ModelParams, Readout};

/// Probabilities are clamped to this floor inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `−u_y · ln(max(q_y, 1e-12))`
pub fn cross_entropy(q: &ClassDistribution, y: u8, class_weights: [f64; 2]) -> f64 {
    -class_weights[usize::from(y)] * q.get(y).max(PROB_FLOOR).ln()
}

/// What the loss needs besides the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub readout: Readout,
    pub class_weights: [f64; 2],
    /// Ridge coefficient λ.
    pub ridge: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            readout: Readout::Parity,
            class_weights: [1.0, 1.0],
            ridge: 0.0,
        }
    }
}

/// Mean weighted cross-entropy plus `λ Σ w²`.
pub fn total_loss(
    batch: &[Sample<'_>],
    params: &ModelParams,
    gs: &GeneratorSet,
    cfg: &LossConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Structure("loss of an empty batch".into()));
    }
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|s| {
            let q = readout(&forward(s.x, params, gs)?, cfg.readout)?;
            Ok(cross_entropy(&q, s.y, cfg.class_weights))
        })
        .collect::<Result<_>>()?;
    let ce = losses.iter().sum::<f64>() / batch.len() as f64;
    Ok(ce + cfg.ridge * params.weights().iter().map(|w| w * w).sum::<f64>())
}

/// `u_c = N / (2 N_c)`; a class with no samples gets weight 1.
pub fn balanced_class_weights(labels: impl IntoIterator<Item = u8>) -> [f64; 2] {
    let mut counts = [0usize; 2];
    for y in labels {
        counts[usize::from(y)] += 1;
    }
    let n = (counts[0] + counts[1]) as f64;
    counts.map(|c| if c == 0 { 1.0 } else { n / (2.0 * c as f64) })
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Structure(format!(
                "Adam state has {} entries, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((w, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

fn default_learning_rate() -> f64 {
    5e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_ridge() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    1024
}
fn default_max_epochs() -> usize {
    300
}
fn default_patience() -> usize {
    20
}
fn default_min_delta() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}
fn default_init_scale() -> f64 {
    0.1
}

/// Optimizer and stopping hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Ridge coefficient λ.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(default = "default_true")]
    pub class_weighting: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub weight_init_scale: f64,
    /// Pick the class-1 threshold maximizing validation macro-F1.
    #[serde(default)]
    pub tune_threshold: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            ridge: default_ridge(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            min_delta: default_min_delta(),
            class_weighting: true,
            seed: 0,
            weight_init_scale: default_init_scale(),
            tune_threshold: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be >= 0");
        }
        if !(self.weight_init_scale > 0.0 && self.weight_init_scale.is_finite()) {
            return bad("weight_init_scale must be positive");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("TrainConfig always serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Last epoch run (0 when nothing ran).
    pub stopped_epoch: usize,
    /// Epoch whose parameters were returned (0 = initialization).
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "val_loss", "val_macro_f1"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:?}", e.train_loss),
                format!("{:?}", e.val_loss),
                format!("{:?}", e.val_macro_f1),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<history csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

/// Architecture choices for a fresh network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QnnArchitecture {
    pub dim: usize,
    pub layers: usize,
    pub readout: Readout,
}

/// Early-stopping bookkeeping: patience counts epochs without an
/// improvement larger than `min_delta`, while the returned parameters are
/// those with the lowest validation loss seen.
#[derive(Debug)]
pub struct EarlyStopper {
    patience: usize,
    min_delta: f64,
    reference: f64,
    stale: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            reference: f64::INFINITY,
            stale: 0,
            best_loss: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Records an epoch; returns `(is_new_best, should_stop)`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        let new_best = val_loss < self.best_loss;
        if new_best {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
        }
        let improved = self.reference.is_infinite() || val_loss < self.reference - self.min_delta;
        if improved {
            self.reference = val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (new_best, self.stale >= self.patience)
    }
}

pub fn samples<'a>(ds: &'a Dataset, rows: &[usize]) -> Vec<Sample<'a>> {
    rows.iter()
        .map(|&i| Sample {
            x: ds.row(i),
            y: ds.label(i),
        })
        .collect()
}

/// Class-1 probabilities for many samples, in order.
pub fn predict_probas(
    batch: &[Sample<'_>],
    params: &ModelParams,
    gs: &GeneratorSet,
) -> Result<Vec<f64>> {
    batch
        .par_iter()
        .map(|s| Ok(readout(&forward(s.x, params, gs)?, params.readout)?.q1))
        .collect()
}

pub fn threshold_labels(probas: &[f64], threshold: f64) -> Vec<u8> {
    probas.iter().map(|&q| u8::from(q >= threshold)).collect()
}

/// Threshold on a 0.01 grid maximizing macro-F1; ties keep the lower value.
pub fn best_threshold(probas: &[f64], truth: &[u8]) -> Result<f64> {
    let mut best = (0.5, macro_f1(&threshold_labels(probas, 0.5), truth)?);
    for step in 1..100 {
        let t = step as f64 / 100.0;
        let f1 = macro_f1(&threshold_labels(probas, t), truth)?;
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best.0)
}

/// Trains a fresh network on the train split, early-stopping on validation.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    arch: QnnArchitecture,
    gs: &GeneratorSet,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if gs.dim() != arch.dim {
        return Err(Error::Structure(format!(
            "architecture d={} but generator set d={}",
            arch.dim,
            gs.dim()
        )));
    }
    let train_rows = dataset.indices(Split::Train)?;
    let val_rows = dataset.indices(Split::Validation)?;
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::Structure(
            "training needs non-empty train and validation splits".into(),
        ));
    }

    let mut rng = crate::data::seeded_stream(config.seed, crate::data::streams::INIT);
    let mut params = ModelParams::random_uniform(
        arch.dim,
        arch.layers,
        dataset.n_features(),
        arch.readout,
        config.weight_init_scale,
        &mut rng,
    )?;
    let mut history = TrainHistory::default();
    if config.max_epochs == 0 {
        return Ok((params, history));
    }

    let class_weights = if config.class_weighting {
        balanced_class_weights(train_rows.iter().map(|&i| dataset.label(i)))
    } else {
        [1.0, 1.0]
    };
    let loss_cfg = LossConfig {
        readout: arch.readout,
        class_weights,
        ridge: config.ridge,
    };
    let val_samples = samples(dataset, &val_rows);
    let val_truth: Vec<u8> = val_samples.iter().map(|s| s.y).collect();

    let mut adam = Adam::new(
        params.parameter_count(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut order = train_rows.clone();
    let mut stopper = EarlyStopper::new(config.patience, config.min_delta);
    let mut best_params = params.clone();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = samples(dataset, chunk);
            let rec = loss_gradient(&batch, &params, gs, &loss_cfg).map_err(|e| {
                Error::Numerical(format!("epoch {epoch}, batch {b}: {e}"))
            })?;
            if !rec.loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += rec.loss * chunk.len() as f64;
            adam.step(params.weights_mut(), &rec.gradient)?;
        }
        let train_loss = loss_sum / order.len() as f64;

        let val_loss = total_loss(&val_samples, &params, gs, &loss_cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let probas = predict_probas(&val_samples, &params, gs)?;
        let val_macro_f1 = macro_f1(&threshold_labels(&probas, params.threshold), &val_truth)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_macro_f1,
        });
        history.stopped_epoch = epoch;

        let (new_best, stop) = stopper.observe(epoch, val_loss);
        if new_best {
            best_params = params.clone();
        }
        if stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;

    if config.tune_threshold {
        let probas = predict_probas(&val_samples, &best_params, gs)?;
        best_params.threshold = best_threshold(&probas, &val_truth)?;
    }
    Ok((best_params, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let perfect = ClassDistribution { q0: 1.0, q1: 0.0 };
        assert_eq!(cross_entropy(&perfect, 0, [1.0, 1.0]), 0.0);
        let half = ClassDistribution { q0: 0.5, q1: 0.5 };
        assert!((cross_entropy(&half, 1, [1.0, 1.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&half, 1, [1.0, 2.0]) - 2.0 * 2f64.ln()).abs() < 1e-15);
        // clamped
        assert!((cross_entropy(&perfect, 1, [1.0, 1.0]) - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn class_weights_balance() {
        let w = balanced_class_weights([0, 0, 0, 1]);
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-15);
        assert!((w[1] - 2.0).abs() < 1e-15);
        assert_eq!(balanced_class_weights([0, 0]), [0.5, 1.0]);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut adam = Adam::new(3, 0.1, 0.9, 0.999, 1e-8);
        let mut p = vec![0.5, -1.0, 2.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert!(adam.step(&mut p, &[0.0; 2]).is_err());
    }

    #[test]
    fn adam_unit_step_under_constant_gradient() {
        // Oracle: scalar Adam recursion; m̂/√v̂ → sign(g) so each step → lr.
        let lr = 0.01;
        let mut adam = Adam::new(1, lr, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            adam.step(&mut p, &[3.7]).unwrap();
            last = before - p[0];
        }
        assert!((last - lr).abs() < 1e-6 * lr.max(1.0), "step {last}");
        // the very first step is exactly lr·g/(|g|+ε) after bias correction
        let mut adam = Adam::new(1, lr, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0];
        adam.step(&mut p, &[3.7]).unwrap();
        assert!((p[0] + lr * 3.7 / (3.7 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(TrainConfig::from_toml_str("learning_rate = 0.01\nbogus = 1\n").is_err());
        let cfg = TrainConfig::from_toml_str("learning_rate = 0.01\nmin_delta = inf\n").unwrap();
        assert_eq!(cfg.learning_rate, 0.01);
        assert!(cfg.min_delta.is_infinite());
        assert!(TrainConfig::from_toml_str("batch_size = 0").is_err());
        let round = TrainConfig::from_toml_str(&TrainConfig::default().to_toml_string()).unwrap();
        assert_eq!(round, TrainConfig::default());
    }

    #[test]
    fn early_stopper_semantics() {
        let mut s = EarlyStopper::new(1, f64::INFINITY);
        assert_eq!(s.observe(1, 0.5), (true, false));
        assert_eq!(s.observe(2, 0.1), (true, true));
        assert_eq!(s.best_epoch, 2);

        let mut s = EarlyStopper::new(2, 0.1);
        s.observe(1, 1.0);
        // small improvement: new best but patience still ticks
        assert_eq!(s.observe(2, 0.95), (true, false));
        assert_eq!(s.observe(3, 0.97), (false, true));
        assert_eq!(s.best_epoch, 2);
    }

    #[test]
    fn history_csv_header() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                val_macro_f1: 0.75,
            }],
            stopped_epoch: 1,
            best_epoch: 1,
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,train_loss,val_loss,val_macro_f1\n1,0.5,0.25,0.75\n");
    }

    #[test]
    fn best_threshold_prefers_separating_cut() {
        let probas = [0.1, 0.2, 0.3, 0.35];
        let truth = [0, 0, 1, 1];
        let t = best_threshold(&probas, &truth).unwrap();
        assert!(t > 0.2 && t <= 0.3);
    }
}
