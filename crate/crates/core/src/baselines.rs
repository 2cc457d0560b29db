//! Classical reference models: weighted logistic regression and a small
//! dense network, both trained from scratch on the standardized features.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{seeded_stream, streams, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{macro_f1, RankedFeatureList};
use crate::record::Record;
use crate::training::{balanced_class_weights, Adam, EarlyStopper, PROB_FLOOR};

pub const LOGREG_FORMAT: &str = "qudit-qnn-logreg";
pub const MLP_FORMAT: &str = "qudit-qnn-mlp";

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn rows_of(ds: &Dataset, split: Split) -> Result<Vec<usize>> {
    let rows = ds.indices(split)?;
    if rows.is_empty() {
        return Err(Error::Structure(format!("{split:?} split is empty")));
    }
    Ok(rows)
}

fn class_weights_for(ds: &Dataset, rows: &[usize], enabled: bool) -> [f64; 2] {
    if enabled {
        balanced_class_weights(rows.iter().map(|&i| ds.label(i)))
    } else {
        [1.0, 1.0]
    }
}

fn defaults_lr_rate() -> f64 {
    0.1
}
fn defaults_lr_l2() -> f64 {
    1e-4
}
fn defaults_lr_epochs() -> usize {
    5000
}
fn defaults_grad_tol() -> f64 {
    1e-6
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRegConfig {
    #[serde(default = "defaults_lr_rate")]
    pub learning_rate: f64,
    /// Penalty on the coefficients; the intercept is not penalized.
    #[serde(default = "defaults_lr_l2")]
    pub l2: f64,
    #[serde(default = "defaults_lr_epochs")]
    pub max_epochs: usize,
    /// Stop once the full gradient norm falls below this.
    #[serde(default = "defaults_grad_tol")]
    pub gradient_tolerance: f64,
    #[serde(default = "default_true")]
    pub class_weighting: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults_lr_rate(),
            l2: defaults_lr_l2(),
            max_epochs: defaults_lr_epochs(),
            gradient_tolerance: defaults_grad_tol(),
            class_weighting: true,
            seed: 0,
        }
    }
}

impl LogRegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("logreg learning_rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config("logreg l2 must be >= 0".into()));
        }
        if !(self.gradient_tolerance >= 0.0) {
            return Err(Error::Config("logreg gradient_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Gradient-descent epochs actually run.
    pub epochs: usize,
}

impl LogRegModel {
    pub fn zeros(n_features: usize) -> Self {
        Self {
            coefficients: vec![0.0; n_features],
            intercept: 0.0,
            epochs: 0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.coefficients.len() + 1
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.logit(x) >= 0.0)
    }

    /// Features by |coefficient|, largest first; ties by index.
    pub fn ranking(&self) -> Result<RankedFeatureList> {
        let mags: Vec<f64> = self.coefficients.iter().map(|c| c.abs()).collect();
        RankedFeatureList::from_scores(&mags)
    }

    pub fn to_record(&self) -> Record {
        Record::new(LOGREG_FORMAT)
            .field("features", self.n_features())
            .field("epochs", self.epochs)
            .field("intercept", format!("{:?}", self.intercept))
            .matrix("coefficients", 1, self.n_features(), self.coefficients.clone())
    }

    pub fn from_record(rec: &Record) -> Result<Self> {
        rec.expect_format(LOGREG_FORMAT)?;
        let n: usize = rec.parse("features")?;
        let m = rec.get_matrix("coefficients")?;
        if m.rows != 1 || m.cols != n {
            return Err(Error::ModelFormat(format!(
                "coefficients are {}x{}, expected 1x{n}",
                m.rows, m.cols
            )));
        }
        let model = Self {
            coefficients: m.values.clone(),
            intercept: rec.parse("intercept")?,
            epochs: rec.parse("epochs")?,
        };
        if !model.intercept.is_finite() || model.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::ModelFormat("non-finite logreg parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_record().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_record(&Record::load(path)?)
    }
}

/// Weighted mean cross-entropy plus `l2‖coef‖²`, and its gradient with the
/// intercept derivative stored last.
pub fn logreg_loss_gradient(
    model: &LogRegModel,
    ds: &Dataset,
    rows: &[usize],
    class_weights: [f64; 2],
    l2: f64,
) -> (f64, Vec<f64>) {
    let n = model.n_features();
    let mut grad = vec![0.0; n + 1];
    let mut loss = 0.0;
    for &i in rows {
        let x = ds.row(i);
        let y = ds.label(i);
        let u = class_weights[usize::from(y)];
        let p = model.predict_proba(x);
        let q = if y == 1 { p } else { 1.0 - p };
        loss -= u * q.max(PROB_FLOOR).ln();
        let r = u * (p - f64::from(y));
        for (g, v) in grad.iter_mut().zip(x) {
            *g += r * v;
        }
        grad[n] += r;
    }
    let m = rows.len() as f64;
    loss /= m;
    grad.iter_mut().for_each(|g| *g /= m);
    for (g, c) in grad.iter_mut().zip(&model.coefficients) {
        *g += 2.0 * l2 * c;
    }
    loss += l2 * model.coefficients.iter().map(|c| c * c).sum::<f64>();
    (loss, grad)
}

/// Full-batch gradient descent on the train split.
pub fn train_logreg(ds: &Dataset, config: &LogRegConfig) -> Result<LogRegModel> {
    config.validate()?;
    let rows = rows_of(ds, Split::Train)?;
    let weights = class_weights_for(ds, &rows, config.class_weighting);
    let mut model = LogRegModel::zeros(ds.n_features());
    for epoch in 1..=config.max_epochs {
        let (loss, grad) = logreg_loss_gradient(&model, ds, &rows, weights, config.l2);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "logistic regression diverged at epoch {epoch} (loss {loss})"
            )));
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < config.gradient_tolerance {
            break;
        }
        let n = model.n_features();
        for (c, g) in model.coefficients.iter_mut().zip(&grad) {
            *c -= config.learning_rate * g;
        }
        model.intercept -= config.learning_rate * grad[n];
        model.epochs = epoch;
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlpInit {
    /// Normal with variance 2/fan-in; biases zero.
    #[default]
    He,
    Zeros,
}

fn default_hidden() -> Vec<usize> {
    vec![48, 14]
}
fn default_mlp_rate() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_mlp_batch() -> usize {
    256
}
fn default_mlp_epochs() -> usize {
    200
}
fn default_mlp_patience() -> usize {
    20
}
fn default_min_delta() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init: MlpInit,
    #[serde(default = "default_mlp_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default = "default_mlp_batch")]
    pub batch_size: usize,
    #[serde(default = "default_mlp_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_mlp_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(default = "default_true")]
    pub class_weighting: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: Activation::Relu,
            init: MlpInit::He,
            learning_rate: default_mlp_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            l2: 0.0,
            batch_size: default_mlp_batch(),
            max_epochs: default_mlp_epochs(),
            patience: default_mlp_patience(),
            min_delta: default_min_delta(),
            class_weighting: true,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Structure("MLP needs at least one hidden layer".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Structure("MLP hidden layers must be non-empty".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("MLP learning_rate must be >= 0".into()));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::Config("MLP Adam betas must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !(self.l2 >= 0.0) || !(self.min_delta >= 0.0) {
            return Err(Error::Config("MLP epsilon, l2, min_delta out of range".into()));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("MLP batch_size and patience must be positive".into()));
        }
        Ok(())
    }
}

/// Dense network ending in two logits. Parameters are stored flat, layer by
/// layer, each as an `out × in` weight block followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

fn mlp_param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl MlpModel {
    pub fn new(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(Error::Structure("MLP needs at least one hidden layer".into()));
        }
        if sizes.contains(&0) || *sizes.last().unwrap() != 2 {
            return Err(Error::Structure(format!("invalid MLP layer sizes {sizes:?}")));
        }
        if params.len() != mlp_param_count(&sizes) {
            return Err(Error::Structure(format!(
                "{} parameters for layer sizes {sizes:?} (expected {})",
                params.len(),
                mlp_param_count(&sizes)
            )));
        }
        Ok(Self {
            sizes,
            activation,
            params,
        })
    }

    pub fn init(
        n_features: usize,
        hidden: &[usize],
        activation: Activation,
        init: MlpInit,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut sizes = vec![n_features];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let mut params = vec![0.0; mlp_param_count(&sizes)];
        if init == MlpInit::He {
            let mut off = 0;
            for w in sizes.windows(2) {
                let std = (2.0 / w[0] as f64).sqrt();
                for p in &mut params[off..off + w[0] * w[1]] {
                    *p = std * rng.sample::<f64, _>(StandardNormal);
                }
                off += w[0] * w[1] + w[1];
            }
        }
        Self::new(sizes, activation, params)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn n_features(&self) -> usize {
        self.sizes[0]
    }

    /// Activations of every layer; the last entry holds the logits.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[off..off + n_in * n_out];
            let biases = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = biases[o]
                        + weights[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(input)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    if l == last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        acts
    }

    /// Softmax probability of class 1.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let acts = self.activations(x);
        let logits = acts.last().unwrap();
        sigmoid(logits[1] - logits[0])
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        let acts = self.activations(x);
        let logits = acts.last().unwrap();
        u8::from(logits[1] >= logits[0])
    }

    /// Adds the gradient of `weight · CE(x, y)` into `grad`; returns the loss.
    fn accumulate_gradient(&self, x: &[f64], y: u8, weight: f64, grad: &mut [f64]) -> f64 {
        let acts = self.activations(x);
        let logits = acts.last().unwrap();
        let p1 = sigmoid(logits[1] - logits[0]);
        let probs = [1.0 - p1, p1];
        let loss = -weight * probs[usize::from(y)].max(PROB_FLOOR).ln();

        let mut delta: Vec<f64> = (0..2)
            .map(|k| weight * (probs[k] - f64::from(u8::from(usize::from(y) == k))))
            .collect();
        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |off, w| {
                let here = *off;
                *off += w[0] * w[1] + w[1];
                Some(here)
            })
            .collect();
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let weights = &self.params[off..off + n_in * n_out];
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = (0..n_out).map(|o| weights[o * n_in + i] * delta[o]).sum();
                        back * self.activation.derivative_from_output(input[i])
                    })
                    .collect();
            }
        }
        loss
    }

    /// Weighted mean cross-entropy plus `l2‖params‖²`, and its gradient.
    pub fn loss_gradient(
        &self,
        ds: &Dataset,
        rows: &[usize],
        class_weights: [f64; 2],
        l2: f64,
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for &i in rows {
            loss += self.accumulate_gradient(
                ds.row(i),
                ds.label(i),
                class_weights[usize::from(ds.label(i))],
                &mut grad,
            );
        }
        let m = rows.len() as f64;
        loss /= m;
        for (g, p) in grad.iter_mut().zip(&self.params) {
            *g = *g / m + 2.0 * l2 * p;
        }
        loss += l2 * self.params.iter().map(|p| p * p).sum::<f64>();
        (loss, grad)
    }

    pub fn loss(&self, ds: &Dataset, rows: &[usize], class_weights: [f64; 2], l2: f64) -> f64 {
        let ce: f64 = rows
            .iter()
            .map(|&i| {
                let y = ds.label(i);
                let p1 = self.predict_proba(ds.row(i));
                let q = if y == 1 { p1 } else { 1.0 - p1 };
                -class_weights[usize::from(y)] * q.max(PROB_FLOOR).ln()
            })
            .sum();
        ce / rows.len() as f64 + l2 * self.params.iter().map(|p| p * p).sum::<f64>()
    }

    pub fn to_record(&self) -> Record {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        Record::new(MLP_FORMAT)
            .field("sizes", sizes.join(" "))
            .field("activation", self.activation.as_str())
            .matrix("params", 1, self.params.len(), self.params.clone())
    }

    pub fn from_record(rec: &Record) -> Result<Self> {
        rec.expect_format(MLP_FORMAT)?;
        let sizes = rec
            .get("sizes")?
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::ModelFormat(format!("bad layer size `{s}`")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let activation = rec.get("activation")?.parse()?;
        let params = rec.get_matrix("params")?.values.clone();
        Self::new(sizes, activation, params).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_record().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_record(&Record::load(path)?)
    }
}

/// Adam on shuffled mini-batches with early stopping on validation loss.
pub fn train_mlp(ds: &Dataset, config: &MlpConfig) -> Result<MlpModel> {
    config.validate()?;
    let train = rows_of(ds, Split::Train)?;
    let val = rows_of(ds, Split::Validation)?;
    let weights = class_weights_for(ds, &train, config.class_weighting);
    let mut rng = seeded_stream(config.seed, streams::INIT);
    let mut model = MlpModel::init(
        ds.n_features(),
        &config.hidden,
        config.activation,
        config.init,
        &mut rng,
    )?;
    let mut adam = Adam::new(
        model.parameter_count(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut stopper = EarlyStopper::new(config.patience, config.min_delta);
    let mut best = model.clone();
    let mut order = train.clone();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (loss, grad) = model.loss_gradient(ds, chunk, weights, config.l2);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "MLP loss non-finite at epoch {epoch}, batch {b}"
                )));
            }
            adam.step(&mut model.params, &grad)?;
        }
        let val_loss = model.loss(ds, &val, weights, config.l2);
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "MLP validation loss non-finite at epoch {epoch}"
            )));
        }
        let (new_best, stop) = stopper.observe(epoch, val_loss);
        if new_best {
            best = model.clone();
        }
        if stop {
            break;
        }
    }
    Ok(best)
}

/// Test-split macro-F1 of any row classifier.
pub fn split_macro_f1(ds: &Dataset, split: Split, predict: impl Fn(&[f64]) -> u8) -> Result<f64> {
    let rows = rows_of(ds, split)?;
    let pred: Vec<u8> = rows.iter().map(|&i| predict(ds.row(i))).collect();
    let truth: Vec<u8> = rows.iter().map(|&i| ds.label(i)).collect();
    macro_f1(&pred, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: Vec<(Vec<f64>, u8)>, splits: Vec<Split>) -> Dataset {
        let n = rows[0].0.len();
        let names = (0..n).map(|j| format!("f{j}")).collect();
        Dataset::new(
            rows.iter().flat_map(|r| r.0.clone()).collect(),
            rows.iter().map(|r| r.1).collect(),
            names,
        )
        .unwrap()
        .with_splits(splits)
        .unwrap()
    }

    fn cycle_splits(n: usize) -> Vec<Split> {
        (0..n)
            .map(|i| match i % 4 {
                0 | 1 => Split::Train,
                2 => Split::Validation,
                _ => Split::Test,
            })
            .collect()
    }

    #[test]
    fn ranking_examples() {
        let m = LogRegModel {
            coefficients: vec![0.1, -2.0, 0.5],
            intercept: 0.0,
            epochs: 0,
        };
        assert_eq!(m.ranking().unwrap().order(), &[1, 2, 0]);
        assert_eq!(LogRegModel::zeros(3).ranking().unwrap().order(), &[0, 1, 2]);
    }

    #[test]
    fn separable_one_d() {
        let rows: Vec<(Vec<f64>, u8)> = (0..80)
            .map(|i| {
                let x = if i % 2 == 0 { 1.0 + i as f64 / 80.0 } else { -1.0 - i as f64 / 80.0 };
                (vec![x], u8::from(x > 0.0))
            })
            .collect();
        let ds = dataset(rows, vec![Split::Train; 80]);
        let m = train_logreg(&ds, &LogRegConfig::default()).unwrap();
        assert!(m.coefficients[0] > 0.0);
        assert_eq!(split_macro_f1(&ds, Split::Train, |x| m.predict(x)).unwrap(), 1.0);
    }

    #[test]
    fn uninformative_feature_gets_zero_coefficient() {
        // every (x0, x1) with both signs of x1 and matching labels: x1 is
        // exactly independent of y, so its optimal coefficient is 0
        let mut rows = Vec::new();
        for &x0 in &[-2.0, -1.0, 1.0, 2.0] {
            for &x1 in &[-1.5, 1.5] {
                rows.push((vec![x0, x1], u8::from(x0 > 0.0)));
            }
        }
        let n = rows.len();
        let ds = dataset(rows, vec![Split::Train; n]);
        let m = train_logreg(&ds, &LogRegConfig::default()).unwrap();
        assert!(m.coefficients[1].abs() < 1e-3, "{:?}", m.coefficients);
    }

    #[test]
    fn logreg_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let rows: Vec<(Vec<f64>, u8)> = (0..12)
                .map(|_| {
                    (
                        (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
                        rng.random_range(0..2u8),
                    )
                })
                .collect();
            let ds = dataset(rows, vec![Split::Train; 12]);
            let all: Vec<usize> = (0..12).collect();
            let model = LogRegModel {
                coefficients: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                intercept: rng.random_range(-1.0..1.0),
                epochs: 0,
            };
            let cw = [0.7, 1.9];
            let (_, grad) = logreg_loss_gradient(&model, &ds, &all, cw, 0.05);
            let h = 1e-6;
            for k in 0..5 {
                let mut plus = model.clone();
                let mut minus = model.clone();
                if k < 4 {
                    plus.coefficients[k] += h;
                    minus.coefficients[k] -= h;
                } else {
                    plus.intercept += h;
                    minus.intercept -= h;
                }
                let fd = (logreg_loss_gradient(&plus, &ds, &all, cw, 0.05).0
                    - logreg_loss_gradient(&minus, &ds, &all, cw, 0.05).0)
                    / (2.0 * h);
                let rel = (fd - grad[k]).abs() / grad[k].abs().max(1e-8);
                assert!(rel < 1e-6, "k={k} fd={fd} an={}", grad[k]);
            }
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<(Vec<f64>, u8)> = (0..6)
            .map(|_| {
                (
                    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rng.random_range(0..2u8),
                )
            })
            .collect();
        let ds = dataset(rows, vec![Split::Train; 6]);
        let all: Vec<usize> = (0..6).collect();
        for act in [Activation::Tanh, Activation::Relu] {
            let model = MlpModel::init(3, &[4, 3], act, MlpInit::He, &mut rng).unwrap();
            let (_, grad) = model.loss_gradient(&ds, &all, [1.0, 2.0], 0.01);
            let h = 1e-6;
            for k in 0..model.parameter_count() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                plus.params[k] += h;
                minus.params[k] -= h;
                let fd = (plus.loss(&ds, &all, [1.0, 2.0], 0.01)
                    - minus.loss(&ds, &all, [1.0, 2.0], 0.01))
                    / (2.0 * h);
                assert!((fd - grad[k]).abs() < 1e-6 * grad[k].abs().max(1e-2), "{act:?} k={k}");
            }
        }
    }

    #[test]
    fn default_mlp_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = MlpConfig::default();
        let m = MlpModel::init(23, &cfg.hidden, cfg.activation, cfg.init, &mut rng).unwrap();
        assert_eq!(m.parameter_count(), 1868);
    }

    #[test]
    fn zero_hidden_layers_rejected() {
        let cfg = MlpConfig {
            hidden: vec![],
            ..MlpConfig::default()
        };
        let ds = dataset(vec![(vec![0.0], 0), (vec![1.0], 1)], vec![Split::Train, Split::Validation]);
        assert!(matches!(train_mlp(&ds, &cfg), Err(Error::Structure(_))));
    }

    #[test]
    fn zero_init_zero_rate_is_identity() {
        let rows: Vec<(Vec<f64>, u8)> = (0..16).map(|i| (vec![i as f64 / 8.0 - 1.0], (i % 2) as u8)).collect();
        let ds = dataset(rows, cycle_splits(16));
        let cfg = MlpConfig {
            hidden: vec![3],
            init: MlpInit::Zeros,
            learning_rate: 0.0,
            max_epochs: 5,
            ..MlpConfig::default()
        };
        let m = train_mlp(&ds, &cfg).unwrap();
        assert!(m.params().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn mlp_learns_xor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<(Vec<f64>, u8)> = (0..800)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                (vec![a, b], u8::from((a > 0.0) != (b > 0.0)))
            })
            .collect();
        let ds = dataset(rows, cycle_splits(800));
        let cfg = MlpConfig {
            hidden: vec![16, 8],
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 300,
            ..MlpConfig::default()
        };
        let m = train_mlp(&ds, &cfg).unwrap();
        let f1 = split_macro_f1(&ds, Split::Test, |x| m.predict(x)).unwrap();
        assert!(f1 >= 0.95, "mlp f1 {f1}");
        let lr = train_logreg(&ds, &LogRegConfig::default()).unwrap();
        let lr_f1 = split_macro_f1(&ds, Split::Test, |x| lr.predict(x)).unwrap();
        assert!(lr_f1 < 0.7, "logreg f1 {lr_f1}");
    }

    #[test]
    fn records_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpModel::init(5, &[4], Activation::Tanh, MlpInit::He, &mut rng).unwrap();
        assert_eq!(MlpModel::from_record(&Record::from_text(&m.to_record().to_text()).unwrap()).unwrap(), m);
        let lr = LogRegModel {
            coefficients: vec![0.1, -0.3],
            intercept: 1e-17,
            epochs: 4,
        };
        assert_eq!(LogRegModel::from_record(&Record::from_text(&lr.to_record().to_text()).unwrap()).unwrap(), lr);
        assert!(LogRegModel::from_record(&m.to_record()).is_err());
    }
}
