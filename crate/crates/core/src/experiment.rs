//! Multi-seed experiment orchestration: training runs, test-split
//! evaluation, the feature-poisoning study, and comparison tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    train_logreg, train_mlp, LogRegConfig, LogRegModel, MlpConfig, MlpModel, LOGREG_FORMAT,
    MLP_FORMAT,
};
use crate::data::{
    load_taiwan, poison, standardize, stratified_split, Dataset, Fingerprint, PoisonMode,
    PoisonSpec, Split, DEFAULT_SPLIT_RATIOS,
};
use crate::error::{Error, Result};
use crate::generators::{build_generators, GeneratorSet};
use crate::linalg::MAX_DIM;
use crate::metrics::{
    edit_distance, macro_f1, mean_std, random_wis_baseline, wis, RankedFeatureList,
};
use crate::qnn::{feature_importance, ImportanceMode, ModelParams, Readout, MODEL_FORMAT};
use crate::record::Record;
use crate::training::{predict_probas, samples, threshold_labels, train, QnnArchitecture, TrainConfig, TrainHistory};

/// Environment variable naming the dataset file when the config has none.
pub const DATASET_ENV: &str = "QUDIT_QNN_TAIWAN_CSV";
pub const DEFAULT_DATASET: &str = "data/taiwan.csv";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Qnn,
    Logreg,
    Mlp,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Qnn => "qnn",
            ModelKind::Logreg => "logreg",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qnn" => Ok(ModelKind::Qnn),
            "logreg" => Ok(ModelKind::Logreg),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected qnn, logreg, or mlp)"
            ))),
        }
    }
}

fn default_dim() -> usize {
    5
}
fn default_layers() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QnnSettings {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default)]
    pub importance_mode: ImportanceMode,
}

impl Default for QnnSettings {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            layers: default_layers(),
            readout: Readout::Parity,
            importance_mode: ImportanceMode::Sum,
        }
    }
}

fn default_poison_count() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonSettings {
    /// Features replaced by noise; indices are redrawn for every seed.
    #[serde(default = "default_poison_count")]
    pub count: usize,
    #[serde(default)]
    pub mode: PoisonMode,
}

impl Default for PoisonSettings {
    fn default() -> Self {
        Self {
            count: default_poison_count(),
            mode: PoisonMode::TrainAndTest,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_ratios() -> [f64; 3] {
    DEFAULT_SPLIT_RATIOS
}
fn default_trials() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelKind,
    /// Canonical CSV; falls back to `$QUDIT_QNN_TAIWAN_CSV`, then `data/taiwan.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_ratios")]
    pub split_ratios: [f64; 3],
    #[serde(default)]
    pub qnn: QnnSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub logreg: LogRegConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison: Option<PoisonSettings>,
    /// Trained models to evaluate instead of training afresh (`seed-<s>/model.txt`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models_dir: Option<PathBuf>,
    /// Logistic-regression models used as the edit-distance reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Monte-Carlo rankings behind the random WIS baseline.
    #[serde(default = "default_trials")]
    pub random_wis_trials: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Qnn,
            dataset: None,
            seeds: default_seeds(),
            split_ratios: default_ratios(),
            qnn: QnnSettings::default(),
            train: TrainConfig::default(),
            logreg: LogRegConfig::default(),
            mlp: MlpConfig::default(),
            poison: None,
            models_dir: None,
            reference_dir: None,
            output_dir: None,
            random_wis_trials: default_trials(),
        }
    }
}

impl ExperimentConfig {
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
        toml::to_string(self).expect("ExperimentConfig always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.qnn.dim < 2 || self.qnn.dim > MAX_DIM {
            return Err(Error::Config(format!(
                "qudit dimension must lie in 2..={MAX_DIM}, got {}",
                self.qnn.dim
            )));
        }
        if self.qnn.layers == 0 {
            return Err(Error::Config("the network needs at least one layer".into()));
        }
        if self.random_wis_trials == 0 {
            return Err(Error::Config("random_wis_trials must be positive".into()));
        }
        self.train.validate()?;
        self.logreg.validate()?;
        self.mlp.validate()?;
        Ok(())
    }

    /// Checks that the model fits a dataset with `n_features` columns.
    pub fn validate_for(&self, n_features: usize) -> Result<()> {
        self.validate()?;
        let slots = self.qnn.dim * self.qnn.dim - 1;
        if self.model == ModelKind::Qnn && slots < n_features {
            return Err(Error::Config(format!(
                "d={} offers {slots} generators for {n_features} features (need d²−1 ≥ n)",
                self.qnn.dim
            )));
        }
        if let Some(p) = &self.poison {
            if p.count > n_features {
                return Err(Error::Config(format!(
                    "cannot poison {} of {n_features} features",
                    p.count
                )));
            }
        }
        Ok(())
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| {
            std::env::var_os(DATASET_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_DATASET))
        })
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg.dataset_path();
    if !path.exists() {
        return Err(Error::Precondition(format!(
            "dataset `{}` not found; obtain the credit-default CSV from {} and point \
             `dataset` or ${DATASET_ENV} at it",
            path.display(),
            crate::data::TAIWAN_SOURCE
        )));
    }
    load_taiwan(&path)
}

/// Stratified split under `seed`, then train-split standardization.
pub fn prepare(raw: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    standardize(&stratified_split(raw, ratios, seed)?)
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Qnn(ModelParams),
    Logreg(LogRegModel),
    Mlp(MlpModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Qnn(_) => ModelKind::Qnn,
            TrainedModel::Logreg(_) => ModelKind::Logreg,
            TrainedModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            TrainedModel::Qnn(p) => p.parameter_count(),
            TrainedModel::Logreg(m) => m.parameter_count(),
            TrainedModel::Mlp(m) => m.parameter_count(),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Qnn(p) => p.n_features(),
            TrainedModel::Logreg(m) => m.n_features(),
            TrainedModel::Mlp(m) => m.n_features(),
        }
    }

    /// Predicted labels for `rows`, in order.
    pub fn predict_rows(&self, ds: &Dataset, rows: &[usize], gs: Option<&GeneratorSet>) -> Result<Vec<u8>> {
        if self.n_features() != ds.n_features() {
            return Err(Error::Structure(format!(
                "model expects {} features, dataset has {}",
                self.n_features(),
                ds.n_features()
            )));
        }
        match self {
            TrainedModel::Qnn(p) => {
                let owned;
                let gs = match gs {
                    Some(g) => g,
                    None => {
                        owned = build_generators(p.dim())?;
                        &owned
                    }
                };
                p.validate(gs)?;
                let probas = predict_probas(&samples(ds, rows), p, gs)?;
                Ok(threshold_labels(&probas, p.threshold))
            }
            TrainedModel::Logreg(m) => Ok(rows.iter().map(|&i| m.predict(ds.row(i))).collect()),
            TrainedModel::Mlp(m) => Ok(rows.iter().map(|&i| m.predict(ds.row(i))).collect()),
        }
    }

    /// Macro-F1 on one split.
    pub fn macro_f1(&self, ds: &Dataset, split: Split, gs: Option<&GeneratorSet>) -> Result<f64> {
        let rows = ds.indices(split)?;
        if rows.is_empty() {
            return Err(Error::Structure(format!("{split:?} split is empty")));
        }
        let pred = self.predict_rows(ds, &rows, gs)?;
        let truth: Vec<u8> = rows.iter().map(|&i| ds.label(i)).collect();
        macro_f1(&pred, &truth)
    }

    /// Feature ranking; the MLP has none.
    pub fn ranking(&self, mode: ImportanceMode) -> Result<Option<RankedFeatureList>> {
        match self {
            TrainedModel::Qnn(p) => feature_importance(p, mode).map(Some),
            TrainedModel::Logreg(m) => m.ranking().map(Some),
            TrainedModel::Mlp(_) => Ok(None),
        }
    }

    pub fn to_record(&self) -> Record {
        match self {
            TrainedModel::Qnn(p) => p.to_record(),
            TrainedModel::Logreg(m) => m.to_record(),
            TrainedModel::Mlp(m) => m.to_record(),
        }
    }

    pub fn from_record(rec: &Record) -> Result<Self> {
        match rec.format.as_str() {
            MODEL_FORMAT => ModelParams::from_record(rec).map(TrainedModel::Qnn),
            LOGREG_FORMAT => LogRegModel::from_record(rec).map(TrainedModel::Logreg),
            MLP_FORMAT => MlpModel::from_record(rec).map(TrainedModel::Mlp),
            other => Err(Error::ModelFormat(format!("unknown model format `{other}`"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_record().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_record(&Record::load(path)?)
    }
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

pub const MODEL_FILE: &str = "model.txt";

/// Trains `kind` on one prepared dataset with the seed injected.
pub fn fit(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    ds: &Dataset,
    seed: u64,
    gs: Option<&GeneratorSet>,
) -> Result<(TrainedModel, Option<TrainHistory>)> {
    match kind {
        ModelKind::Qnn => {
            let owned;
            let gs = match gs {
                Some(g) => g,
                None => {
                    owned = build_generators(cfg.qnn.dim)?;
                    &owned
                }
            };
            let tc = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let arch = QnnArchitecture {
                dim: cfg.qnn.dim,
                layers: cfg.qnn.layers,
                readout: cfg.qnn.readout,
            };
            let (params, history) = train(ds, &tc, arch, gs)?;
            Ok((TrainedModel::Qnn(params), Some(history)))
        }
        ModelKind::Logreg => {
            let lc = LogRegConfig {
                seed,
                ..cfg.logreg.clone()
            };
            Ok((TrainedModel::Logreg(train_logreg(ds, &lc)?), None))
        }
        ModelKind::Mlp => {
            let mc = MlpConfig {
                seed,
                ..cfg.mlp.clone()
            };
            Ok((TrainedModel::Mlp(train_mlp(ds, &mc)?), None))
        }
    }
}

fn load_from(dir: &Path, seed: u64, expect: ModelKind) -> Result<TrainedModel> {
    let model = TrainedModel::load(&seed_dir(dir, seed).join(MODEL_FILE))?;
    if model.kind() != expect {
        return Err(Error::Structure(format!(
            "{} holds a {} model, expected {}",
            dir.display(),
            model.kind(),
            expect
        )));
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedStatus {
    Ok,
    Failed,
}

/// Mean, sample std, and how many seeds contributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Self {
            mean,
            std,
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub status: SeedStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_distance_to_logreg: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wis: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_wis: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisoned_features: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped_epoch: Option<usize>,
}

impl SeedResult {
    fn failed(seed: u64, err: &Error) -> Self {
        Self {
            seed,
            status: SeedStatus::Failed,
            error: Some(err.to_string()),
            ..Self::empty(seed)
        }
    }

    fn empty(seed: u64) -> Self {
        Self {
            seed,
            status: SeedStatus::Ok,
            error: None,
            parameter_count: None,
            macro_f1: None,
            edit_distance_to_logreg: None,
            wis: None,
            random_wis: None,
            poisoned_features: None,
            ranking: None,
            best_epoch: None,
            stopped_epoch: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_distance_to_logreg: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wis: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_wis: Option<Stat>,
}

impl Aggregate {
    /// Statistics over the successful seeds.
    pub fn from_seeds(seeds: &[SeedResult]) -> Self {
        let ok: Vec<&SeedResult> = seeds.iter().filter(|s| s.status == SeedStatus::Ok).collect();
        let collect = |f: &dyn Fn(&SeedResult) -> Option<f64>| -> Option<Stat> {
            Stat::of(&ok.iter().filter_map(|s| f(s)).collect::<Vec<_>>())
        };
        Self {
            macro_f1: collect(&|s| s.macro_f1),
            edit_distance_to_logreg: collect(&|s| s.edit_distance_to_logreg.map(|d| d as f64)),
            wis: collect(&|s| s.wis),
            random_wis: collect(&|s| s.random_wis),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Evaluate,
    PoisonStudy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: ReportKind,
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<Readout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance_mode: Option<ImportanceMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison_mode: Option<PoisonMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison_count: Option<usize>,
    pub dataset: Fingerprint,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    fn new(kind: ReportKind, cfg: &ExperimentConfig, raw: &Dataset, seeds: Vec<SeedResult>) -> Self {
        let qnn = cfg.model == ModelKind::Qnn;
        let poison = match kind {
            ReportKind::PoisonStudy => cfg.poison.as_ref(),
            ReportKind::Evaluate => None,
        };
        Self {
            kind,
            model: cfg.model,
            parameter_count: seeds.iter().find_map(|s| s.parameter_count),
            readout: qnn.then_some(cfg.qnn.readout),
            importance_mode: qnn.then_some(cfg.qnn.importance_mode),
            poison_mode: poison.map(|p| p.mode),
            poison_count: poison.map(|p| p.count),
            dataset: raw.fingerprint(),
            config: cfg.clone(),
            aggregate: Aggregate::from_seeds(&seeds),
            seeds,
        }
    }

    pub fn failed_seeds(&self) -> Vec<u64> {
        self.seeds
            .iter()
            .filter(|s| s.status == SeedStatus::Failed)
            .map(|s| s.seed)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSeed {
    pub seed: u64,
    pub status: SeedStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: ModelKind,
    pub dataset: Fingerprint,
    pub config: ExperimentConfig,
    pub seeds: Vec<TrainedSeed>,
}

impl TrainSummary {
    pub fn failed_seeds(&self) -> Vec<u64> {
        self.seeds
            .iter()
            .filter(|s| s.status == SeedStatus::Failed)
            .map(|s| s.seed)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summaries always serialize")
    }
}

fn write_ranking(path: &Path, ranking: &RankedFeatureList, names: &[String]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    ranking.write_csv(file, names)
}

fn write_coefficients(path: &Path, model: &LogRegModel, names: &[String]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["feature_id", "feature_name", "coefficient"])?;
    for (j, c) in model.coefficients.iter().enumerate() {
        w.write_record([j.to_string(), names[j].clone(), format!("{c:?}")])?;
    }
    w.write_record(["intercept".to_string(), String::new(), format!("{:?}", model.intercept)])?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn train_one(
    cfg: &ExperimentConfig,
    raw: &Dataset,
    seed: u64,
    gs: Option<&GeneratorSet>,
    out: &Path,
) -> Result<TrainedSeed> {
    let ds = prepare(raw, cfg.split_ratios, seed)?;
    let (model, history) = fit(cfg, cfg.model, &ds, seed, gs)?;
    let dir = seed_dir(out, seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    model.save(&dir.join(MODEL_FILE))?;
    if let Some(h) = &history {
        h.save_csv(&dir.join("history.csv"))?;
    }
    if let Some(r) = model.ranking(cfg.qnn.importance_mode)? {
        write_ranking(&dir.join("ranking.csv"), &r, raw.feature_names())?;
    }
    if let TrainedModel::Logreg(m) = &model {
        write_coefficients(&dir.join("coefficients.csv"), m, raw.feature_names())?;
    }
    Ok(TrainedSeed {
        seed,
        status: SeedStatus::Ok,
        error: None,
        parameter_count: Some(model.parameter_count()),
        best_epoch: history.as_ref().map(|h| h.best_epoch),
        stopped_epoch: history.as_ref().map(|h| h.stopped_epoch),
        validation_macro_f1: Some(model.macro_f1(&ds, Split::Validation, gs)?),
    })
}

/// Trains one model per seed into `out/seed-<s>/` and writes `train_summary.json`.
pub fn run_train(cfg: &ExperimentConfig, raw: &Dataset, out: &Path) -> Result<TrainSummary> {
    cfg.validate_for(raw.n_features())?;
    let gs = match cfg.model {
        ModelKind::Qnn => Some(build_generators(cfg.qnn.dim)?),
        _ => None,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let seeds = cfg
        .seeds
        .iter()
        .map(|&seed| {
            train_one(cfg, raw, seed, gs.as_ref(), out).unwrap_or_else(|e| TrainedSeed {
                seed,
                status: SeedStatus::Failed,
                error: Some(e.to_string()),
                parameter_count: None,
                best_epoch: None,
                stopped_epoch: None,
                validation_macro_f1: None,
            })
        })
        .collect();
    let summary = TrainSummary {
        model: cfg.model,
        dataset: raw.fingerprint(),
        config: cfg.clone(),
        seeds,
    };
    let path = out.join("train_summary.json");
    std::fs::write(&path, summary.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

fn obtain_model(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seed: u64,
    gs: Option<&GeneratorSet>,
) -> Result<(TrainedModel, Option<TrainHistory>)> {
    match &cfg.models_dir {
        Some(dir) => Ok((load_from(dir, seed, cfg.model)?, None)),
        None => fit(cfg, cfg.model, ds, seed, gs),
    }
}

fn logreg_reference(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<RankedFeatureList> {
    let model = match &cfg.reference_dir {
        Some(dir) => load_from(dir, seed, ModelKind::Logreg)?,
        None => fit(cfg, ModelKind::Logreg, ds, seed, None)?.0,
    };
    model
        .ranking(cfg.qnn.importance_mode)?
        .ok_or_else(|| Error::Structure("logistic regression produced no ranking".into()))
}

fn fill_common(res: &mut SeedResult, model: &TrainedModel, history: Option<&TrainHistory>) {
    res.parameter_count = Some(model.parameter_count());
    res.best_epoch = history.map(|h| h.best_epoch);
    res.stopped_epoch = history.map(|h| h.stopped_epoch);
}

fn evaluate_one(
    cfg: &ExperimentConfig,
    raw: &Dataset,
    seed: u64,
    gs: Option<&GeneratorSet>,
) -> Result<SeedResult> {
    let ds = prepare(raw, cfg.split_ratios, seed)?;
    let (model, history) = obtain_model(cfg, &ds, seed, gs)?;
    let mut res = SeedResult::empty(seed);
    fill_common(&mut res, &model, history.as_ref());
    res.macro_f1 = Some(model.macro_f1(&ds, Split::Test, gs)?);
    if let Some(ranking) = model.ranking(cfg.qnn.importance_mode)? {
        if model.kind() == ModelKind::Qnn {
            let reference = logreg_reference(cfg, &ds, seed)?;
            res.edit_distance_to_logreg = Some(edit_distance(&ranking, &reference)?);
        }
        res.ranking = Some(ranking.order().to_vec());
    }
    Ok(res)
}

fn generators_for(cfg: &ExperimentConfig) -> Result<Option<GeneratorSet>> {
    match cfg.model {
        ModelKind::Qnn => build_generators(cfg.qnn.dim).map(Some),
        _ => Ok(None),
    }
}

/// Test-split macro-F1 per seed, plus rankings and the QNN-to-LR edit distance.
pub fn run_evaluate(cfg: &ExperimentConfig, raw: &Dataset) -> Result<MetricsReport> {
    cfg.validate_for(raw.n_features())?;
    let gs = generators_for(cfg)?;
    let seeds = cfg
        .seeds
        .iter()
        .map(|&seed| {
            evaluate_one(cfg, raw, seed, gs.as_ref()).unwrap_or_else(|e| SeedResult::failed(seed, &e))
        })
        .collect();
    Ok(MetricsReport::new(ReportKind::Evaluate, cfg, raw, seeds))
}

fn poison_one(
    cfg: &ExperimentConfig,
    settings: &PoisonSettings,
    raw: &Dataset,
    seed: u64,
    gs: Option<&GeneratorSet>,
) -> Result<SeedResult> {
    let clean = prepare(raw, cfg.split_ratios, seed)?;
    let spec = PoisonSpec::draw(raw.n_features(), settings.count, settings.mode, seed)?;
    let poisoned = poison(&clean, &spec)?;
    let (model, history) = match settings.mode {
        PoisonMode::TrainAndTest => fit(cfg, cfg.model, &poisoned, seed, gs)?,
        PoisonMode::TestOnly => obtain_model(cfg, &clean, seed, gs)?,
    };
    let mut res = SeedResult::empty(seed);
    fill_common(&mut res, &model, history.as_ref());
    res.macro_f1 = Some(model.macro_f1(&poisoned, Split::Test, gs)?);
    res.poisoned_features = Some(spec.indices.clone());
    let informative = spec.informative(raw.n_features());
    let k = informative.len();
    if let Some(ranking) = model.ranking(cfg.qnn.importance_mode)? {
        res.wis = Some(wis(&ranking, &informative, k)?);
        res.ranking = Some(ranking.order().to_vec());
    }
    res.random_wis = Some(random_wis_baseline(
        raw.n_features(),
        &informative,
        k,
        cfg.random_wis_trials,
        seed,
    )?);
    Ok(res)
}

/// Per seed: draw poisoned features, corrupt them, train, and score F1 and WIS.
/// Without a poison section (or with count 0) this is `run_evaluate`.
pub fn run_poison_study(cfg: &ExperimentConfig, raw: &Dataset) -> Result<MetricsReport> {
    let settings = match &cfg.poison {
        Some(p) if p.count > 0 => p.clone(),
        _ => return run_evaluate(cfg, raw),
    };
    cfg.validate_for(raw.n_features())?;
    let gs = generators_for(cfg)?;
    let seeds = cfg
        .seeds
        .iter()
        .map(|&seed| {
            poison_one(cfg, &settings, raw, seed, gs.as_ref())
                .unwrap_or_else(|e| SeedResult::failed(seed, &e))
        })
        .collect();
    Ok(MetricsReport::new(ReportKind::PoisonStudy, cfg, raw, seeds))
}

/// A published mean ± std.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Published {
    pub mean: f64,
    pub std: f64,
}

const fn published(mean: f64, std: f64) -> Option<Published> {
    Some(Published { mean, std })
}

/// Published figures for one model row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub label: &'static str,
    pub parameter_count: Option<usize>,
    pub macro_f1: Option<Published>,
    pub edit_distance: Option<Published>,
    pub wis: Option<Published>,
}

pub const REFERENCE_CLEAN: [ReferenceRow; 4] = [
    ReferenceRow {
        label: "logreg",
        parameter_count: None,
        macro_f1: published(0.6010, 0.006),
        edit_distance: None,
        wis: None,
    },
    ReferenceRow {
        label: "random-forest",
        parameter_count: Some(3927),
        macro_f1: published(0.647, 0.008),
        edit_distance: published(21.10, 0.99),
        wis: None,
    },
    ReferenceRow {
        label: "mlp",
        parameter_count: Some(1853),
        macro_f1: published(0.682, 0.011),
        edit_distance: None,
        wis: None,
    },
    ReferenceRow {
        label: "qnn",
        parameter_count: Some(384),
        macro_f1: published(0.667, 0.015),
        edit_distance: published(20.9, 1.85),
        wis: None,
    },
];

pub const REFERENCE_POISONED: [ReferenceRow; 3] = [
    ReferenceRow {
        label: "logreg",
        parameter_count: None,
        macro_f1: published(0.579, 0.020),
        edit_distance: None,
        wis: published(0.932, 0.043),
    },
    ReferenceRow {
        label: "random-forest",
        parameter_count: Some(3927),
        macro_f1: published(0.614, 0.027),
        edit_distance: None,
        wis: published(0.953, 0.026),
    },
    ReferenceRow {
        label: "qnn",
        parameter_count: Some(384),
        macro_f1: published(0.632, 0.040),
        edit_distance: None,
        wis: published(0.853, 0.048),
    },
];

pub fn reference_row(kind: ReportKind, label: &str) -> Option<&'static ReferenceRow> {
    let rows: &'static [ReferenceRow] = match kind {
        ReportKind::Evaluate => &REFERENCE_CLEAN,
        ReportKind::PoisonStudy => &REFERENCE_POISONED,
    };
    rows.iter().find(|r| r.label == label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowSource {
    Reproduced,
    /// Published figures carried for comparison; never computed here.
    PublishedReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub kind: ReportKind,
    pub source: RowSource,
    pub parameter_count: Option<usize>,
    pub macro_f1: Option<Stat>,
    pub edit_distance_to_logreg: Option<Stat>,
    pub wis: Option<Stat>,
    pub random_wis: Option<Stat>,
    pub published_macro_f1: Option<Published>,
    pub published_edit_distance: Option<Published>,
    pub published_wis: Option<Published>,
    pub failed_seeds: Vec<u64>,
    pub modes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub dataset: Fingerprint,
    pub rows: Vec<TableRow>,
}

fn modes_of(r: &MetricsReport) -> String {
    let mut parts = Vec::new();
    if let Some(ro) = r.readout {
        parts.push(format!("readout={ro}"));
    }
    if let Some(im) = r.importance_mode {
        parts.push(format!("importance={im}"));
    }
    if let Some(pm) = r.poison_mode {
        parts.push(format!("poison={pm}"));
    }
    parts.join(" ")
}

/// One row per report; with two or more reports, published random-forest
/// rows are appended for each report kind present.
pub fn comparison_table(reports: &[MetricsReport]) -> Result<ComparisonTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Precondition("report needs at least one metrics file".into()))?;
    for r in &reports[1..] {
        if r.dataset != first.dataset {
            return Err(Error::Precondition(format!(
                "reports come from different datasets ({} vs {}); results are not comparable",
                first.dataset, r.dataset
            )));
        }
    }
    let mut rows: Vec<TableRow> = reports
        .iter()
        .map(|r| {
            let reference = reference_row(r.kind, r.model.as_str());
            TableRow {
                model: r.model.to_string(),
                kind: r.kind,
                source: RowSource::Reproduced,
                parameter_count: r.parameter_count,
                macro_f1: r.aggregate.macro_f1,
                edit_distance_to_logreg: r.aggregate.edit_distance_to_logreg,
                wis: r.aggregate.wis,
                random_wis: r.aggregate.random_wis,
                published_macro_f1: reference.and_then(|x| x.macro_f1),
                published_edit_distance: reference.and_then(|x| x.edit_distance),
                published_wis: reference.and_then(|x| x.wis),
                failed_seeds: r.failed_seeds(),
                modes: modes_of(r),
            }
        })
        .collect();
    if reports.len() >= 2 {
        let mut kinds: Vec<ReportKind> = Vec::new();
        for r in reports {
            if !kinds.contains(&r.kind) {
                kinds.push(r.kind);
            }
        }
        for kind in kinds {
            let rf = reference_row(kind, "random-forest").expect("reference tables list the forest");
            rows.push(TableRow {
                model: rf.label.to_string(),
                kind,
                source: RowSource::PublishedReference,
                parameter_count: rf.parameter_count,
                macro_f1: None,
                edit_distance_to_logreg: None,
                wis: None,
                random_wis: None,
                published_macro_f1: rf.macro_f1,
                published_edit_distance: rf.edit_distance,
                published_wis: rf.wis,
                failed_seeds: Vec::new(),
                modes: String::new(),
            });
        }
    }
    Ok(ComparisonTable {
        dataset: first.dataset.clone(),
        rows,
    })
}

fn fmt_stat(s: Option<Stat>, digits: usize) -> String {
    match s {
        Some(s) => format!("{:.*} ± {:.*}", digits, s.mean, digits, s.std),
        None => "-".into(),
    }
}

fn fmt_pub(p: Option<Published>, digits: usize) -> String {
    match p {
        Some(p) => format!("{:.*} ± {:.*}", digits, p.mean, digits, p.std),
        None => "-".into(),
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl ComparisonTable {
    pub const HEADER: [&'static str; 10] = [
        "model",
        "kind",
        "source",
        "params",
        "macro-F1",
        "published F1",
        "edit to LR",
        "published edit",
        "WIS (random)",
        "published WIS",
    ];

    fn cells(&self) -> Vec<[String; 10]> {
        self.rows
            .iter()
            .map(|r| {
                let source = match r.source {
                    RowSource::Reproduced if r.failed_seeds.is_empty() => "reproduced".to_string(),
                    RowSource::Reproduced => format!("reproduced, failed seeds {:?}", r.failed_seeds),
                    RowSource::PublishedReference => "published reference, not reproduced".into(),
                };
                let kind = match r.kind {
                    ReportKind::Evaluate => "clean".to_string(),
                    ReportKind::PoisonStudy => "poisoned".to_string(),
                };
                let wis = match (r.wis, r.random_wis) {
                    (Some(w), Some(rw)) => format!("{} ({:.3})", fmt_stat(Some(w), 3), rw.mean),
                    (None, Some(rw)) => format!("- ({:.3})", rw.mean),
                    (w, None) => fmt_stat(w, 3),
                };
                [
                    r.model.clone(),
                    kind,
                    source,
                    r.parameter_count.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
                    fmt_stat(r.macro_f1, 4),
                    fmt_pub(r.published_macro_f1, 4),
                    fmt_stat(r.edit_distance_to_logreg, 2),
                    fmt_pub(r.published_edit_distance, 2),
                    wis,
                    fmt_pub(r.published_wis, 3),
                ]
            })
            .collect()
    }

    /// Aligned plain-text table.
    pub fn render_text(&self) -> String {
        let cells = self.cells();
        let mut widths = Self::HEADER.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |row: &[String]| -> String {
            let padded: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            padded.join(" | ").trim_end().to_string()
        };
        let mut out = String::new();
        let _ = writeln!(out, "dataset: {}", self.dataset);
        let header: Vec<String> = Self::HEADER.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{}", line(&header));
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        let _ = writeln!(out, "{}", rule.join("-+-"));
        for row in &cells {
            let _ = writeln!(out, "{}", line(row));
        }
        for r in &self.rows {
            if !r.modes.is_empty() {
                let _ = writeln!(out, "{} ({:?}): {}", r.model, r.kind, r.modes);
            }
        }
        out
    }

    /// Numeric CSV with one column per statistic.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "model",
            "kind",
            "source",
            "parameter_count",
            "seeds",
            "macro_f1_mean",
            "macro_f1_std",
            "edit_distance_mean",
            "edit_distance_std",
            "wis_mean",
            "wis_std",
            "random_wis_mean",
            "published_macro_f1_mean",
            "published_macro_f1_std",
            "published_edit_distance_mean",
            "published_edit_distance_std",
            "published_wis_mean",
            "published_wis_std",
            "failed_seeds",
        ])?;
        for r in &self.rows {
            let kind = match r.kind {
                ReportKind::Evaluate => "evaluate",
                ReportKind::PoisonStudy => "poison-study",
            };
            let source = match r.source {
                RowSource::Reproduced => "reproduced",
                RowSource::PublishedReference => "published-reference",
            };
            let failed: Vec<String> = r.failed_seeds.iter().map(|s| s.to_string()).collect();
            w.write_record([
                r.model.clone(),
                kind.to_string(),
                source.to_string(),
                r.parameter_count.map(|p| p.to_string()).unwrap_or_default(),
                r.macro_f1.map(|s| s.n.to_string()).unwrap_or_default(),
                opt_num(r.macro_f1.map(|s| s.mean)),
                opt_num(r.macro_f1.map(|s| s.std)),
                opt_num(r.edit_distance_to_logreg.map(|s| s.mean)),
                opt_num(r.edit_distance_to_logreg.map(|s| s.std)),
                opt_num(r.wis.map(|s| s.mean)),
                opt_num(r.wis.map(|s| s.std)),
                opt_num(r.random_wis.map(|s| s.mean)),
                opt_num(r.published_macro_f1.map(|p| p.mean)),
                opt_num(r.published_macro_f1.map(|p| p.std)),
                opt_num(r.published_edit_distance.map(|p| p.mean)),
                opt_num(r.published_edit_distance.map(|p| p.std)),
                opt_num(r.published_wis.map(|p| p.mean)),
                opt_num(r.published_wis.map(|p| p.std)),
                failed.join(" "),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<table csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
