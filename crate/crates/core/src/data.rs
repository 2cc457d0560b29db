//! Dataset ingestion, stratified splits, standardization, and feature poisoning.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Columns of the canonical credit-default CSV, in file order.
pub const TAIWAN_COLUMNS: [&str; 25] = [
    "ID",
    "LIMIT_BAL",
    "SEX",
    "EDUCATION",
    "MARRIAGE",
    "AGE",
    "PAY_0",
    "PAY_2",
    "PAY_3",
    "PAY_4",
    "PAY_5",
    "PAY_6",
    "BILL_AMT1",
    "BILL_AMT2",
    "BILL_AMT3",
    "BILL_AMT4",
    "BILL_AMT5",
    "BILL_AMT6",
    "PAY_AMT1",
    "PAY_AMT2",
    "PAY_AMT3",
    "PAY_AMT4",
    "PAY_AMT5",
    "PAY_AMT6",
    "default.payment.next.month",
];

/// Header spellings seen in common exports of the same file.
const LABEL_ALIASES: [&str; 3] = ["default payment next month", "default", "Y"];

pub const TAIWAN_ROWS: usize = 30_000;
pub const TAIWAN_POSITIVES: usize = 6_626;
pub const TAIWAN_SOURCE: &str =
    "https://archive.ics.uci.edu/dataset/350/default+of+credit+card+clients";

/// Random substreams derived from one experiment seed.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const POISON_INDICES: u64 = 3;
    pub const POISON_NOISE: u64 = 4;
    pub const RANDOM_WIS: u64 = 5;
}

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoisonMode {
    #[default]
    TrainAndTest,
    TestOnly,
}

impl PoisonMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoisonMode::TrainAndTest => "train-and-test",
            PoisonMode::TestOnly => "test-only",
        }
    }

    fn affects(&self, split: Split) -> bool {
        match self {
            PoisonMode::TrainAndTest => true,
            PoisonMode::TestOnly => split == Split::Test,
        }
    }
}

impl std::fmt::Display for PoisonMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PoisonMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train-and-test" => Ok(PoisonMode::TrainAndTest),
            "test-only" => Ok(PoisonMode::TestOnly),
            other => Err(Error::Config(format!(
                "unknown poison mode `{other}` (expected train-and-test or test-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonSpec {
    /// Sorted, distinct feature indices whose columns become noise.
    pub indices: Vec<usize>,
    pub mode: PoisonMode,
    pub seed: u64,
}

impl PoisonSpec {
    pub fn new(indices: impl IntoIterator<Item = usize>, mode: PoisonMode, seed: u64) -> Self {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        Self {
            indices: set.into_iter().collect(),
            mode,
            seed,
        }
    }

    /// Draws `count` distinct indices out of `n_features`.
    pub fn draw(n_features: usize, count: usize, mode: PoisonMode, seed: u64) -> Result<Self> {
        if count > n_features {
            return Err(Error::Structure(format!(
                "cannot poison {count} of {n_features} features"
            )));
        }
        let mut rng = seeded_stream(seed, streams::POISON_INDICES);
        let picked = rand::seq::index::sample(&mut rng, n_features, count).into_vec();
        Ok(Self::new(picked, mode, seed))
    }

    /// Features left intact.
    pub fn informative(&self, n_features: usize) -> BTreeSet<usize> {
        (0..n_features).filter(|j| !self.indices.contains(j)).collect()
    }
}

/// Row count, positive count, and a hash of the feature names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub rows: usize,
    pub positives: usize,
    pub feature_names_sha256: String,
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rows={} positives={} names={}",
            self.rows,
            self.positives,
            &self.feature_names_sha256[..12.min(self.feature_names_sha256.len())]
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<u8>,
    feature_names: Vec<String>,
    splits: Option<Vec<Split>>,
    standardization: Option<Standardization>,
    poison: Option<PoisonSpec>,
}

impl Dataset {
    /// `features` is row-major with `feature_names.len()` columns.
    pub fn new(features: Vec<f64>, labels: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        let n_features = feature_names.len();
        if n_features == 0 {
            return Err(Error::Structure("dataset needs at least one feature".into()));
        }
        if labels.is_empty() {
            return Err(Error::Structure("dataset has no rows".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::Structure(format!(
                "{} feature values for {} rows of {} features",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(pos) = labels.iter().position(|&y| y > 1) {
            return Err(Error::Structure(format!(
                "label {} at row {pos} is not 0 or 1",
                labels[pos]
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Structure(format!(
                "non-finite value at row {}, feature {}",
                pos / n_features,
                pos % n_features
            )));
        }
        Ok(Self {
            features,
            n_features,
            labels,
            feature_names,
            splits: None,
            standardization: None,
            poison: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features + feature]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn splits(&self) -> Option<&[Split]> {
        self.splits.as_deref()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn poison_spec(&self) -> Option<&PoisonSpec> {
        self.poison.as_ref()
    }

    /// Row indices carrying `split`, ascending.
    pub fn indices(&self, split: Split) -> Result<Vec<usize>> {
        let tags = self
            .splits
            .as_ref()
            .ok_or_else(|| Error::Precondition("dataset has no split assignment".into()))?;
        Ok(tags
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == split)
            .map(|(i, _)| i)
            .collect())
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.value(i, feature)).collect()
    }

    /// Sets explicit split tags, one per row.
    pub fn with_splits(mut self, tags: Vec<Split>) -> Result<Self> {
        if tags.len() != self.n_rows() {
            return Err(Error::Structure(format!(
                "{} split tags for {} rows",
                tags.len(),
                self.n_rows()
            )));
        }
        self.splits = Some(tags);
        Ok(self)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut hasher = Sha256::new();
        for name in &self.feature_names {
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        Fingerprint {
            rows: self.n_rows(),
            positives: self.positives(),
            feature_names_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }

    /// Writes the canonical 25-column CSV with 1-based IDs.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["ID".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.push(TAIWAN_COLUMNS[24].to_string());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = Vec::with_capacity(self.n_features + 2);
            rec.push((i + 1).to_string());
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<dataset csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn is_label_header(name: &str) -> bool {
    name == TAIWAN_COLUMNS[24] || LABEL_ALIASES.contains(&name)
}

fn header_matches(expected: &str, found: &str) -> bool {
    expected == found
        || (expected == "PAY_0" && found == "PAY_1")
        || (expected == TAIWAN_COLUMNS[24] && is_label_header(found))
}

fn check_header(header: &[String]) -> Result<()> {
    for (i, expected) in TAIWAN_COLUMNS.iter().enumerate() {
        match header.get(i) {
            None => return Err(Error::Schema(format!("missing column `{expected}`"))),
            Some(found) if !header_matches(expected, found) => {
                return Err(Error::Schema(if header.iter().any(|h| header_matches(expected, h)) {
                    format!("column `{expected}` out of place (found `{found}` at position {i})")
                } else {
                    format!("missing column `{expected}` (found `{found}` at position {i})")
                }))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = header.get(TAIWAN_COLUMNS.len()) {
        return Err(Error::Schema(format!("unexpected extra column `{extra}`")));
    }
    Ok(())
}

fn parse_rows(records: impl Iterator<Item = csv::Result<csv::StringRecord>>) -> Result<Dataset> {
    let n_features = TAIWAN_COLUMNS.len() - 2;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        let row = r + 1;
        if rec.len() != TAIWAN_COLUMNS.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("{} cells, expected {}", rec.len(), TAIWAN_COLUMNS.len()),
            });
        }
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: TAIWAN_COLUMNS[c].to_string(),
                message: format!("non-numeric cell `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: TAIWAN_COLUMNS[c].to_string(),
                    message: format!("non-finite cell `{cell}`"),
                });
            }
            if c <= n_features {
                features.push(v);
            } else if v == 0.0 || v == 1.0 {
                labels.push(v as u8);
            } else {
                return Err(Error::Parse {
                    row,
                    column: TAIWAN_COLUMNS[c].to_string(),
                    message: format!("label `{cell}` is not 0 or 1"),
                });
            }
        }
    }
    let names = TAIWAN_COLUMNS[1..=n_features]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Dataset::new(features, labels, names)
}

fn trimmed(rec: &csv::StringRecord) -> Vec<String> {
    rec.iter().map(|s| s.trim().to_string()).collect()
}

/// Parses the canonical CSV (one header row).
pub fn parse_taiwan<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => trimmed(&h?),
        None => return Err(Error::Schema("empty file".into())),
    };
    check_header(&header)?;
    parse_rows(records)
}

pub fn load_taiwan(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_taiwan(std::io::BufReader::new(file))
}

/// Converts the UCI export (a row of `X1..X23,Y` codes above the real
/// header) into the canonical CSV. Canonical input passes through.
pub fn convert_uci<R: Read, W: Write>(reader: R, writer: W) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let first = match records.next() {
        Some(h) => trimmed(&h?),
        None => return Err(Error::Schema("empty file".into())),
    };
    let ds = if check_header(&first).is_ok() {
        parse_rows(records)?
    } else {
        let second = match records.next() {
            Some(h) => trimmed(&h?),
            None => return Err(Error::Schema("missing second header row".into())),
        };
        check_header(&second)?;
        parse_rows(records)?
    };
    ds.write_csv(writer)?;
    Ok(ds)
}

/// Largest-remainder allocation of `n` items by `ratios`.
fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[k] > 0.0 {
            counts[k] += 1;
            left -= 1;
        }
    }
    counts
}

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

/// Stratified train/validation/test tags, shuffled under `seed`.
pub fn stratified_split(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Precondition(format!("invalid split ratios {ratios:?}")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "split ratios {ratios:?} do not sum to 1"
        )));
    }
    let active = ratios.iter().filter(|&&r| r > 0.0).count();
    let mut rng = seeded_stream(seed, streams::SPLIT);
    let mut tags = vec![Split::Train; ds.n_rows()];
    for class in [0u8, 1] {
        let mut rows: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.label(i) == class).collect();
        if rows.is_empty() {
            continue;
        }
        if rows.len() < active {
            return Err(Error::Structure(format!(
                "class {class} has {} samples, fewer than {active} splits",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        let counts = allocate(rows.len(), ratios);
        let mut start = 0;
        for (tag, count) in [Split::Train, Split::Validation, Split::Test]
            .into_iter()
            .zip(counts)
        {
            for &i in &rows[start..start + count] {
                tags[i] = tag;
            }
            start += count;
        }
    }
    ds.clone().with_splits(tags)
}

/// Smallest standard deviation accepted for a train-split feature.
pub const MIN_STD: f64 = 1e-12;

/// Z-scores every row with train-split mean and population std.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    let train = ds.indices(Split::Train)?;
    if train.is_empty() {
        return Err(Error::Structure("train split is empty".into()));
    }
    let n = train.len() as f64;
    let mut mean = vec![0.0; ds.n_features];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(ds.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; ds.n_features];
    for &i in &train {
        for ((s, v), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    if let Some(j) = std.iter().position(|&s| s < MIN_STD) {
        return Err(Error::Structure(format!(
            "feature `{}` is constant on the train split",
            ds.feature_names[j]
        )));
    }
    let mut out = ds.clone();
    for row in out.features.chunks_mut(ds.n_features) {
        for ((v, m), s) in row.iter_mut().zip(&mean).zip(&std) {
            *v = (*v - m) / s;
        }
    }
    out.standardization = Some(Standardization { mean, std });
    Ok(out)
}

/// Replaces the chosen columns with standard-normal noise.
pub fn poison(ds: &Dataset, spec: &PoisonSpec) -> Result<Dataset> {
    if let Some(&j) = spec.indices.iter().find(|&&j| j >= ds.n_features) {
        return Err(Error::Structure(format!(
            "poison index {j} out of range for {} features",
            ds.n_features
        )));
    }
    if spec.indices.is_empty() {
        return Ok(ds.clone());
    }
    if ds.standardization.is_none() {
        return Err(Error::Precondition(
            "poisoning expects standardized features".into(),
        ));
    }
    let tags = ds
        .splits
        .as_ref()
        .ok_or_else(|| Error::Precondition("dataset has no split assignment".into()))?;
    let mut rng = seeded_stream(spec.seed, streams::POISON_NOISE);
    let mut out = ds.clone();
    for (i, &tag) in tags.iter().enumerate() {
        if !spec.mode.affects(tag) {
            continue;
        }
        for &j in &spec.indices {
            out.features[i * ds.n_features + j] = rng.sample(StandardNormal);
        }
    }
    out.poison = Some(spec.clone());
    Ok(out)
}

/// Synthetic rows with the canonical schema and plausible marginals.
///
/// The label follows a logistic model on repayment status, credit limit,
/// and the latest payment, so every baseline has signal to find.
pub fn synthetic_taiwan(rows: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_features = TAIWAN_COLUMNS.len() - 2;
    let mut features = Vec::with_capacity(rows * n_features);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let z: f64 = rng.sample(StandardNormal);
        let limit = (10_000.0 * (2.0 + 8.0 * rng.random::<f64>())).round();
        let sex = f64::from(rng.random_range(1..=2u8));
        let education = f64::from(rng.random_range(1..=4u8));
        let marriage = f64::from(rng.random_range(1..=3u8));
        let age = f64::from(rng.random_range(21..=70u8));
        let mut row = vec![limit, sex, education, marriage, age];
        let base_pay = (z * 1.2).round().clamp(-2.0, 8.0);
        for _ in 0..6 {
            let jitter: f64 = rng.random_range(-1.0..=1.0);
            row.push((base_pay + jitter.round()).clamp(-2.0, 8.0));
        }
        let bill = limit * (0.2 + 0.6 * rng.random::<f64>());
        for _ in 0..6 {
            row.push((bill * (0.8 + 0.4 * rng.random::<f64>())).round());
        }
        for _ in 0..6 {
            row.push((bill * 0.1 * rng.random::<f64>()).round());
        }
        let logit = -1.6 + 0.9 * row[5] - 0.6 * (limit / 50_000.0 - 1.0)
            - 0.3 * (row[17] / (bill * 0.05 + 1.0) - 1.0)
            + 0.3 * rng.sample::<f64, _>(StandardNormal);
        let p = 1.0 / (1.0 + (-logit).exp());
        labels.push(u8::from(rng.random::<f64>() < p));
        features.extend(row);
    }
    let names = TAIWAN_COLUMNS[1..=n_features]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Dataset::new(features, labels, names)
}
