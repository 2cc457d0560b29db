//! Classification and attribution metrics: macro-F1, ranking edit distance,
//! and the weighted interpretability score used in poisoning studies.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{seeded_stream, streams};
use crate::error::{Error, Result};

/// Features ordered from most to least important.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeatureList {
    order: Vec<usize>,
    scores: Vec<f64>,
}

impl RankedFeatureList {
    /// Ranks feature `i` by `scores[i]`, descending; ties go to the lower index.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s >= 0.0))
        {
            return Err(Error::Precondition(format!(
                "importance score of feature {i} must be finite and nonnegative, got {s}"
            )));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&i| scores[i]).collect();
        Ok(Self {
            order,
            scores: sorted,
        })
    }

    /// Builds a list from an explicit order and matching scores.
    pub fn new(order: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        if order.len() != scores.len() {
            return Err(Error::Structure(format!(
                "ranking has {} features but {} scores",
                order.len(),
                scores.len()
            )));
        }
        let mut seen = vec![false; order.len()];
        for &f in &order {
            if f >= order.len() || seen[f] {
                return Err(Error::Structure(format!(
                    "ranking order is not a permutation of 0..{}",
                    order.len()
                )));
            }
            seen[f] = true;
        }
        if scores.windows(2).any(|w| w[0] < w[1]) || scores.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Structure(
                "ranking scores must be nonnegative and non-increasing".into(),
            ));
        }
        Ok(Self { order, scores })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Importance score of a feature by id.
    pub fn score_of(&self, feature: usize) -> Option<f64> {
        self.order
            .iter()
            .position(|&f| f == feature)
            .map(|p| self.scores[p])
    }

    /// Position of a feature in the ranking (0 = most important).
    pub fn rank_of(&self, feature: usize) -> Option<usize> {
        self.order.iter().position(|&f| f == feature)
    }

    /// CSV with header `rank,feature_id,feature_name,score`; ranks start at 1.
    pub fn write_csv<W: Write>(&self, writer: W, names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "feature_id", "feature_name", "score"])?;
        for (rank, (&f, s)) in self.order.iter().zip(&self.scores).enumerate() {
            let name = names.get(f).map(String::as_str).unwrap_or("");
            w.write_record([
                (rank + 1).to_string(),
                f.to_string(),
                name.to_string(),
                format!("{s:?}"),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<ranking csv>", e))?;
        Ok(())
    }
}

/// Unweighted mean of per-class F1 over binary labels.
///
/// A class contributes only if it appears in the truth or in the
/// predictions; a class absent from both is skipped rather than scored 0.
pub fn macro_f1(predictions: &[u8], truth: &[u8]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Structure("macro-F1 of an empty label set".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::Structure(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if let Some(bad) = predictions.iter().chain(truth).find(|&&l| l > 1) {
        return Err(Error::Structure(format!("non-binary label {bad}")));
    }
    let mut total = 0.0;
    let mut classes = 0;
    for class in [0u8, 1u8] {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &t) in predictions.iter().zip(truth) {
            match (p == class, t == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fp + fn_ == 0 {
            continue;
        }
        classes += 1;
        total += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    }
    Ok(total / classes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditVariant {
    /// Insertions, deletions and substitutions.
    #[default]
    Levenshtein,
    /// Additionally counts an adjacent transposition as one edit
    /// (optimal string alignment).
    Damerau,
}

impl std::str::FromStr for EditVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "levenshtein" => Ok(Self::Levenshtein),
            "damerau" => Ok(Self::Damerau),
            other => Err(Error::Config(format!("unknown edit-distance variant `{other}`"))),
        }
    }
}

/// Edit distance between the orders of two rankings over the same features.
pub fn edit_distance(a: &RankedFeatureList, b: &RankedFeatureList) -> Result<usize> {
    edit_distance_with(a, b, EditVariant::Levenshtein)
}

pub fn edit_distance_with(
    a: &RankedFeatureList,
    b: &RankedFeatureList,
    variant: EditVariant,
) -> Result<usize> {
    let ua: BTreeSet<_> = a.order.iter().collect();
    let ub: BTreeSet<_> = b.order.iter().collect();
    if ua != ub {
        return Err(Error::Structure(
            "rankings are over different feature sets".into(),
        ));
    }
    Ok(sequence_edit_distance(&a.order, &b.order, variant))
}

/// Edit distance between arbitrary symbol sequences.
pub fn sequence_edit_distance<T: PartialEq>(a: &[T], b: &[T], variant: EditVariant) -> usize {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    let mut dp = vec![0usize; (n + 1) * width];
    for (j, cell) in dp[..width].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        dp[i * width] = i;
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut best = (dp[(i - 1) * width + j] + 1)
                .min(dp[i * width + j - 1] + 1)
                .min(dp[(i - 1) * width + j - 1] + cost);
            if variant == EditVariant::Damerau
                && i > 1
                && j > 1
                && a[i - 1] == b[j - 2]
                && a[i - 2] == b[j - 1]
            {
                best = best.min(dp[(i - 2) * width + j - 2] + 1);
            }
            dp[i * width + j] = best;
        }
    }
    dp[n * width + m]
}

/// Weighted interpretability score of a ranking's top `k` features.
///
/// The top-k scores are normalized to unit sum (uniform `1/k` when they sum
/// to zero); each normalized weight counts `+` if the feature is in
/// `informative` and `−` otherwise.
pub fn wis(ranking: &RankedFeatureList, informative: &BTreeSet<usize>, k: usize) -> Result<f64> {
    if informative.is_empty() {
        return Err(Error::Structure("informative feature set is empty".into()));
    }
    if k == 0 || k > ranking.len() {
        return Err(Error::Structure(format!(
            "top-k size {k} must be in 1..={}",
            ranking.len()
        )));
    }
    let top = &ranking.order[..k];
    let top_scores = &ranking.scores[..k];
    let sum: f64 = top_scores.iter().sum();
    let score = top
        .iter()
        .zip(top_scores)
        .map(|(f, &s)| {
            let w = if sum > 0.0 { s / sum } else { 1.0 / k as f64 };
            if informative.contains(f) {
                w
            } else {
                -w
            }
        })
        .sum();
    Ok(score)
}

/// Monte-Carlo mean WIS of uniformly random rankings with uniform scores.
pub fn random_wis_baseline(
    n_features: usize,
    informative: &BTreeSet<usize>,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Structure("random WIS baseline needs trials >= 1".into()));
    }
    let mut rng = seeded_stream(seed, streams::RANDOM_WIS);
    let scores = vec![1.0; n_features];
    let mut order: Vec<usize> = (0..n_features).collect();
    let mut total = 0.0;
    for _ in 0..trials {
        order.shuffle(&mut rng);
        let ranking = RankedFeatureList {
            order: order.clone(),
            scores: scores.clone(),
        };
        total += wis(&ranking, informative, k)?;
    }
    Ok(total / trials as f64)
}

/// Mean and sample standard deviation (n − 1); std is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
