//! The single-qudit network: every layer exponentiates one Hamiltonian in
//! which each generator is weighted by a remapped feature–weight product,
//! and the layers act in sequence on `|0⟩`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::GeneratorSet;
use crate::linalg::{eigh, ComplexMatrix, EigenDecomposition, QuditState, ZERO};
use crate::metrics::RankedFeatureList;
use crate::record::Record;

pub const MODEL_FORMAT: &str = "qudit-qnn-model";

/// Bounded rotation angle `2·atan(2z)`.
#[inline]
pub fn remap(z: f64) -> f64 {
    2.0 * (2.0 * z).atan()
}

/// `d/dz 2·atan(2z) = 4 / (1 + 4z²)`
#[inline]
pub fn remap_derivative(z: f64) -> f64 {
    4.0 / (1.0 + 4.0 * z * z)
}

/// Maps basis-state probabilities onto two classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// Odd basis states vote for class 1.
    #[default]
    Parity,
    /// `q_c = p_c / (p_0 + p_1)`.
    FirstTwo,
}

impl Readout {
    pub const FIRST_TWO_FLOOR: f64 = 1e-9;

    pub fn as_str(&self) -> &'static str {
        match self {
            Readout::Parity => "parity",
            Readout::FirstTwo => "first-two",
        }
    }
}

impl fmt::Display for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parity" => Ok(Readout::Parity),
            "first-two" => Ok(Readout::FirstTwo),
            other => Err(Error::Config(format!("unknown readout scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceMode {
    /// `|Σ_ℓ w^(ℓ)|`, the weight accumulated at first order across layers.
    #[default]
    Sum,
    /// `(1/L) Σ_ℓ |w^(ℓ)|`
    MeanAbs,
}

impl ImportanceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImportanceMode::Sum => "sum",
            ImportanceMode::MeanAbs => "mean-abs",
        }
    }
}

impl fmt::Display for ImportanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImportanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ImportanceMode::Sum),
            "mean-abs" => Ok(ImportanceMode::MeanAbs),
            other => Err(Error::Config(format!("unknown importance mode `{other}`"))),
        }
    }
}

/// What drives a generator slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Feature(usize),
    /// Constant input 1.0.
    Bias,
}

/// Generator slot → input binding. Feature `i` drives generator `i`;
/// remaining generators are bias slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureAssignment {
    slots: Vec<Slot>,
    n_features: usize,
}

impl FeatureAssignment {
    pub fn sequential(n_features: usize, n_generators: usize) -> Result<Self> {
        if n_features > n_generators {
            return Err(Error::Structure(format!(
                "{n_features} features cannot be encoded on {n_generators} generators"
            )));
        }
        let slots = (0..n_generators)
            .map(|g| {
                if g < n_features {
                    Slot::Feature(g)
                } else {
                    Slot::Bias
                }
            })
            .collect();
        Ok(Self { slots, n_features })
    }

    fn from_slots(slots: Vec<Slot>) -> Result<Self> {
        let mut features: Vec<usize> = slots
            .iter()
            .filter_map(|s| match s {
                Slot::Feature(f) => Some(*f),
                Slot::Bias => None,
            })
            .collect();
        let n_features = features.len();
        features.sort_unstable();
        if features.iter().enumerate().any(|(i, &f)| i != f) {
            return Err(Error::Structure(
                "assignment must bind each feature 0..n exactly once".into(),
            ));
        }
        Ok(Self { slots, n_features })
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_generators(&self) -> usize {
        self.slots.len()
    }

    /// Input value feeding each generator slot.
    pub fn slot_inputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::Structure(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self
            .slots
            .iter()
            .map(|s| match s {
                Slot::Feature(f) => x[*f],
                Slot::Bias => 1.0,
            })
            .collect())
    }

    fn encode(&self) -> String {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Feature(f) => f.to_string(),
                Slot::Bias => "bias".to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn decode(text: &str) -> Result<Self> {
        let slots = text
            .split_whitespace()
            .map(|tok| match tok {
                "bias" => Ok(Slot::Bias),
                t => t
                    .parse()
                    .map(Slot::Feature)
                    .map_err(|_| Error::ModelFormat(format!("bad assignment token `{t}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_slots(slots)
    }
}

/// Trainable state of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dim: usize,
    layers: usize,
    /// Row-major `layers × n_generators`.
    weights: Vec<f64>,
    pub readout: Readout,
    assignment: FeatureAssignment,
    /// Class-1 decision threshold on `q1`.
    pub threshold: f64,
}

impl ModelParams {
    pub fn zeros(dim: usize, layers: usize, n_features: usize, readout: Readout) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Structure(format!("qudit dimension must be >= 2, got {dim}")));
        }
        if layers == 0 {
            return Err(Error::Structure("at least one layer is required".into()));
        }
        let n_gen = dim * dim - 1;
        let assignment = FeatureAssignment::sequential(n_features, n_gen)?;
        Ok(Self {
            dim,
            layers,
            weights: vec![0.0; layers * n_gen],
            readout,
            assignment,
            threshold: 0.5,
        })
    }

    /// Weights drawn uniformly from `(−scale, scale)`.
    pub fn random_uniform(
        dim: usize,
        layers: usize,
        n_features: usize,
        readout: Readout,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut p = Self::zeros(dim, layers, n_features, readout)?;
        if scale > 0.0 {
            for w in &mut p.weights {
                *w = rng.random_range(-scale..scale);
            }
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn n_generators(&self) -> usize {
        self.assignment.n_generators()
    }

    pub fn n_features(&self) -> usize {
        self.assignment.n_features()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len()
    }

    pub fn assignment(&self) -> &FeatureAssignment {
        &self.assignment
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        let n = self.n_generators();
        &self.weights[layer * n..(layer + 1) * n]
    }

    pub fn weight(&self, layer: usize, slot: usize) -> f64 {
        self.weights[layer * self.n_generators() + slot]
    }

    pub fn set_weight(&mut self, layer: usize, slot: usize, value: f64) {
        let n = self.n_generators();
        self.weights[layer * n + slot] = value;
    }

    /// Replaces all weights; length must match.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::Structure(format!(
                "expected {} weights, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn validate(&self, gs: &GeneratorSet) -> Result<()> {
        if gs.dim() != self.dim || gs.len() != self.n_generators() {
            return Err(Error::Structure(format!(
                "model expects d={} with {} generators, generator set has d={} with {}",
                self.dim,
                self.n_generators(),
                gs.dim(),
                gs.len()
            )));
        }
        if let Some(i) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Numerical(format!("weight {i} is not finite")));
        }
        Ok(())
    }

    pub fn to_record(&self) -> Record {
        Record::new(MODEL_FORMAT)
            .field("dim", self.dim)
            .field("layers", self.layers)
            .field("generators", self.n_generators())
            .field("features", self.n_features())
            .field("readout", self.readout)
            .field("threshold", format!("{:?}", self.threshold))
            .field("assignment", self.assignment.encode())
            .matrix("weights", self.layers, self.n_generators(), self.weights.clone())
    }

    pub fn from_record(rec: &Record) -> Result<Self> {
        rec.expect_format(MODEL_FORMAT)?;
        let dim: usize = rec.parse("dim")?;
        let layers: usize = rec.parse("layers")?;
        let generators: usize = rec.parse("generators")?;
        let readout: Readout = rec.get("readout")?.parse()?;
        let threshold: f64 = rec.parse("threshold")?;
        let assignment = FeatureAssignment::decode(rec.get("assignment")?)?;
        if dim < 2 || generators != dim * dim - 1 || assignment.n_generators() != generators {
            return Err(Error::ModelFormat(format!(
                "inconsistent architecture: d={dim}, {generators} generators, {} slots",
                assignment.n_generators()
            )));
        }
        let w = rec.get_matrix("weights")?;
        if w.rows != layers || w.cols != generators || layers == 0 {
            return Err(Error::ModelFormat(format!(
                "weight matrix is {}x{}, expected {layers}x{generators}",
                w.rows, w.cols
            )));
        }
        Ok(Self {
            dim,
            layers,
            weights: w.values.clone(),
            readout,
            assignment,
            threshold,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_record().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_record(&Record::load(path)?)
    }
}

/// Measurement distribution over the computational basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

impl ProbabilityVector {
    pub const SUM_TOL: f64 = 1e-10;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Structure("empty probability vector".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Precondition(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::Precondition(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(dim: usize) -> Self {
        Self {
            probs: vec![1.0 / dim as f64; dim],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total_variation(&self, other: &ProbabilityVector) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDistribution {
    pub q0: f64,
    pub q1: f64,
}

impl ClassDistribution {
    pub fn get(&self, label: u8) -> f64 {
        if label == 0 {
            self.q0
        } else {
            self.q1
        }
    }
}

/// `H = Σ_j remap(x_j · w_j) G_j` over generator slots.
pub fn layer_hamiltonian(
    x: &[f64],
    layer_weights: &[f64],
    gs: &GeneratorSet,
    assignment: &FeatureAssignment,
) -> Result<ComplexMatrix> {
    let inputs = assignment.slot_inputs(x)?;
    hamiltonian_from_inputs(&inputs, layer_weights, gs)
}

pub(crate) fn hamiltonian_from_inputs(
    inputs: &[f64],
    layer_weights: &[f64],
    gs: &GeneratorSet,
) -> Result<ComplexMatrix> {
    if inputs.len() != gs.len() || layer_weights.len() != gs.len() {
        return Err(Error::Structure(format!(
            "{} inputs and {} weights for {} generators",
            inputs.len(),
            layer_weights.len(),
            gs.len()
        )));
    }
    let mut h = ComplexMatrix::zeros(gs.dim());
    for ((g, &x), &w) in gs.iter().zip(inputs).zip(layer_weights) {
        let theta = remap(x * w);
        if theta != 0.0 {
            g.accumulate_into(&mut h, theta);
        }
    }
    Ok(h)
}

/// `ψ ← exp(−iH) ψ` evaluated in the eigenbasis of `H`.
pub(crate) fn evolve(decomp: &EigenDecomposition, psi: &[Complex64]) -> Vec<Complex64> {
    let v = &decomp.eigenvectors;
    let mut coeffs = v.adjoint_mat_vec(psi);
    for (c, &l) in coeffs.iter_mut().zip(&decomp.eigenvalues) {
        *c *= Complex64::new(0.0, -l).exp();
    }
    v.mat_vec(&coeffs)
}

pub(crate) fn initial_state(dim: usize) -> Vec<Complex64> {
    let mut psi = vec![ZERO; dim];
    psi[0] = Complex64::new(1.0, 0.0);
    psi
}

/// Output state `U_L ⋯ U_1 |0⟩`.
pub fn forward_state(x: &[f64], params: &ModelParams, gs: &GeneratorSet) -> Result<QuditState> {
    params.validate(gs)?;
    let inputs = params.assignment.slot_inputs(x)?;
    let mut psi = initial_state(params.dim);
    for layer in 0..params.layers {
        let h = hamiltonian_from_inputs(&inputs, params.layer_weights(layer), gs)?;
        let decomp = eigh(&h)?;
        psi = evolve(&decomp, &psi);
    }
    Ok(QuditState::from_raw(psi))
}

pub fn forward(x: &[f64], params: &ModelParams, gs: &GeneratorSet) -> Result<ProbabilityVector> {
    let psi = forward_state(x, params, gs)?;
    ProbabilityVector::new(psi.probabilities())
}

pub fn readout(p: &ProbabilityVector, scheme: Readout) -> Result<ClassDistribution> {
    let probs = p.as_slice();
    match scheme {
        Readout::Parity => {
            let q1: f64 = probs.iter().skip(1).step_by(2).sum();
            let q0: f64 = probs.iter().step_by(2).sum();
            Ok(ClassDistribution { q0, q1 })
        }
        Readout::FirstTwo => {
            if probs.len() < 2 {
                return Err(Error::Structure(
                    "first-two readout needs at least two levels".into(),
                ));
            }
            let s = probs[0] + probs[1];
            if s < Readout::FIRST_TWO_FLOOR {
                return Err(Error::DegenerateReadout(s));
            }
            Ok(ClassDistribution {
                q0: probs[0] / s,
                q1: probs[1] / s,
            })
        }
    }
}

/// Class-1 probability for one sample.
pub fn predict_proba(x: &[f64], params: &ModelParams, gs: &GeneratorSet) -> Result<f64> {
    Ok(readout(&forward(x, params, gs)?, params.readout)?.q1)
}

pub fn predict(x: &[f64], params: &ModelParams, gs: &GeneratorSet) -> Result<u8> {
    Ok(u8::from(predict_proba(x, params, gs)? >= params.threshold))
}

/// Empirical distribution of `shots` projective measurements.
pub fn sample_shots(p: &ProbabilityVector, shots: u64, seed: u64) -> Result<ProbabilityVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_shots_with(p, shots, &mut rng)
}

/// Multinomial draw via a chain of conditional binomials.
pub fn sample_shots_with(
    p: &ProbabilityVector,
    shots: u64,
    rng: &mut impl Rng,
) -> Result<ProbabilityVector> {
    if shots == 0 {
        return Err(Error::Structure("shot count must be >= 1".into()));
    }
    let probs = p.as_slice();
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = shots;
    let mut mass_left = 1.0;
    let last = probs.len() - 1;
    for (k, &pk) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k == last {
            counts[k] = remaining;
            break;
        }
        let cond = if mass_left > 0.0 {
            (pk / mass_left).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = Binomial::new(remaining, cond)
            .map_err(|e| Error::Numerical(format!("binomial sampler: {e}")))?
            .sample(rng);
        counts[k] = draw;
        remaining -= draw;
        mass_left -= pk;
    }
    let total = shots as f64;
    Ok(ProbabilityVector {
        probs: counts.iter().map(|&c| c as f64 / total).collect(),
    })
}

/// Per-feature importance from the trained weights; bias slots are skipped.
pub fn importance_scores(params: &ModelParams, mode: ImportanceMode) -> Vec<f64> {
    let mut scores = vec![0.0; params.n_features()];
    for (slot, s) in params.assignment.slots().iter().enumerate() {
        if let Slot::Feature(f) = s {
            let column = (0..params.layers).map(|l| params.weight(l, slot));
            scores[*f] = match mode {
                ImportanceMode::Sum => column.sum::<f64>().abs(),
                ImportanceMode::MeanAbs => {
                    column.map(f64::abs).sum::<f64>() / params.layers as f64
                }
            };
        }
    }
    scores
}

pub fn feature_importance(params: &ModelParams, mode: ImportanceMode) -> Result<RankedFeatureList> {
    RankedFeatureList::from_scores(&importance_scores(params, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{build_generators, GeneratorKind};
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn remap_values() {
        assert_eq!(remap(0.0), 0.0);
        assert!((remap(0.5) - FRAC_PI_2).abs() < 1e-15);
        assert!((remap(-0.5) + FRAC_PI_2).abs() < 1e-15);
        assert!(remap(1e300).abs() < PI + 1e-12);
        assert!(remap(-1e300) > -PI - 1e-12);
    }

    #[test]
    fn remap_derivative_matches_difference() {
        for z in [-2.0, -0.3, 0.0, 0.1, 1.7] {
            let h = 1e-6;
            let fd = (remap(z + h) - remap(z - h)) / (2.0 * h);
            assert!((fd - remap_derivative(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_weights_give_zero_hamiltonian() {
        let gs = build_generators(5).unwrap();
        let a = FeatureAssignment::sequential(23, 24).unwrap();
        let h = layer_hamiltonian(&[0.7; 23], &[0.0; 24], &gs, &a).unwrap();
        assert_eq!(h, ComplexMatrix::zeros(5));
    }

    #[test]
    fn single_generator_hamiltonian() {
        let gs = build_generators(5).unwrap();
        let a = FeatureAssignment::sequential(23, 24).unwrap();
        let mut w = vec![0.0; 24];
        w[0] = 0.3;
        let x = vec![1.0; 23];
        let h = layer_hamiltonian(&x, &w, &gs, &a).unwrap();
        let expected = gs.get(0).matrix.scale_real(remap(0.3));
        assert!(h.sub(&expected).frobenius_norm() < 1e-15);
    }

    #[test]
    fn qubit_hamiltonian_half_pi_sigma_x() {
        // d=2, two features + bias slot all at 1, w=(0.5,0,0)
        let gs = build_generators(2).unwrap();
        let a = FeatureAssignment::sequential(2, 3).unwrap();
        let h = layer_hamiltonian(&[1.0, 1.0], &[0.5, 0.0, 0.0], &gs, &a).unwrap();
        let expected = gs.get(0).matrix.scale_real(FRAC_PI_2);
        assert!(h.sub(&expected).frobenius_norm() < 1e-15);
        assert!(layer_hamiltonian(&[1.0], &[0.5, 0.0, 0.0], &gs, &a).is_err());
    }

    #[test]
    fn identity_circuit_stays_in_ground_state() {
        let gs = build_generators(5).unwrap();
        let params = ModelParams::zeros(5, 3, 23, Readout::Parity).unwrap();
        let p = forward(&[1.3; 23], &params, &gs).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_level_rotation() {
        // H = θ σx gives p = (cos²θ, sin²θ)
        let gs = build_generators(2).unwrap();
        let mut params = ModelParams::zeros(2, 1, 1, Readout::Parity).unwrap();
        let w = 0.37;
        params.set_weight(0, 0, w);
        let x = 0.8;
        let theta = remap(x * w);
        let p = forward(&[x], &params, &gs).unwrap();
        assert!((p.as_slice()[0] - theta.cos().powi(2)).abs() < 1e-14);
        assert!((p.as_slice()[1] - theta.sin().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn commuting_layers_add_angles() {
        let gs = build_generators(5).unwrap();
        let slot = gs.position(GeneratorKind::Symmetric { j: 0, k: 1 }).unwrap();
        let mut params = ModelParams::zeros(5, 2, 23, Readout::Parity).unwrap();
        params.set_weight(0, slot, 0.21);
        params.set_weight(1, slot, -0.64);
        let x = vec![0.9; 23];
        let t1 = remap(0.9 * 0.21);
        let t2 = remap(0.9 * -0.64);
        let p = forward(&x, &params, &gs).unwrap();
        assert!((p.as_slice()[1] - (t1 + t2).sin().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn readout_schemes() {
        let p = ProbabilityVector::new(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let q = readout(&p, Readout::Parity).unwrap();
        assert_eq!((q.q0, q.q1), (1.0, 0.0));

        let p = ProbabilityVector::new(vec![0.2, 0.3, 0.1, 0.25, 0.15]).unwrap();
        let q = readout(&p, Readout::Parity).unwrap();
        assert!((q.q1 - 0.55).abs() < 1e-15);
        assert!((q.q0 + q.q1 - 1.0).abs() < 1e-10);

        let p = ProbabilityVector::new(vec![0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let q = readout(&p, Readout::FirstTwo).unwrap();
        assert_eq!((q.q0, q.q1), (0.5, 0.5));

        let p = ProbabilityVector::new(vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            readout(&p, Readout::FirstTwo),
            Err(Error::DegenerateReadout(_))
        ));
    }

    #[test]
    fn shots_examples() {
        let p = ProbabilityVector::new(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(sample_shots(&p, 17, 3).unwrap(), p);
        assert!(sample_shots(&p, 0, 3).is_err());

        let u = ProbabilityVector::uniform(5);
        let a = sample_shots(&u, 1_000_000, 42).unwrap();
        let b = sample_shots(&u, 1_000_000, 42).unwrap();
        assert_eq!(a, b);
        for &pk in a.as_slice() {
            assert!((pk - 0.2).abs() < 0.002);
        }
    }

    #[test]
    fn importance_modes() {
        let mut params = ModelParams::zeros(2, 2, 2, Readout::Parity).unwrap();
        params.set_weight(0, 0, 0.3);
        params.set_weight(1, 0, -0.3);
        params.set_weight(0, 1, 0.1);
        params.set_weight(1, 1, 0.05);
        // bias slot weight must not show up
        params.set_weight(0, 2, 9.0);
        let sum = importance_scores(&params, ImportanceMode::Sum);
        assert!(sum[0].abs() < 1e-15);
        assert!((sum[1] - 0.15).abs() < 1e-15);
        let mean_abs = importance_scores(&params, ImportanceMode::MeanAbs);
        assert!((mean_abs[0] - 0.3).abs() < 1e-15);

        let r = feature_importance(&params, ImportanceMode::Sum).unwrap();
        assert_eq!(r.order(), &[1, 0]);
    }

    #[test]
    fn importance_accumulates_layers() {
        let mut params = ModelParams::zeros(2, 3, 1, Readout::Parity).unwrap();
        for (l, w) in [0.1, 0.2, 0.3].into_iter().enumerate() {
            params.set_weight(l, 0, w);
        }
        let s = importance_scores(&params, ImportanceMode::Sum);
        assert!((s[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn model_record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params =
            ModelParams::random_uniform(5, 16, 23, Readout::FirstTwo, 0.1, &mut rng).unwrap();
        params.threshold = 0.4375;
        assert_eq!(params.parameter_count(), 384);
        let text = params.to_record().to_text();
        let back = ModelParams::from_record(&Record::from_text(&text).unwrap()).unwrap();
        assert_eq!(back, params);
        for (a, b) in back.weights().iter().zip(params.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn too_many_features_rejected() {
        assert!(ModelParams::zeros(2, 1, 23, Readout::Parity).is_err());
        assert!(ModelParams::zeros(5, 0, 23, Readout::Parity).is_err());
    }
}
