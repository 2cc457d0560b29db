//! Exact derivatives of the training loss with respect to every layer weight.
//!
//! The forward pass keeps each layer's eigendecomposition and input state.
//! The backward pass carries the loss co-state through `U_ℓ†` and, per layer,
//! contracts it against the Daleckii–Krein derivative of `exp(−iH)`:
//!
//! ```text
//! D exp(−iH)[E] = V (Φ ∘ (V† E V)) V†,
//! Φ_ab = (e^{−iλ_a} − e^{−iλ_b}) / (λ_a − λ_b),   Φ_aa = −i e^{−iλ_a}
//! ```
//!
//! Since `E = Σ_j θ'_j G_j` is linear in the generators, one `d × d`
//! contraction per layer yields the derivative along all generator
//! directions at once: `∂L/∂θ_j = 2 Re Tr(K G_j)` with `K = V Mᵀ V†`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generators::GeneratorSet;
use crate::linalg::{eigh, ComplexMatrix, EigenDecomposition, HERMITIAN_TOL};
use crate::qnn::{
    evolve, hamiltonian_from_inputs, initial_state, readout, remap_derivative, ModelParams,
    ProbabilityVector, Readout,
};
use crate::training::{cross_entropy, LossConfig, PROB_FLOOR};

/// Labelled sample borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: u8,
}

/// Cached forward pass for one sample.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input driving each generator slot.
    pub inputs: Vec<f64>,
    /// Eigendecomposition of each layer Hamiltonian.
    pub decompositions: Vec<EigenDecomposition>,
    /// `ψ_0 = |0⟩, ψ_1, …, ψ_L`.
    pub states: Vec<Vec<Complex64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[Complex64] {
        self.states.last().expect("trace always holds the initial state")
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.output().iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Batch loss and its gradient, shaped like `ModelParams::weights`.
#[derive(Debug, Clone)]
pub struct GradientRecord {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub layers: usize,
    pub n_generators: usize,
}

impl GradientRecord {
    pub fn get(&self, layer: usize, slot: usize) -> f64 {
        self.gradient[layer * self.n_generators + slot]
    }
}

pub fn forward_trace(x: &[f64], params: &ModelParams, gs: &GeneratorSet) -> Result<ForwardTrace> {
    let inputs = params.assignment().slot_inputs(x)?;
    let mut states = Vec::with_capacity(params.layers() + 1);
    let mut decompositions = Vec::with_capacity(params.layers());
    states.push(initial_state(params.dim()));
    for layer in 0..params.layers() {
        let h = hamiltonian_from_inputs(&inputs, params.layer_weights(layer), gs)?;
        let decomp = eigh(&h)?;
        let next = evolve(&decomp, states.last().unwrap());
        states.push(next);
        decompositions.push(decomp);
    }
    Ok(ForwardTrace {
        inputs,
        decompositions,
        states,
    })
}

fn degeneracy_threshold(eigenvalues: &[f64]) -> f64 {
    let max_abs = eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    1e-9 * max_abs.max(1.0)
}

/// First divided differences of `λ ↦ e^{−iλ}` over the spectrum.
pub fn loewner_matrix(decomp: &EigenDecomposition) -> ComplexMatrix {
    let lambda = &decomp.eigenvalues;
    let eps = degeneracy_threshold(lambda);
    let minus_i = Complex64::new(0.0, -1.0);
    ComplexMatrix::from_fn(lambda.len(), |a, b| {
        let delta = lambda[a] - lambda[b];
        let mid = 0.5 * (lambda[a] + lambda[b]);
        let phase = minus_i * Complex64::new(0.0, -mid).exp();
        if delta.abs() < eps {
            phase
        } else {
            // (e^{−iλa} − e^{−iλb})/(λa − λb) = −i e^{−i·mid} sin(δ/2)/(δ/2)
            let half = 0.5 * delta;
            phase * (half.sin() / half)
        }
    })
}

/// Directional derivative of `exp(−iH)` along Hermitian `e`.
pub fn frechet_expm(decomp: &EigenDecomposition, e: &ComplexMatrix) -> Result<ComplexMatrix> {
    if e.dim() != decomp.dim() {
        return Err(Error::Structure(format!(
            "direction is {0}x{0}, decomposition is {1}x{1}",
            e.dim(),
            decomp.dim()
        )));
    }
    let norm = e.frobenius_norm();
    let allowed = if norm < 1e-12 {
        HERMITIAN_TOL
    } else {
        HERMITIAN_TOL * norm
    };
    if e.hermitian_defect() > allowed {
        return Err(Error::Precondition(
            "Frechet direction must be Hermitian".into(),
        ));
    }
    let v = &decomp.eigenvectors;
    let phi = loewner_matrix(decomp);
    let mut rotated = v.dagger().matmul(e).matmul(v);
    for (r, p) in rotated.as_mut_slice().iter_mut().zip(phi.as_slice()) {
        *r *= p;
    }
    Ok(v.matmul(&rotated).matmul(&v.dagger()))
}

/// `∂CE/∂p_k` for one sample, plus the loss value.
fn probability_gradient(
    probs: &[f64],
    y: u8,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let p = ProbabilityVector::new(probs.to_vec())?;
    let q = readout(&p, cfg.readout)?;
    let weight = cfg.class_weights[usize::from(y)];
    let loss = cross_entropy(&q, y, cfg.class_weights);
    let qy = q.get(y);
    let mut grad = vec![0.0; probs.len()];
    if qy <= PROB_FLOOR {
        return Ok((loss, grad));
    }
    let dl_dq = -weight / qy;
    match cfg.readout {
        Readout::Parity => {
            for (k, g) in grad.iter_mut().enumerate() {
                if k % 2 == usize::from(y) {
                    *g = dl_dq;
                }
            }
        }
        Readout::FirstTwo => {
            let s = probs[0] + probs[1];
            let (own, other) = if y == 0 { (0, 1) } else { (1, 0) };
            grad[own] = dl_dq * probs[other] / (s * s);
            grad[other] = -dl_dq * probs[own] / (s * s);
        }
    }
    Ok((loss, grad))
}

/// Cross-entropy of one sample and its gradient with respect to all weights
/// (ridge excluded).
pub fn sample_gradient(
    sample: Sample<'_>,
    params: &ModelParams,
    gs: &GeneratorSet,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.parameter_count()];
    let loss = accumulate_sample_gradient(sample, params, gs, cfg, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate_sample_gradient(
    sample: Sample<'_>,
    params: &ModelParams,
    gs: &GeneratorSet,
    cfg: &LossConfig,
    grad: &mut [f64],
) -> Result<f64> {
    let trace = forward_trace(sample.x, params, gs)?;
    let probs = trace.probabilities();
    let (loss, dl_dp) = probability_gradient(&probs, sample.y, cfg)?;

    // dL = 2 Re(χ† dψ) with χ_k = (∂L/∂p_k) ψ_k
    let mut costate: Vec<Complex64> = trace
        .output()
        .iter()
        .zip(&dl_dp)
        .map(|(psi, g)| psi * *g)
        .collect();

    let n_gen = params.n_generators();
    let dim = params.dim();
    for layer in (0..params.layers()).rev() {
        let decomp = &trace.decompositions[layer];
        let v = &decomp.eigenvectors;
        let a = v.adjoint_mat_vec(&costate);
        let b = v.adjoint_mat_vec(&trace.states[layer]);
        let phi = loewner_matrix(decomp);
        // Mᵀ_ab = conj(a_b) Φ_ba b_a
        let m_t = ComplexMatrix::from_fn(dim, |r, c| a[c].conj() * phi[(c, r)] * b[r]);
        let k = v.matmul(&m_t).matmul(&v.dagger());

        let weights = params.layer_weights(layer);
        let row = &mut grad[layer * n_gen..(layer + 1) * n_gen];
        for (slot, g) in gs.iter().enumerate() {
            let x = trace.inputs[slot];
            if x == 0.0 {
                continue;
            }
            let dtheta = 2.0 * g.trace_product(&k).re;
            row[slot] += dtheta * remap_derivative(x * weights[slot]) * x;
        }

        // λ_{ℓ−1} = U_ℓ† λ_ℓ
        let rotated: Vec<Complex64> = a
            .iter()
            .zip(&decomp.eigenvalues)
            .map(|(c, &l)| c * Complex64::new(0.0, l).exp())
            .collect();
        costate = v.mat_vec(&rotated);
    }
    Ok(loss)
}

const CHUNK: usize = 16;

/// Mean weighted cross-entropy over the batch plus `λ‖w‖²`, with gradient.
///
/// Per-sample work runs in parallel over fixed-size chunks whose partial sums
/// are combined in chunk order, so the result does not depend on the thread
/// count.
pub fn loss_gradient(
    batch: &[Sample<'_>],
    params: &ModelParams,
    gs: &GeneratorSet,
    cfg: &LossConfig,
) -> Result<GradientRecord> {
    if batch.is_empty() {
        return Err(Error::Structure("gradient of an empty batch".into()));
    }
    params.validate(gs)?;
    let n_params = params.parameter_count();
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(chunk_idx, chunk)| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for (i, &sample) in chunk.iter().enumerate() {
                let l = accumulate_sample_gradient(sample, params, gs, cfg, &mut grad)?;
                if !l.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss at batch sample {}",
                        chunk_idx * CHUNK + i
                    )));
                }
                loss += l;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;

    let mut gradient = vec![0.0; n_params];
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        for (acc, v) in gradient.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let n = batch.len() as f64;
    loss /= n;
    for (g, w) in gradient.iter_mut().zip(params.weights()) {
        *g = *g / n + 2.0 * cfg.ridge * w;
    }
    loss += cfg.ridge * params.weights().iter().map(|w| w * w).sum::<f64>();
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("gradient entry {i} is not finite")));
    }
    Ok(GradientRecord {
        loss,
        gradient,
        layers: params.layers(),
        n_generators: params.n_generators(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::build_generators;
    use crate::linalg::expm_minus_i;
    use crate::training::total_loss;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(dim: usize, rng: &mut impl Rng) -> ComplexMatrix {
        ComplexMatrix::from_fn(dim, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .hermitian_part()
    }

    #[test]
    fn derivative_at_zero_is_minus_i_e() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = random_hermitian(4, &mut rng);
        let d = eigh(&ComplexMatrix::zeros(4)).unwrap();
        let got = frechet_expm(&d, &e).unwrap();
        let expected = e.scale(Complex64::new(0.0, -1.0));
        assert!(got.sub(&expected).frobenius_norm() < 1e-15);
    }

    #[test]
    fn commuting_direction() {
        let gs = build_generators(2).unwrap();
        let sz = &gs.get(2).matrix;
        let theta = 0.73;
        let h = sz.scale_real(theta);
        let d = eigh(&h).unwrap();
        let got = frechet_expm(&d, sz).unwrap();
        let expected = sz
            .scale(Complex64::new(0.0, -1.0))
            .matmul(&expm_minus_i(&h).unwrap());
        assert!(got.sub(&expected).frobenius_norm() < 1e-14);
    }

    #[test]
    fn matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let h = random_hermitian(5, &mut rng);
            let e = random_hermitian(5, &mut rng);
            let t = 1e-5;
            let plus = expm_minus_i(&h.add(&e.scale_real(t))).unwrap();
            let minus = expm_minus_i(&h.sub(&e.scale_real(t))).unwrap();
            let fd = plus.sub(&minus).scale_real(1.0 / (2.0 * t));
            let got = frechet_expm(&eigh(&h).unwrap(), &e).unwrap();
            let rel = got.sub(&fd).frobenius_norm() / fd.frobenius_norm();
            assert!(rel < 1e-6, "relative error {rel}");
        }
    }

    #[test]
    fn degenerate_spectrum_direction() {
        // H with a repeated eigenvalue exercises the limit branch.
        let h = ComplexMatrix::from_real_diagonal(&[0.4, 0.4, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let e = random_hermitian(3, &mut rng);
        let t = 1e-5;
        let fd = expm_minus_i(&h.add(&e.scale_real(t)))
            .unwrap()
            .sub(&expm_minus_i(&h.sub(&e.scale_real(t))).unwrap())
            .scale_real(1.0 / (2.0 * t));
        let got = frechet_expm(&eigh(&h).unwrap(), &e).unwrap();
        assert!(got.sub(&fd).frobenius_norm() / fd.frobenius_norm() < 1e-6);
    }

    #[test]
    fn non_hermitian_direction_rejected() {
        let d = eigh(&ComplexMatrix::zeros(2)).unwrap();
        let mut e = ComplexMatrix::zeros(2);
        e[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(matches!(frechet_expm(&d, &e), Err(Error::Precondition(_))));
    }

    fn fd_check(params: &ModelParams, batch: &[Sample<'_>], gs: &GeneratorSet, cfg: &LossConfig) {
        let rec = loss_gradient(batch, params, gs, cfg).unwrap();
        let h = 1e-5;
        for i in 0..params.parameter_count() {
            let mut p = params.clone();
            p.weights_mut()[i] += h;
            let up = total_loss(batch, &p, gs, cfg).unwrap();
            p.weights_mut()[i] -= 2.0 * h;
            let down = total_loss(batch, &p, gs, cfg).unwrap();
            let fd = (up - down) / (2.0 * h);
            let err = (rec.gradient[i] - fd).abs();
            assert!(
                err <= 1e-5 * fd.abs().max(1e-8) || err < 1e-8,
                "coord {i}: analytic {} vs fd {fd}",
                rec.gradient[i]
            );
        }
    }

    #[test]
    fn zero_weights_balanced_batch() {
        let gs = build_generators(3).unwrap();
        let params = ModelParams::zeros(3, 2, 4, Readout::Parity).unwrap();
        let xs = [[0.5, -1.0, 0.2, 0.9], [-0.3, 0.4, 1.1, -0.7]];
        let batch = [Sample { x: &xs[0], y: 0 }, Sample { x: &xs[1], y: 1 }];
        let cfg = LossConfig {
            readout: Readout::Parity,
            class_weights: [1.0, 1.0],
            ridge: 0.3,
        };
        fd_check(&params, &batch, &gs, &cfg);
    }

    #[test]
    fn ridge_only_when_inputs_vanish() {
        // all features zero and no bias slot: every gradient is 2λw
        let gs = build_generators(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params =
            ModelParams::random_uniform(2, 3, 3, Readout::Parity, 0.5, &mut rng).unwrap();
        let x = [0.0; 3];
        let batch = [Sample { x: &x, y: 1 }, Sample { x: &x, y: 0 }];
        let cfg = LossConfig {
            readout: Readout::Parity,
            class_weights: [1.0, 2.0],
            ridge: 0.25,
        };
        let rec = loss_gradient(&batch, &params, &gs, &cfg).unwrap();
        for (g, w) in rec.gradient.iter().zip(params.weights()) {
            assert_eq!(*g, 2.0 * 0.25 * w);
        }
    }

    #[test]
    fn random_configs_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (dim, readout) in [(2, Readout::Parity), (3, Readout::FirstTwo), (5, Readout::Parity)] {
            let gs = build_generators(dim).unwrap();
            let n_features = dim * dim - 2;
            let params = ModelParams::random_uniform(dim, 2, n_features, readout, 0.8, &mut rng)
                .unwrap();
            let xs: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..n_features).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let batch: Vec<Sample<'_>> = xs
                .iter()
                .enumerate()
                .map(|(i, x)| Sample { x, y: (i % 2) as u8 })
                .collect();
            let cfg = LossConfig {
                readout,
                class_weights: [0.7, 1.9],
                ridge: 1e-2,
            };
            fd_check(&params, &batch, &gs, &cfg);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let gs = build_generators(2).unwrap();
        let params = ModelParams::zeros(2, 1, 1, Readout::Parity).unwrap();
        let cfg = LossConfig::default();
        assert!(loss_gradient(&[], &params, &gs, &cfg).is_err());
    }
}
