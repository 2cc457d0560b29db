//! Generalized Gell-Mann basis of su(d).
//!
//! Generators are emitted in a fixed order: for every pair `j < k` the real
//! symmetric generator followed by the imaginary antisymmetric one, then the
//! `d − 1` diagonal generators by increasing level. Feature slots in the
//! network are bound to this order, so it must not change.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, I, ONE};

/// Hilbert–Schmidt normalization `Tr(G_i G_j) = α δ_ij` of this basis.
pub const HS_NORMALIZATION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    /// `|j⟩⟨k| + |k⟩⟨j|`
    Symmetric { j: usize, k: usize },
    /// `−i|j⟩⟨k| + i|k⟩⟨j|`
    Antisymmetric { j: usize, k: usize },
    /// Diagonal generator of level `l` (1-based), nonzero on `0..=l`.
    Diagonal { level: usize },
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub kind: GeneratorKind,
    pub matrix: ComplexMatrix,
    /// Nonzero entries `(row, col, value)`.
    entries: Vec<(usize, usize, Complex64)>,
}

impl Generator {
    fn new(kind: GeneratorKind, dim: usize) -> Self {
        let entries = match kind {
            GeneratorKind::Symmetric { j, k } => vec![(j, k, ONE), (k, j, ONE)],
            GeneratorKind::Antisymmetric { j, k } => vec![(j, k, -I), (k, j, I)],
            GeneratorKind::Diagonal { level } => {
                let l = level as f64;
                let norm = (2.0 / (l * (l + 1.0))).sqrt();
                let mut e: Vec<_> = (0..level)
                    .map(|i| (i, i, Complex64::new(norm, 0.0)))
                    .collect();
                e.push((level, level, Complex64::new(-l * norm, 0.0)));
                e
            }
        };
        let mut matrix = ComplexMatrix::zeros(dim);
        for &(r, c, v) in &entries {
            matrix[(r, c)] = v;
        }
        Self {
            kind,
            matrix,
            entries,
        }
    }

    pub fn entries(&self) -> &[(usize, usize, Complex64)] {
        &self.entries
    }

    /// `target += coeff · G`
    #[inline]
    pub fn accumulate_into(&self, target: &mut ComplexMatrix, coeff: f64) {
        for &(r, c, v) in &self.entries {
            target[(r, c)] += v * coeff;
        }
    }

    /// `Tr(K G)` using only the nonzero entries of `G`.
    #[inline]
    pub fn trace_product(&self, k: &ComplexMatrix) -> Complex64 {
        self.entries.iter().map(|&(r, c, v)| k[(c, r)] * v).sum()
    }
}

/// The `d² − 1` generators of su(d) in canonical order.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    dim: usize,
    generators: Vec<Generator>,
}

impl GeneratorSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn get(&self, i: usize) -> &Generator {
        &self.generators[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Generator> {
        self.generators.iter()
    }

    /// Index of a generator by kind.
    pub fn position(&self, kind: GeneratorKind) -> Option<usize> {
        self.generators.iter().position(|g| g.kind == kind)
    }
}

pub fn build_generators(dim: usize) -> Result<GeneratorSet> {
    if dim < 2 {
        return Err(Error::Structure(format!(
            "su(d) generators need d >= 2, got {dim}"
        )));
    }
    let mut generators = Vec::with_capacity(dim * dim - 1);
    for j in 0..dim - 1 {
        for k in (j + 1)..dim {
            generators.push(Generator::new(GeneratorKind::Symmetric { j, k }, dim));
            generators.push(Generator::new(GeneratorKind::Antisymmetric { j, k }, dim));
        }
    }
    for level in 1..dim {
        generators.push(Generator::new(GeneratorKind::Diagonal { level }, dim));
    }
    Ok(GeneratorSet { dim, generators })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraReport {
    pub dim: usize,
    pub count: usize,
    pub symmetric: usize,
    pub antisymmetric: usize,
    pub diagonal: usize,
    pub max_abs_trace: f64,
    pub max_offdiag_inner_product: f64,
    pub max_norm_deviation: f64,
    pub max_hermitian_defect: f64,
    /// Mean of `Tr(G_i²)`; 2 for this construction.
    pub normalization: f64,
}

impl AlgebraReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.count == self.dim * self.dim - 1
            && self.max_abs_trace < 1e-14
            && self.max_offdiag_inner_product < tol
            && self.max_norm_deviation < tol
            && self.max_hermitian_defect == 0.0
    }
}

/// Hilbert–Schmidt inner product `Tr(A† B)`.
fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x.conj() * y)
        .sum()
}

pub fn check_algebra(gs: &GeneratorSet) -> AlgebraReport {
    let mut report = AlgebraReport {
        dim: gs.dim,
        count: gs.len(),
        symmetric: 0,
        antisymmetric: 0,
        diagonal: 0,
        max_abs_trace: 0.0,
        max_offdiag_inner_product: 0.0,
        max_norm_deviation: 0.0,
        max_hermitian_defect: 0.0,
        normalization: 0.0,
    };
    let mut norm_sum = 0.0;
    for (i, gi) in gs.iter().enumerate() {
        match gi.kind {
            GeneratorKind::Symmetric { .. } => report.symmetric += 1,
            GeneratorKind::Antisymmetric { .. } => report.antisymmetric += 1,
            GeneratorKind::Diagonal { .. } => report.diagonal += 1,
        }
        report.max_abs_trace = report.max_abs_trace.max(gi.matrix.trace().norm());
        report.max_hermitian_defect = report
            .max_hermitian_defect
            .max(gi.matrix.hermitian_defect());
        for (j, gj) in gs.iter().enumerate().skip(i) {
            let ip = hs_inner(&gi.matrix, &gj.matrix);
            if i == j {
                norm_sum += ip.re;
                report.max_norm_deviation = report
                    .max_norm_deviation
                    .max((ip - HS_NORMALIZATION).norm());
            } else {
                report.max_offdiag_inner_product = report.max_offdiag_inner_product.max(ip.norm());
            }
        }
    }
    if !gs.is_empty() {
        report.normalization = norm_sum / gs.len() as f64;
    }
    report
}
