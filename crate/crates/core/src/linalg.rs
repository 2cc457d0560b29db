//! Dense complex linear algebra for small Hermitian problems.
//!
//! Everything here works on `d × d` matrices with `d` at most a few dozen, so
//! matrices are plain row-major `Vec<Complex64>` buffers. The Hermitian
//! eigensolver is a cyclic complex Jacobi iteration; the unitary
//! `exp(-iH)` is always formed from that decomposition so the same factors
//! can be reused when differentiating.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Relative Hermiticity tolerance accepted by [`eigh`].
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Largest dimension the dense routines are meant for.
pub const MAX_DIM: usize = 64;

const MAX_SWEEPS: usize = 64;
const JACOBI_TOL: f64 = 1e-15;

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    /// Builds a matrix from row-major entries; `entries.len()` must be a square.
    pub fn from_row_major(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::Structure(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Ok(Self { dim, data: entries })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == ZERO {
                    continue;
                }
                let rhs_row = &rhs.data[k * n..(k + 1) * n];
                let out_row = &mut out.data[r * n..(r + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mat_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.dim, v.len(), "mat_vec dimension mismatch");
        let n = self.dim;
        (0..n)
            .map(|r| {
                self.data[r * n..(r + 1) * n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `self† · v`
    pub fn adjoint_mat_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.dim, v.len(), "mat_vec dimension mismatch");
        let n = self.dim;
        let mut out = vec![ZERO; n];
        for (r, &vr) in v.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.data[r * n + c].conj() * vr;
            }
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    /// In-place `self += s · rhs`.
    pub fn add_scaled(&mut self, rhs: &Self, s: Complex64) {
        assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += s * b;
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `‖H − H†‖_F`
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for r in 0..n {
            for c in 0..n {
                acc += (self[(r, c)] - self[(c, r)].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// `(H + H†) / 2`
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.dim, |r, c| (self[(r, c)] + self[(c, r)].conj()) * 0.5)
    }

    /// Frobenius distance to the identity of `self† self`.
    pub fn unitarity_defect(&self) -> f64 {
        self.dagger()
            .matmul(self)
            .sub(&Self::identity(self.dim))
            .frobenius_norm()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.dim + c]
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for r in 0..self.dim {
            write!(f, "  ")?;
            for c in 0..self.dim {
                let z = self[(r, c)];
                write!(f, "{:+.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Pure state of a single qudit.
#[derive(Debug, Clone, PartialEq)]
pub struct QuditState {
    amplitudes: Vec<Complex64>,
}

impl QuditState {
    pub const NORM_TOL: f64 = 1e-10;

    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Structure("qudit state needs dimension >= 1".into()));
        }
        let norm_sqr: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > Self::NORM_TOL {
            return Err(Error::Precondition(format!(
                "state is not normalized: sum |c_k|^2 = {norm_sqr}"
            )));
        }
        Ok(Self { amplitudes })
    }

    /// Computational basis state `|k⟩`.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index {k} out of range for dimension {dim}");
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[k] = ONE;
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Born-rule probabilities `|c_k|²`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub(crate) fn from_raw(amplitudes: Vec<Complex64>) -> Self {
        Self { amplitudes }
    }
}

/// `H = V diag(λ) V†` with ascending real eigenvalues.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors.
    pub eigenvectors: ComplexMatrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V f(Λ) V†` for a diagonal function given per eigenvalue.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> Complex64) -> ComplexMatrix {
        let n = self.dim();
        let v = &self.eigenvectors;
        let fl: Vec<Complex64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        ComplexMatrix::from_fn(n, |r, c| {
            (0..n).map(|k| v[(r, k)] * fl[k] * v[(c, k)].conj()).sum()
        })
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.reconstruct_with(|l| Complex64::new(l, 0.0))
    }

    /// `exp(−iH)` from the cached factors.
    pub fn exp_minus_i(&self) -> ComplexMatrix {
        self.reconstruct_with(|l| Complex64::new(0.0, -l).exp())
    }
}

fn check_hermitian(h: &ComplexMatrix) -> Result<()> {
    if h.dim() == 0 {
        return Err(Error::Structure("empty matrix".into()));
    }
    if !h.is_finite() {
        return Err(Error::Precondition("matrix has non-finite entries".into()));
    }
    let norm = h.frobenius_norm();
    let defect = h.hermitian_defect();
    let allowed = if norm < 1e-12 {
        HERMITIAN_TOL
    } else {
        HERMITIAN_TOL * norm
    };
    if defect > allowed {
        return Err(Error::Precondition(format!(
            "matrix is not Hermitian: ||H - H^dagger||_F = {defect:e} (norm {norm:e})"
        )));
    }
    Ok(())
}

fn off_diagonal_norm(a: &ComplexMatrix) -> f64 {
    let n = a.dim();
    let mut acc = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            acc += a[(p, q)].norm_sqr();
        }
    }
    (2.0 * acc).sqrt()
}

/// Hermitian eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized before iterating, so rounding noise from
/// Hamiltonian assembly is absorbed. Eigenvalues come back ascending; ties
/// keep the order in which the iteration produced them.
pub fn eigh(h: &ComplexMatrix) -> Result<EigenDecomposition> {
    check_hermitian(h)?;
    let n = h.dim();
    let mut a = h.hermitian_part();
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm();

    let mut sweeps = 0;
    while off_diagonal_norm(&a) > JACOBI_TOL * scale {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                residual: off_diagonal_norm(&a),
            });
        }
        sweeps += 1;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                jacobi_rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]));
    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = ComplexMatrix::from_fn(n, |r, c| v[(r, order[c])]);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Annihilates `a[p,q]` with the unitary `W = Φ R`, where `Φ` removes the
/// phase of `a[p,q]` and `R` is the classical real Jacobi rotation.
fn jacobi_rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag < f64::MIN_POSITIVE {
        return;
    }
    let phase = apq / mag;
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let tau = (aqq - app) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = a.dim();
    let conj_phase = phase.conj();

    // A W and V W: columns p, q.
    for r in 0..n {
        let x = a[(r, p)];
        let y = a[(r, q)];
        a[(r, p)] = x * c - y * conj_phase * s;
        a[(r, q)] = x * s + y * conj_phase * c;
        let x = v[(r, p)];
        let y = v[(r, q)];
        v[(r, p)] = x * c - y * conj_phase * s;
        v[(r, q)] = x * s + y * conj_phase * c;
    }
    // W† (A W): rows p, q.
    for r in 0..n {
        let x = a[(p, r)];
        let y = a[(q, r)];
        a[(p, r)] = x * c - y * phase * s;
        a[(q, r)] = x * s + y * phase * c;
    }
    a[(p, q)] = ZERO;
    a[(q, p)] = ZERO;
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
}

/// `U = exp(−iH)` for Hermitian `H`.
pub fn expm_minus_i(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    Ok(eigh(h)?.exp_minus_i())
}

/// Applies a unitary to a state.
pub fn apply(u: &ComplexMatrix, psi: &QuditState) -> Result<QuditState> {
    if u.dim() != psi.dim() {
        return Err(Error::Structure(format!(
            "cannot apply a {0}x{0} operator to a dimension-{1} state",
            u.dim(),
            psi.dim()
        )));
    }
    debug_assert!(u.unitarity_defect() < 1e-8, "operator is not unitary");
    Ok(QuditState::from_raw(u.mat_vec(psi.amplitudes())))
}
