//! Dense complex linear algebra used throughout the relay analysis.
//!
//! Matrices are `nalgebra` dense matrices of `Complex64`. Storage is
//! column-major, so [`vec`] is a plain copy of the backing slice and maps
//! entry `(i, j)` to index `j * rows + i`. With this convention the identity
//! `vec(A1 A2 A3) = (A3^T ⊗ A1) vec(A2)` holds, which fixes the orientation of
//! every Kronecker-structured operator in [`crate::covariance`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative tolerance for Hermitian symmetry: `‖X − X^H‖ ≤ TOL_HERM (1 + ‖X‖)`.
pub const TOL_HERM: f64 = 1e-10;
/// Relative tolerance for positive semidefiniteness: `λ_min ≥ −TOL_PSD (1 + λ_max)`.
pub const TOL_PSD: f64 = 1e-9;
/// Largest condition number [`solve_linear`] accepts.
pub const MAX_CONDITION: f64 = 1e12;

/// Shorthand for a complex scalar.
#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Real scalar lifted to the complex field.
#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Column-stacking vectorization.
pub fn vec(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &CVec, rows: usize, cols: usize) -> Result<CMat> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape a length-{} vector into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(CMat::from_column_slice(rows, cols, v.as_slice()))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// The diagonal-selection operator `D_M` acting on `vec` of an `M×M` matrix.
///
/// It is kept implicit: applying it is a gather over the `M` positions
/// `i·M + i`, and [`SelectionMatrix::to_dense`] exists only for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionMatrix {
    dim: usize,
}

impl SelectionMatrix {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("selection matrix needs M >= 1".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Positions of the ones on the diagonal, in increasing order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim).map(move |i| i * self.dim + i)
    }

    fn is_selected(&self, k: usize) -> bool {
        k % (self.dim + 1) == 0
    }

    /// `D_M v`.
    pub fn apply(&self, v: &CVec) -> CVec {
        assert_eq!(v.len(), self.dim * self.dim, "selection matrix size mismatch");
        let mut out = CVec::zeros(v.len());
        for k in self.indices() {
            out[k] = v[k];
        }
        out
    }

    /// `D_M X`, i.e. keep only the selected rows of `X`.
    pub fn left_mul(&self, x: &CMat) -> CMat {
        assert_eq!(x.nrows(), self.dim * self.dim, "selection matrix size mismatch");
        let mut out = x.clone();
        for r in 0..x.nrows() {
            if !self.is_selected(r) {
                out.row_mut(r).fill(cr(0.0));
            }
        }
        out
    }

    /// `X D_M`, i.e. keep only the selected columns of `X`.
    pub fn right_mul(&self, x: &CMat) -> CMat {
        assert_eq!(x.ncols(), self.dim * self.dim, "selection matrix size mismatch");
        let mut out = x.clone();
        for c in 0..x.ncols() {
            if !self.is_selected(c) {
                out.column_mut(c).fill(cr(0.0));
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMat {
        let n = self.dim * self.dim;
        let mut out = CMat::zeros(n, n);
        for k in self.indices() {
            out[(k, k)] = cr(1.0);
        }
        out
    }
}

/// `diag(X)`: a copy of `X` with every off-diagonal entry set to zero.
pub fn diag_part(x: &CMat) -> CMat {
    let mut out = CMat::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows().min(x.ncols()) {
        out[(i, i)] = x[(i, i)];
    }
    out
}

/// `(X + X^H) / 2`.
pub fn hermitian_part(x: &CMat) -> CMat {
    (x + x.adjoint()) * cr(0.5)
}

pub fn is_hermitian(x: &CMat) -> bool {
    x.is_square() && (x - x.adjoint()).norm() <= TOL_HERM * (1.0 + x.norm())
}

/// Eigen-decomposition of the Hermitian part of `x`, eigenvalues ascending.
pub fn hermitian_eigen(x: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitian_part(x));
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Checks Hermitian symmetry and eigenvalue sign within the module tolerances.
pub fn check_psd(x: &CMat) -> Result<()> {
    if !is_hermitian(x) {
        return Err(Error::Domain("matrix is not Hermitian".into()));
    }
    let (values, _) = hermitian_eigen(x);
    let lo = values.first().copied().unwrap_or(0.0);
    let hi = values.last().copied().unwrap_or(0.0);
    if lo < -TOL_PSD * (1.0 + hi.abs()) {
        return Err(Error::NotPsd { min_eigenvalue: lo });
    }
    Ok(())
}

/// Principal square root of a Hermitian PSD matrix.
///
/// Eigenvalues inside the PSD tolerance band below zero are clamped to zero.
pub fn herm_sqrt(x: &CMat) -> Result<CMat> {
    check_psd(x)?;
    let (values, vectors) = hermitian_eigen(x);
    let roots: Vec<Complex64> = values.iter().map(|&v| cr(v.max(0.0).sqrt())).collect();
    let scaled = CMat::from_fn(x.nrows(), x.ncols(), |i, j| vectors[(i, j)] * roots[j]);
    Ok(hermitian_part(&(scaled * vectors.adjoint())))
}

/// Solution of a square linear system together with the condition estimate used to accept it.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: CMat,
    /// Ratio of extreme singular values of the system matrix.
    pub condition: f64,
}

/// Condition number in the 2-norm, from the singular values.
pub fn condition_number(a: &CMat) -> f64 {
    let sv = a.clone().singular_values();
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `A x = b` by LU with partial pivoting, refusing systems whose
/// condition estimate exceeds [`MAX_CONDITION`].
pub fn solve_linear(a: &CMat, b: &CMat) -> Result<LinearSolution> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "solve_linear: A is {}x{}, b is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let condition = condition_number(a);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::NearSingular { condition });
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or(Error::NearSingular { condition })?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NearSingular { condition });
    }
    Ok(LinearSolution { x, condition })
}

/// Lower Cholesky factor of a Hermitian matrix, adding diagonal jitter
/// (starting at `jitter · (1 + max|diag|)`) until the factorization succeeds.
pub fn cholesky_jittered(x: &CMat, jitter: f64) -> Result<CMat> {
    let h = hermitian_part(x);
    let n = h.nrows();
    let scale = 1.0 + (0..n).map(|i| h[(i, i)].re.abs()).fold(0.0, f64::max);
    let mut shift = 0.0;
    for _ in 0..30 {
        let shifted = &h + identity(n) * cr(shift);
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch.l());
        }
        shift = if shift == 0.0 { jitter * scale } else { shift * 10.0 };
    }
    Err(Error::NotPsd {
        min_eigenvalue: hermitian_eigen(&h).0[0],
    })
}

/// `log det X` for Hermitian positive definite `X` (natural log).
pub fn log_det_hpd(x: &CMat) -> Result<f64> {
    let ch = hermitian_part(x)
        .cholesky()
        .ok_or_else(|| Error::Domain("log-det of a matrix that is not positive definite".into()))?;
    let l = ch.l();
    Ok((0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn inverse_hpd(x: &CMat) -> Result<CMat> {
    let ch = hermitian_part(x)
        .cholesky()
        .ok_or_else(|| Error::Domain("inverse of a matrix that is not positive definite".into()))?;
    Ok(hermitian_part(&ch.inverse()))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(a: &CMat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    match a.clone().try_schur(1e-14, 10_000) {
        Some(schur) => {
            let (_, t) = schur.unpack();
            (0..t.nrows()).map(|i| t[(i, i)].norm()).fold(0.0, f64::max)
        }
        // Gelfand bound as a conservative fallback.
        None => {
            let mut p = a.clone();
            for _ in 0..6 {
                p = &p * &p;
            }
            p.norm().powf(1.0 / 64.0)
        }
    }
}

/// `‖X‖_F²`.
pub fn fro2(x: &CMat) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

/// Real part of the trace.
pub fn trace_re(x: &CMat) -> f64 {
    x.trace().re
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_err(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn all_finite(x: &CMat) -> bool {
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
