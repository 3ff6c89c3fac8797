//! Dense complex linear algebra shared by the operator modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Spectral {
    pub values: DVector<f64>,
    pub vectors: DMatrix<C64>,
}

impl Spectral {
    /// `V f(Λ) V†`.
    pub fn function(&self, f: impl Fn(f64) -> f64) -> DMatrix<C64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            scaled.column_mut(j).scale_mut(w);
        }
        let mut out = DMatrix::zeros(n, n);
        out.gemm(C64::new(1.0, 0.0), &scaled, &self.vectors.adjoint(), C64::new(0.0, 0.0));
        out
    }

    /// `V f(Λ) V†` for complex-valued `f`.
    pub fn function_complex(&self, f: impl Fn(f64) -> C64) -> DMatrix<C64> {
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= w);
        }
        &scaled * self.vectors.adjoint()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn max_abs_entry(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn all_finite(m: &DMatrix<C64>) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn hermiticity_residual(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut r: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            r = r.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    r
}

/// Eigendecomposition of a Hermitian matrix. The returned pairs are validated
/// against `‖MV − VΛ‖_max ≤ 1e-8·max(‖M‖_max, 1)`.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> Result<Spectral> {
    if !m.is_square() {
        return Err(Error::InvalidParameter("eigendecomposition of a non-square matrix".into()));
    }
    if !all_finite(m) {
        return Err(Error::NonFinite("matrix"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Spectral { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) });
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or(Error::Eigen { residual: f64::NAN })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    let mut mv = m * &vectors;
    for (j, &lam) in values.iter().enumerate() {
        let col = vectors.column(j) * C64::new(lam, 0.0);
        let mut dst = mv.column_mut(j);
        dst -= col;
    }
    let scale = max_abs_entry(m).max(1.0);
    let residual = max_abs_entry(&mv) / scale;
    if !(residual <= 1e-8) {
        return Err(Error::Eigen { residual });
    }
    Ok(Spectral { values, vectors })
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Result<DVector<f64>> {
    if !all_finite(m) {
        return Err(Error::NonFinite("matrix"));
    }
    if m.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut v = m.clone().symmetric_eigenvalues();
    v.as_mut_slice().sort_by(f64::total_cmp);
    Ok(v)
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<C64>) -> Result<f64> {
    if !all_finite(m) {
        return Err(Error::NonFinite("matrix"));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let sv = m.clone().singular_values();
    Ok(sv.iter().copied().fold(0.0, f64::max))
}

/// Norm of a Hermitian matrix as its largest |eigenvalue|.
pub fn hermitian_norm(m: &DMatrix<C64>) -> Result<f64> {
    let v = hermitian_eigenvalues(m)?;
    Ok(v.iter().fold(0.0, |a, x| a.max(x.abs())))
}

/// `W · diag(d) · W` for square `W`.
pub fn sandwich_diag(w: &DMatrix<C64>, d: &[C64]) -> DMatrix<C64> {
    let mut left = w.clone();
    for (j, &dj) in d.iter().enumerate() {
        for i in 0..left.nrows() {
            left[(i, j)] *= dj;
        }
    }
    &left * w
}

/// `[X, Y] = XY − YX`.
pub fn commutator(x: &DMatrix<C64>, y: &DMatrix<C64>) -> DMatrix<C64> {
    x * y - y * x
}

/// `[diag(d), Y]`.
pub fn commutator_diag(d: &[C64], y: &DMatrix<C64>) -> DMatrix<C64> {
    let n = y.nrows();
    DMatrix::from_fn(n, n, |i, j| (d[i] - d[j]) * y[(i, j)])
}

pub fn diag_matrix(d: &[C64]) -> DMatrix<C64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(d))
}

pub fn real_diag(d: &[f64]) -> Vec<C64> {
    d.iter().map(|&x| C64::new(x, 0.0)).collect()
}
