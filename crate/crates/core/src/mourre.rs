//! Projected positivity of `i[H, A]` on spectral windows of a multiplier `H`.
//!
//! When `H` is diagonal on the grid, `i[H,A]` has zero diagonal, so the literal
//! compressed block `E(J) i[H,A] E(J)` has trace zero and always carries
//! eigenvalues near `−1` from grid-scale oscillations. The margin is therefore
//! taken on the resolved subspace of `ran E(J)`: the span of the lowest
//! Dirichlet-Laplacian modes of the index set `{q : h(q) ∈ J}` with wavenumber
//! at most `u_max`. The literal block minimum is reported alongside.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::conjugate::{self, ConjugateOperatorSpec};
use crate::error::{Error, Result};
use crate::grid::{self, HermitianOperator, Interval, MomentumGrid, MultiplierOperator, WaveFunction};
use crate::linalg;

pub const DEFAULT_U_MAX: f64 = 5.0;

#[derive(Clone, Debug, Serialize)]
pub struct Mesh {
    pub dim: usize,
    pub points_per_axis: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub spacing: Vec<f64>,
}

impl Mesh {
    pub fn of(g: &MomentumGrid) -> Self {
        Self {
            dim: g.dim(),
            points_per_axis: g.n(),
            lower: g.lower().to_vec(),
            upper: g.upper().to_vec(),
            spacing: (0..g.dim()).map(|a| g.spacing(a)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MourreOptions {
    /// Largest Dirichlet wavenumber kept in the resolved subspace.
    pub u_max: f64,
    /// Pass threshold `margin ≥ −tol`; defaults to `1e-6·a`.
    pub tol: Option<f64>,
}

impl Default for MourreOptions {
    fn default() -> Self {
        Self { u_max: DEFAULT_U_MAX, tol: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MourreReport {
    pub window: Interval,
    pub constant: f64,
    /// Smallest eigenvalue of the compressed commutator minus `a` on the resolved subspace.
    pub margin: f64,
    /// Same on all of `ran E(J)`.
    pub raw_block_margin: f64,
    pub window_rank: usize,
    pub resolved_dim: usize,
    pub u_max: f64,
    pub tolerance: f64,
    pub vacuous: bool,
    pub passed: bool,
    pub mesh: Mesh,
    pub residuals: BTreeMap<String, f64>,
}

/// Orthonormal columns spanning the Dirichlet modes of `indices` with
/// wavenumber `≤ u_max` (at least one mode).
pub fn resolved_basis(grid: &MomentumGrid, indices: &[usize], u_max: f64) -> Result<DMatrix<C64>> {
    let n = indices.len();
    let pos: BTreeMap<usize, usize> = indices.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let mut lap = DMatrix::<C64>::zeros(n, n);
    for (i, &k) in indices.iter().enumerate() {
        let idx = grid.multi_index(k);
        for a in 0..grid.dim() {
            let h2 = grid.spacing(a).powi(2);
            lap[(i, i)] += C64::new(2.0 / h2, 0.0);
            let st = grid.stride(a);
            if idx[a] + 1 < grid.n() {
                if let Some(&j) = pos.get(&(k + st)) {
                    lap[(i, j)] -= C64::new(1.0 / h2, 0.0);
                }
            }
            if idx[a] > 0 {
                if let Some(&j) = pos.get(&(k - st)) {
                    lap[(i, j)] -= C64::new(1.0 / h2, 0.0);
                }
            }
        }
    }
    let sp = linalg::hermitian_eigen(&lap)?;
    let keep = sp.values.iter().filter(|&&l| l <= u_max * u_max).count().max(1);
    Ok(sp.vectors.columns(0, keep).into_owned())
}

fn submatrix(m: &DMatrix<C64>, idx: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

fn compressed_margins(
    comm: &DMatrix<C64>,
    grid: &MomentumGrid,
    idx: &[usize],
    a: f64,
    u_max: f64,
) -> Result<(f64, f64, usize)> {
    let mut block = submatrix(comm, idx);
    for i in 0..idx.len() {
        block[(i, i)] -= C64::new(a, 0.0);
    }
    let raw = linalg::hermitian_eigenvalues(&block)?[0];
    let v = resolved_basis(grid, idx, u_max)?;
    let reduced = v.adjoint() * &block * &v;
    let reduced = (&reduced + reduced.adjoint()) * C64::new(0.5, 0.0);
    let margin = linalg::hermitian_eigenvalues(&reduced)?[0];
    Ok((margin, raw, v.ncols()))
}

fn report(
    window: Interval,
    a: f64,
    grid: &MomentumGrid,
    comm: &DMatrix<C64>,
    idx: &[usize],
    opts: MourreOptions,
    residuals: BTreeMap<String, f64>,
) -> Result<MourreReport> {
    let tolerance = opts.tol.unwrap_or(1e-6 * a);
    let mesh = Mesh::of(grid);
    if idx.is_empty() {
        return Ok(MourreReport {
            window,
            constant: a,
            margin: f64::INFINITY,
            raw_block_margin: f64::INFINITY,
            window_rank: 0,
            resolved_dim: 0,
            u_max: opts.u_max,
            tolerance,
            vacuous: true,
            passed: true,
            mesh,
            residuals,
        });
    }
    let (margin, raw, dim) = compressed_margins(comm, grid, idx, a, opts.u_max)?;
    Ok(MourreReport {
        window,
        constant: a,
        margin,
        raw_block_margin: raw,
        window_rank: idx.len(),
        resolved_dim: dim,
        u_max: opts.u_max,
        tolerance,
        vacuous: false,
        passed: margin >= -tolerance,
        mesh,
        residuals,
    })
}

/// `E(J) i[H,A] E(J) ≥ a E(J)`.
pub fn mourre_check(
    h: &MultiplierOperator,
    a_op: &HermitianOperator,
    window: Interval,
    a: f64,
    opts: MourreOptions,
) -> Result<MourreReport> {
    if h.grid() != a_op.grid() {
        return Err(Error::GridMismatch("H and A live on different grids".into()));
    }
    let proj = grid::spectral_projection(h, window)?;
    let comm = conjugate::i_commutator(h, a_op);
    report(window, a, h.grid(), &comm, &proj.indices(), opts, BTreeMap::new())
}

/// `−Ẽ(J̃)[H^{-1}, iA]Ẽ(J̃) ≥ (1+β)^{-2} Ẽ(J̃)`, with the commutator taken from
/// `[H^{-1}, A] = −H^{-1}[H, A]H^{-1}` and cross-checked by direct multiplication.
pub fn inverse_mourre_check(
    h: &MultiplierOperator,
    a_op: &HermitianOperator,
    window: Interval,
    beta: f64,
    opts: MourreOptions,
) -> Result<MourreReport> {
    if h.grid() != a_op.grid() {
        return Err(Error::GridMismatch("H and A live on different grids".into()));
    }
    let hs = h.real_samples();
    let min = hs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || !h.is_real() {
        return Err(Error::InvalidParameter(format!("H must be strictly positive, min sample {min}")));
    }
    let inv: Vec<f64> = hs.iter().map(|x| 1.0 / x).collect();
    let hinv = MultiplierOperator::from_real(h.grid().clone(), &inv)?;
    let comm = conjugate::i_commutator(h, a_op);
    let n = inv.len();
    let via_identity = DMatrix::from_fn(n, n, |j, k| comm[(j, k)] * (inv[j] * inv[k]));
    let direct = conjugate::i_commutator(&hinv, a_op) * C64::new(-1.0, 0.0);
    let scale = linalg::max_abs_entry(&direct).max(f64::MIN_POSITIVE);
    let agreement = linalg::max_abs_entry(&(&via_identity - &direct)) / scale;
    let mut residuals = BTreeMap::new();
    residuals.insert("identity_vs_direct".to_string(), agreement);
    if !(agreement <= 1e-8) {
        return Err(Error::Consistency(format!("resolvent-commutator identity off by {agreement:.3e}")));
    }
    let a = (1.0 + beta).powi(-2);
    let proj = grid::spectral_projection(&hinv, window)?;
    report(window, a, h.grid(), &via_identity, &proj.indices(), opts, residuals)
}

/// `{λ : 1/λ ∈ J}` for a window of positive energies.
pub fn inverse_window(j: Interval) -> Result<Interval> {
    if !(j.lo >= 0.0) {
        return Err(Error::InvalidParameter("window must lie in (0, ∞)".into()));
    }
    let lo = 1.0 / j.hi;
    let hi = if j.lo == 0.0 { f64::INFINITY } else { 1.0 / j.lo };
    Ok(Interval { lo, hi, lo_closed: j.hi_closed, hi_closed: j.lo_closed })
}

/// `‖(ad^k_{−iA}(H) − θ_{k−1}(H)) g‖/‖g‖` for `k ∈ {1, 2}`, with
/// `ad_{−iA}(X) = [−iA, X]`, `θ_0 = θ_p`, `θ_1 = θ_p θ_p′`.
pub fn adk_check(spec: &ConjugateOperatorSpec, k: usize, state: &WaveFunction) -> Result<f64> {
    if !(1..=2).contains(&k) {
        return Err(Error::InvalidParameter(format!("ad^k only for k ∈ {{1, 2}}, got {k}")));
    }
    state.check_boundary(grid::DEFAULT_BOUNDARY_TOL)?;
    let h = spec.hamiltonian();
    let mut ad = conjugate::i_commutator(&h, &spec.a);
    let target: Vec<f64> = if k == 1 {
        spec.theta.clone()
    } else {
        let a = spec.a.matrix();
        ad = (a * &ad - &ad * a) * C64::new(0.0, -1.0);
        spec.omega
            .iter()
            .map(|&w| {
                conjugate::theta_p(w, &spec.params, &spec.cutoff)
                    * conjugate::theta_p_prime(w, &spec.params, &spec.cutoff)
            })
            .collect()
    };
    let v = state.amplitudes();
    let mut r = &ad * v;
    for j in 0..r.len() {
        r[j] -= v[j] * target[j];
    }
    Ok((r.norm_squared() / v.norm_squared()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn zero_conjugate_zero_constant() {
        let g = Arc::new(MomentumGrid::symmetric(1, 1.0, 32, 4096).unwrap());
        let h = MultiplierOperator::from_fn(g.clone(), |q| q[0]).unwrap();
        let r = mourre_check(&h, &HermitianOperator::zeros(g), Interval::open(-0.5, 0.5), 0.0, Default::default())
            .unwrap();
        assert_eq!(r.margin, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn canonical_pair_margin_is_second_order_small() {
        let g = Arc::new(MomentumGrid::symmetric(1, 4.0, 257, 4096).unwrap());
        let h = MultiplierOperator::from_fn(g.clone(), |q| q[0]).unwrap();
        let u = grid::position_operator(&g, 0);
        let r = mourre_check(&h, &u, Interval::open(-2.0, 2.0), 1.0, Default::default()).unwrap();
        let hstep = g.spacing(0);
        assert!(r.margin <= 0.0);
        assert!(r.margin >= -0.5 * (DEFAULT_U_MAX * hstep).powi(2) * 1.01, "{}", r.margin);
        // literal block: eigenvalues cos(kπ/(L+1)) − 1 reach almost −2
        assert!(r.raw_block_margin < -1.9);
    }

    #[test]
    fn vacuous_windows_pass() {
        let g = Arc::new(MomentumGrid::symmetric(1, 1.0, 16, 4096).unwrap());
        let h = MultiplierOperator::from_fn(g.clone(), |q| 2.0 + q[0]).unwrap();
        let a = HermitianOperator::zeros(g);
        let r = mourre_check(&h, &a, Interval::open(10.0, 11.0), 1.0, Default::default()).unwrap();
        assert!(r.vacuous && r.passed && r.margin == f64::INFINITY);
        let r = inverse_mourre_check(&h, &a, Interval::open(10.0, 11.0), 3.0, Default::default()).unwrap();
        assert!(r.vacuous && r.passed);
    }

    #[test]
    fn inverse_rejects_nonpositive() {
        let g = Arc::new(MomentumGrid::symmetric(1, 1.0, 16, 4096).unwrap());
        let h = MultiplierOperator::from_fn(g.clone(), |q| q[0]).unwrap();
        assert!(inverse_mourre_check(&h, &HermitianOperator::zeros(g), Interval::open(0.1, 1.0), 1.0, Default::default())
            .is_err());
    }

    #[test]
    fn inverse_window_map() {
        let w = inverse_window(Interval::open(2.0, 4.0)).unwrap();
        assert_eq!((w.lo, w.hi), (0.25, 0.5));
    }
}
