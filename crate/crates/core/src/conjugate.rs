//! Modified dilation operator `A_p = ½(F_p·u + u·F_p)` on a momentum grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::dispersion::{DispersionParams, IntervalPair};
use crate::error::{Error, Result};
use crate::grid::{self, HermitianOperator, MomentumGrid, MultiplierOperator, WaveFunction};
use crate::linalg;

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Smoothstep `S = g(x)/(g(x)+g(1−x))`, `g(x) = e^{−1/x}`; returns `(S, 1−S, S′)`.
fn smoothstep(x: f64) -> (f64, f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let t = 1.0 / x - 1.0 / (1.0 - x);
    let s = logistic(-t);
    let c = logistic(t);
    let ds = s * c * (1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x)));
    (s, c, ds)
}

/// `θ = 1` on `[ε/2, β+1]`, `supp θ ⊂ [ε/4, β+2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CutoffSpec {
    pub epsilon: f64,
    pub beta: f64,
}

impl CutoffSpec {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && beta.is_finite() && beta > 0.5 * epsilon) {
            return Err(Error::InvalidParameter(format!("cutoff with ε = {epsilon}, β = {beta}")));
        }
        Ok(Self { epsilon, beta })
    }

    fn w(&self) -> f64 {
        0.25 * self.epsilon
    }

    pub fn theta(&self, x: f64) -> f64 {
        let (left, _, _) = smoothstep((x - self.w()) / self.w());
        let (_, right, _) = smoothstep(x - (self.beta + 1.0));
        left * right
    }

    pub fn theta_prime(&self, x: f64) -> f64 {
        let (l, _, dl) = smoothstep((x - self.w()) / self.w());
        let (_, r, dr) = smoothstep(x - (self.beta + 1.0));
        dl / self.w() * r - l * dr
    }
}

/// `θ_p(λ) = θ(λ − 2ω(p/2))`.
pub fn theta_p(lambda: f64, params: &DispersionParams, cutoff: &CutoffSpec) -> f64 {
    cutoff.theta(lambda - params.threshold())
}

pub fn theta_p_prime(lambda: f64, params: &DispersionParams, cutoff: &CutoffSpec) -> f64 {
    cutoff.theta_prime(lambda - params.threshold())
}

/// `F_p(q) = θ_p(ω_p(q)) ∇ω_p(q)/|∇ω_p(q)|²`, zero off the cutoff support.
pub fn vector_field_f(q: &[f64], params: &DispersionParams, cutoff: &CutoffSpec, b: f64) -> Result<Vec<f64>> {
    let th = theta_p(params.omega_p(q), params, cutoff);
    if th == 0.0 {
        return Ok(vec![0.0; q.len()]);
    }
    let grad = params.grad(q);
    let n2: f64 = grad.iter().map(|x| x * x).sum();
    if n2.sqrt() < 0.5 * b {
        return Err(Error::Consistency(format!(
            "|∇ω_p| = {:.3e} below b/2 = {:.3e} at q = {q:?} where θ_p = {th:.3e}",
            n2.sqrt(),
            0.5 * b
        )));
    }
    Ok(grad.iter().map(|x| th * x / n2).collect())
}

/// Closed forms of `div F_p` at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DivF {
    /// `θ_p′ − θ_p Δω_p/|∇ω_p|²`.
    pub printed: f64,
    /// `θ_p′ + θ_p (Δω_p/|∇ω_p|² − 2 ∇ω_p·Hess ∇ω_p/|∇ω_p|⁴)`.
    pub exact: f64,
}

pub fn div_f(q: &[f64], params: &DispersionParams, cutoff: &CutoffSpec) -> DivF {
    let w = params.omega_p(q);
    let th = theta_p(w, params, cutoff);
    let dth = theta_p_prime(w, params, cutoff);
    if th == 0.0 && dth == 0.0 {
        return DivF { printed: 0.0, exact: 0.0 };
    }
    let s = q.len();
    let grad = params.grad(q);
    let hess = params.hessian(q);
    let n2: f64 = grad.iter().map(|x| x * x).sum();
    let lap = params.laplacian(q);
    let mut ghg = 0.0;
    for i in 0..s {
        for j in 0..s {
            ghg += grad[i] * hess[i * s + j] * grad[j];
        }
    }
    DivF {
        printed: dth - th * lap / n2,
        exact: dth + th * (lap / n2 - 2.0 * ghg / (n2 * n2)),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DivFDiscrepancy {
    /// `max |printed − finite difference|` over interior grid points.
    pub printed_vs_fd: f64,
    /// `max |exact − finite difference|`.
    pub exact_vs_fd: f64,
    pub printed_vs_exact: f64,
}

#[derive(Clone, Debug)]
pub struct ConjugateOperatorSpec {
    pub params: DispersionParams,
    pub cutoff: CutoffSpec,
    pub intervals: IntervalPair,
    pub gradient_floor: f64,
    pub grid: Arc<MomentumGrid>,
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
    /// `f[axis][k]`.
    pub f: Vec<Vec<f64>>,
    pub div_f_fd: Vec<f64>,
    pub div_f_closed: Vec<DivF>,
    pub a: HermitianOperator,
}

impl ConjugateOperatorSpec {
    pub fn build(params: &DispersionParams, grid: Arc<MomentumGrid>) -> Result<Self> {
        if grid.dim() != params.dim() {
            return Err(Error::GridMismatch("grid and momentum dimensions differ".into()));
        }
        let intervals = params.intervals()?;
        let cutoff = CutoffSpec::new(params.epsilon, params.beta())?;
        let b = params.gradient_floor(&intervals);
        let pts = grid.points();
        let omega: Vec<f64> = pts.iter().map(|q| params.omega_p(q)).collect();
        let theta: Vec<f64> = omega.iter().map(|&w| theta_p(w, params, &cutoff)).collect();
        for k in 0..grid.len() {
            let idx = grid.multi_index(k);
            let near_edge = idx.iter().any(|&i| i <= 1 || i + 2 >= grid.n());
            if near_edge && theta[k] != 0.0 {
                return Err(Error::ActiveBoundary(format!(
                    "cutoff active at grid point {:?} next to the boundary",
                    pts[k]
                )));
            }
        }
        let s = grid.dim();
        let mut f = vec![vec![0.0; grid.len()]; s];
        for (k, q) in pts.iter().enumerate() {
            let v = vector_field_f(q, params, &cutoff, b)?;
            for a in 0..s {
                f[a][k] = v[a];
            }
        }
        let div_f_fd = fd_divergence(&grid, &f);
        let div_f_closed = pts.iter().map(|q| div_f(q, params, &cutoff)).collect();
        let a = assemble_ap(&grid, &f)?;
        Ok(Self {
            params: params.clone(),
            cutoff,
            intervals,
            gradient_floor: b,
            grid,
            omega,
            theta,
            f,
            div_f_fd,
            div_f_closed,
            a,
        })
    }

    pub fn hamiltonian(&self) -> MultiplierOperator {
        MultiplierOperator::from_real(self.grid.clone(), &self.omega).expect("finite samples")
    }

    pub fn theta_multiplier(&self) -> MultiplierOperator {
        MultiplierOperator::from_real(self.grid.clone(), &self.theta).expect("finite samples")
    }

    pub fn div_f_discrepancy(&self) -> DivFDiscrepancy {
        let mut d = DivFDiscrepancy { printed_vs_fd: 0.0, exact_vs_fd: 0.0, printed_vs_exact: 0.0 };
        for k in 0..self.grid.len() {
            if self.grid.is_boundary(k) {
                continue;
            }
            let c = self.div_f_closed[k];
            d.printed_vs_fd = d.printed_vs_fd.max((c.printed - self.div_f_fd[k]).abs());
            d.exact_vs_fd = d.exact_vs_fd.max((c.exact - self.div_f_fd[k]).abs());
            d.printed_vs_exact = d.printed_vs_exact.max((c.printed - c.exact).abs());
        }
        d
    }

    /// Gaussian centred on the plateau `θ_p = 1` along the first axis with
    /// width a quarter of the plateau half-width.
    pub fn plateau_gaussian(&self) -> Result<WaveFunction> {
        let g = &self.grid;
        let s = g.dim();
        let mut centre_idx = vec![g.n() / 2; s];
        let mut best: Option<(usize, usize)> = None;
        let mut run: Option<usize> = None;
        for i in 0..g.n() {
            centre_idx[0] = i;
            let on = self.theta[g.flat_index(&centre_idx)] == 1.0;
            match (on, run) {
                (true, None) => run = Some(i),
                (false, Some(start)) => {
                    if best.is_none_or(|(a, b)| i - start > b - a + 1) {
                        best = Some((start, i - 1));
                    }
                    run = None;
                }
                _ => {}
            }
        }
        if let Some(start) = run {
            if best.is_none_or(|(a, b)| g.n() - start > b - a + 1) {
                best = Some((start, g.n() - 1));
            }
        }
        let (centre, sigma) = match best {
            Some((a, b)) => {
                let lo = g.coordinate(0, a);
                let hi = g.coordinate(0, b);
                (0.5 * (lo + hi), 0.125 * (hi - lo))
            }
            None => (0.5 * (g.lower()[0] + g.upper()[0]), 0.125 * (g.upper()[0] - g.lower()[0])),
        };
        let mut c = vec![0.0; s];
        c[0] = centre;
        for a in 1..s {
            c[a] = 0.5 * (g.lower()[a] + g.upper()[a]);
        }
        WaveFunction::from_fn(g.clone(), |q| {
            let r2: f64 = q.iter().zip(&c).map(|(x, y)| (x - y) * (x - y)).sum();
            C64::new((-0.5 * r2 / (sigma * sigma)).exp(), 0.0)
        })?
        .normalized()
    }
}

fn fd_divergence(grid: &MomentumGrid, f: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        if grid.is_boundary(k) {
            continue;
        }
        out[k] = (0..grid.dim())
            .map(|a| {
                let st = grid.stride(a);
                (f[a][k + st] - f[a][k - st]) / (2.0 * grid.spacing(a))
            })
            .sum();
    }
    out
}

/// `A_{jk} = Σ_a ½(F_a(q_j) + F_a(q_k)) (u_a)_{jk}` with `u_a = i∂_a` centrally differenced.
pub fn assemble_ap(grid: &Arc<MomentumGrid>, f: &[Vec<f64>]) -> Result<HermitianOperator> {
    if f.len() != grid.dim() || f.iter().any(|c| c.len() != grid.len()) {
        return Err(Error::GridMismatch("vector field samples".into()));
    }
    let n = grid.len();
    let mut m = DMatrix::<C64>::zeros(n, n);
    for (a, fa) in f.iter().enumerate() {
        let st = grid.stride(a);
        let c = 1.0 / (2.0 * grid.spacing(a));
        for k in 0..n {
            if grid.multi_index(k)[a] + 1 >= grid.n() {
                continue;
            }
            let avg = 0.5 * (fa[k] + fa[k + st]);
            m[(k, k + st)] += C64::new(0.0, avg * c);
            m[(k + st, k)] += C64::new(0.0, -avg * c);
        }
    }
    HermitianOperator::new(grid.clone(), m)
}

/// `i[H, A]` for a multiplier `H`.
pub fn i_commutator(h: &MultiplierOperator, a: &HermitianOperator) -> DMatrix<C64> {
    let c = linalg::commutator_diag(h.samples(), a.matrix());
    c * C64::new(0.0, 1.0)
}

/// `‖([M_ω, iA] − θ_p(ω_p)) g‖/‖g‖`.
pub fn commutator_residual_on(spec: &ConjugateOperatorSpec, state: &WaveFunction) -> Result<f64> {
    state.check_boundary(grid::DEFAULT_BOUNDARY_TOL)?;
    let comm = i_commutator(&spec.hamiltonian(), &spec.a);
    let v = state.amplitudes();
    let mut r = &comm * v;
    for k in 0..r.len() {
        r[k] -= v[k] * spec.theta[k];
    }
    Ok((r.norm_squared() / v.norm_squared()).sqrt())
}

/// Residual on the plateau Gaussian.
pub fn commutator_residual(spec: &ConjugateOperatorSpec) -> Result<f64> {
    commutator_residual_on(spec, &spec.plateau_gaussian()?)
}

/// `⟨u⟩^{-1}` with `|u|² = Σ_a u_a²`, and the spectral data of `Σ_a u_a²`.
pub fn position_bracket(grid: &Arc<MomentumGrid>) -> Result<linalg::Spectral> {
    let n = grid.len();
    let mut u2 = DMatrix::<C64>::zeros(n, n);
    for a in 0..grid.dim() {
        let u = grid::position_operator(grid, a);
        u2 += u.matrix() * u.matrix();
    }
    linalg::hermitian_eigen(&u2)
}

#[derive(Clone, Debug, Serialize)]
pub struct BracketChain {
    /// `C = ‖⟨A⟩⟨u⟩^{-1}‖`.
    pub c: f64,
    pub nu: f64,
    /// `‖⟨A⟩^ν⟨u⟩^{-ν}‖`, to be compared with `C^ν`.
    pub weighted_norm: f64,
}

pub fn bracket_chain(a: &HermitianOperator, u2: &linalg::Spectral, nu: f64) -> Result<BracketChain> {
    let sa = a.eigen()?;
    let a_pos = sa.function(|x| (1.0 + x * x).sqrt());
    let u_inv = u2.function(|x| (1.0 + x.max(0.0)).powf(-0.5));
    let c = linalg::operator_norm(&(&a_pos * &u_inv))?;
    let a_nu = sa.function(|x| (1.0 + x * x).powf(0.5 * nu));
    let u_nu = u2.function(|x| (1.0 + x.max(0.0)).powf(-0.5 * nu));
    let weighted_norm = linalg::operator_norm(&(&a_nu * &u_nu))?;
    Ok(BracketChain { c, nu, weighted_norm })
}

/// `‖⟨u⟩^ν f‖` for amplitudes on the grid, with `u2` the spectral data of `|u|²`.
pub fn position_weighted_norm(u2: &linalg::Spectral, f: &DVector<C64>, nu: f64, weight: f64) -> f64 {
    let coeff = u2.vectors.adjoint() * f;
    let s: f64 = coeff
        .iter()
        .zip(u2.values.iter())
        .map(|(c, &l)| c.norm_sqr() * (1.0 + l.max(0.0)).powf(nu))
        .sum();
    (s * weight).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::MomentumBox;
    use approx::assert_relative_eq;

    fn params(p: f64) -> DispersionParams {
        DispersionParams::new(
            1.0,
            vec![p],
            MomentumBox::interval(0.8, 1.4).unwrap(),
            MomentumBox::interval(-0.8, -0.2).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn cutoff_plateau_and_support() {
        let c = CutoffSpec::new(0.2, 3.0).unwrap();
        for x in [0.1, 0.5, 2.0, 4.0] {
            assert_eq!(c.theta(x), 1.0, "{x}");
        }
        for x in [-1.0, 0.0, 0.05, 5.0, 6.0] {
            assert_eq!(c.theta(x), 0.0, "{x}");
        }
        for k in 0..1000 {
            let x = -0.5 + 6.0 * k as f64 / 1000.0;
            let t = c.theta(x);
            assert!((0.0..=1.0).contains(&t));
        }
    }

    #[test]
    fn theta_prime_matches_finite_differences() {
        let c = CutoffSpec::new(0.3, 2.0).unwrap();
        let h = 1e-6;
        for k in 1..400 {
            let x = 0.05 + 4.0 * k as f64 / 400.0;
            let fd = (c.theta(x + h) - c.theta(x - h)) / (2.0 * h);
            assert!((fd - c.theta_prime(x)).abs() < 1e-5 * (1.0 + fd.abs()), "x = {x}");
        }
    }

    #[test]
    fn theta_p_on_window() {
        let p = params(0.6);
        let c = CutoffSpec::new(p.epsilon, p.beta()).unwrap();
        let j = p.intervals().unwrap().j;
        for lam in j.linspace(50) {
            assert_eq!(theta_p(lam, &p, &c), 1.0);
        }
        assert_eq!(theta_p(p.threshold(), &p, &c), 0.0);
        assert_eq!(theta_p(p.threshold() - 0.3, &p, &c), 0.0);
    }

    #[test]
    fn f_times_gradient_is_theta() {
        let p = params(0.6);
        let c = CutoffSpec::new(p.epsilon, p.beta()).unwrap();
        let b = p.gradient_floor(&p.intervals().unwrap());
        for k in 0..200 {
            let q = [-3.5 + 7.0 * k as f64 / 199.0];
            let f = vector_field_f(&q, &p, &c, b).unwrap();
            let th = theta_p(p.omega_p(&q), &p, &c);
            assert_relative_eq!(f[0] * p.grad(&q)[0], th, epsilon = 1e-14);
        }
        assert_eq!(vector_field_f(&[0.0], &p, &c, b).unwrap(), vec![0.0]);
    }

    #[test]
    fn f_at_zero_total_momentum_is_scalar_formula() {
        let p = params(0.0);
        let c = CutoffSpec::new(p.epsilon, p.beta()).unwrap();
        let q = 1.0;
        assert_eq!(theta_p(2.0 * 2f64.sqrt(), &p, &c), 1.0);
        let f = vector_field_f(&[q], &p, &c, 0.0).unwrap()[0];
        let hand = 1.0 / (2.0 * (q / 2f64.sqrt()));
        assert_relative_eq!(f, hand, epsilon = 1e-14);
    }

    #[test]
    fn zero_field_gives_zero_operator() {
        let g = Arc::new(MomentumGrid::new(vec![-1.0], vec![1.0], 16).unwrap());
        let a = assemble_ap(&g, &[vec![0.0; 16]]).unwrap();
        assert!(a.matrix().iter().all(|z| *z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn assembled_operator_exactly_hermitian() {
        let p = params(0.6);
        let g = Arc::new(MomentumGrid::symmetric(1, 4.0, 128, 4096).unwrap());
        let spec = ConjugateOperatorSpec::build(&p, g).unwrap();
        assert_eq!(linalg::hermiticity_residual(spec.a.matrix()), 0.0);
    }

    #[test]
    fn narrow_grid_rejected() {
        let p = params(0.6);
        let g = Arc::new(MomentumGrid::symmetric(1, 2.0, 64, 4096).unwrap());
        assert!(matches!(ConjugateOperatorSpec::build(&p, g), Err(Error::ActiveBoundary(_))));
    }
}
