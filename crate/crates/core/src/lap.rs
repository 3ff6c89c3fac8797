//! Weighted resolvent suprema and the explicit bounds around them.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dispersion::IntervalPair;
use crate::error::{Error, Result};
use crate::grid::{HermitianOperator, Interval, MomentumGrid, MultiplierOperator};
use crate::linalg;
use crate::mourre::{self, Mesh};
use crate::quadrature;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepConfig {
    /// λ samples over I, endpoints included.
    pub lambda_points: usize,
    pub mu_min: f64,
    pub mu_per_decade: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambda_points: 66, mu_min: 1e-4, mu_per_decade: 2 }
    }
}

impl SweepConfig {
    /// `μ_min·10^{k/m}` below 1.
    pub fn mus(&self) -> Result<Vec<f64>> {
        if !(self.mu_min > 0.0 && self.mu_min < 1.0) {
            return Err(Error::InvalidParameter(format!("mu_min = {} outside (0, 1)", self.mu_min)));
        }
        if self.mu_per_decade == 0 || self.lambda_points == 0 {
            return Err(Error::InvalidParameter("empty sweep".into()));
        }
        let mut out = Vec::new();
        for k in 0.. {
            let mu = self.mu_min * 10f64.powf(k as f64 / self.mu_per_decade as f64);
            if mu >= 1.0 {
                break;
            }
            out.push(mu);
        }
        Ok(out)
    }
}

/// `⟨A⟩^{−ν}(h−z)^{−1}⟨A⟩^{−ν}` for a real multiplier `h`, weight precomputed.
#[derive(Clone, Debug)]
pub struct WeightedResolvent {
    h: Vec<f64>,
    weight: DMatrix<C64>,
    nu: f64,
}

impl WeightedResolvent {
    pub fn new(h: &MultiplierOperator, a: &HermitianOperator, nu: f64) -> Result<Self> {
        if h.grid() != a.grid() {
            return Err(Error::GridMismatch("H and A live on different grids".into()));
        }
        if !h.is_real() {
            return Err(Error::InvalidParameter("H must be real".into()));
        }
        let weight = crate::grid::bracket_power(a, nu)?.matrix().clone();
        Ok(Self { h: h.real_samples(), weight, nu })
    }

    /// Same weight, different multiplier samples.
    pub fn with_samples(&self, h: Vec<f64>) -> Result<Self> {
        if h.len() != self.h.len() {
            return Err(Error::GridMismatch(format!("{} samples for a {}-point grid", h.len(), self.h.len())));
        }
        Ok(Self { h, weight: self.weight.clone(), nu: self.nu })
    }

    pub fn samples(&self) -> &[f64] {
        &self.h
    }

    pub fn weight(&self) -> &DMatrix<C64> {
        &self.weight
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn norm(&self, lambda: f64, mu: f64) -> Result<f64> {
        if mu == 0.0 || !mu.is_finite() || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("resolvent at λ = {lambda}, μ = {mu}")));
        }
        let z = C64::new(lambda, mu);
        let d: Vec<C64> = self.h.iter().map(|&x| (C64::new(x, 0.0) - z).inv()).collect();
        linalg::operator_norm(&linalg::sandwich_diag(&self.weight, &d))
    }

    /// `‖⟨A⟩^{−ν} Im(h−λ−iμ)^{−1} ⟨A⟩^{−ν}‖`.
    pub fn im_norm(&self, lambda: f64, mu: f64) -> Result<f64> {
        if mu == 0.0 || !mu.is_finite() || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("resolvent at λ = {lambda}, μ = {mu}")));
        }
        let d: Vec<C64> = self.h.iter().map(|&x| C64::new(mu / ((x - lambda).powi(2) + mu * mu), 0.0)).collect();
        linalg::hermitian_norm(&linalg::sandwich_diag(&self.weight, &d))
    }

    fn evaluate(&self, points: &[(f64, f64)]) -> Result<Vec<SweepPoint>> {
        self.evaluate_with(points, Self::norm)
    }

    fn evaluate_with(
        &self,
        points: &[(f64, f64)],
        f: impl Fn(&Self, f64, f64) -> Result<f64> + Sync,
    ) -> Result<Vec<SweepPoint>> {
        let values: Vec<Result<SweepPoint>> = points
            .par_iter()
            .map(|&(lambda, mu)| Ok(SweepPoint { lambda, mu, norm: f(self, lambda, mu)? }))
            .collect();
        let values: Vec<SweepPoint> = values.into_iter().collect::<Result<_>>()?;
        if values.iter().any(|p| !p.norm.is_finite()) {
            return Err(Error::NonFinite("weighted resolvent norm"));
        }
        Ok(values)
    }

    pub fn sweep(&self, interval: Interval, cfg: &SweepConfig) -> Result<ResolventSweep> {
        self.sweep_with(interval, cfg, Self::norm)
    }

    /// Sweep of `im_norm`.
    pub fn im_sweep(&self, interval: Interval, cfg: &SweepConfig) -> Result<ResolventSweep> {
        self.sweep_with(interval, cfg, Self::im_norm)
    }

    fn sweep_with(
        &self,
        interval: Interval,
        cfg: &SweepConfig,
        f: impl Fn(&Self, f64, f64) -> Result<f64> + Sync,
    ) -> Result<ResolventSweep> {
        if interval.is_empty() || !interval.lo.is_finite() || !interval.hi.is_finite() {
            return Err(Error::EmptyWindow(format!("[{}, {}]", interval.lo, interval.hi)));
        }
        let lambdas = interval.linspace(cfg.lambda_points);
        let mus = cfg.mus()?;
        let points: Vec<(f64, f64)> =
            lambdas.iter().flat_map(|&l| mus.iter().map(move |&m| (l, m))).collect();
        let values = self.evaluate_with(&points, f)?;
        Ok(ResolventSweep::assemble(interval, self.nu, lambdas, mus, values))
    }
}

pub fn weighted_resolvent_norm(
    h: &MultiplierOperator,
    a: &HermitianOperator,
    lambda: f64,
    mu: f64,
    nu: f64,
) -> Result<f64> {
    if mu == 0.0 {
        return Err(Error::InvalidParameter("μ = 0: boundary values only through a sweep".into()));
    }
    WeightedResolvent::new(h, a, nu)?.norm(lambda, mu)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub mu: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventSweep {
    pub interval: Interval,
    pub nu: f64,
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
    /// λ-major.
    pub values: Vec<SweepPoint>,
    pub supremum: f64,
    pub argmax: SweepPoint,
    /// Relative change of `max_λ` between the two smallest decades of μ.
    pub saturation_change: f64,
    pub saturated: bool,
}

impl ResolventSweep {
    fn assemble(interval: Interval, nu: f64, lambdas: Vec<f64>, mus: Vec<f64>, values: Vec<SweepPoint>) -> Self {
        // first index wins ties
        let mut argmax = values[0];
        for p in &values {
            if p.norm > argmax.norm {
                argmax = *p;
            }
        }
        let m = mus.len();
        let column_max =
            |k: usize| (0..lambdas.len()).map(|i| values[i * m + k].norm).fold(0.0, f64::max);
        let decade = mus.iter().position(|&mu| mu >= 10.0 * mus[0] * (1.0 - 1e-12)).unwrap_or(m - 1);
        let (low, high) = (column_max(0), column_max(decade));
        let saturation_change = if decade == 0 { f64::NAN } else { (low - high).abs() / low };
        Self {
            interval,
            nu,
            lambdas,
            mus,
            supremum: argmax.norm,
            argmax,
            saturated: saturation_change < 0.01,
            saturation_change,
            values,
        }
    }

    pub fn max_at_mu(&self, k: usize) -> f64 {
        let m = self.mus.len();
        (0..self.lambdas.len()).map(|i| self.values[i * m + k].norm).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "lambda,mu,norm")?;
        for p in &self.values {
            writeln!(w, "{:e},{:e},{:e}", p.lambda, p.mu, p.norm)?;
        }
        Ok(())
    }
}

/// Weighted resolvent supremum of `h` over `I × {μ}`.
pub fn lap_supremum(
    h: &MultiplierOperator,
    a: &HermitianOperator,
    interval: Interval,
    nu: f64,
    cfg: &SweepConfig,
) -> Result<ResolventSweep> {
    WeightedResolvent::new(h, a, nu)?.sweep(interval, cfg)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LapConstants {
    pub a: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub nu: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub epsilon0: f64,
    pub bound: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn explicit_constants(
    a: f64,
    norm_h: f64,
    norm_ha: f64,
    norm_haa: f64,
    alpha: f64,
    beta: f64,
    delta: f64,
    nu: f64,
) -> Result<LapConstants> {
    if !(a > 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("need a > 0 and δ > 0, got a = {a}, δ = {delta}")));
    }
    if !(nu > 0.5 && nu <= 1.0) {
        return Err(Error::InvalidParameter(format!("ν = {nu} outside (1/2, 1]")));
    }
    for (name, x) in [("‖H‖", norm_h), ("‖[H,A]‖", norm_ha), ("‖[[H,A],A]‖", norm_haa)] {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} = {x}")));
        }
    }
    let c1 = norm_h + norm_ha + (1.0 + 4.0 / a) * norm_ha * norm_ha + norm_haa + a + alpha.abs() + beta.abs() + 1.0;
    let c2 = (2.0 / a).sqrt() + (8.0 * c1 / a).sqrt() / delta;
    let c3 = 4.0 * c2 + 2.0 * c1 * c2 * c2;
    let epsilon0 = (a.sqrt() * delta / (4.0 * c1)).min(delta * delta / (16.0 * c1 * c1));
    let phi = 4.0 / (a * epsilon0);
    let theta1 = c3 * epsilon0.powf(nu) / nu;
    let theta2 = c3 * epsilon0.powf(nu - 0.5) / (nu - 0.5);
    let bound = ((phi + theta1).sqrt() + theta2).powi(2) * (c3 * epsilon0).exp();
    if !bound.is_finite() {
        return Err(Error::NonFinite("explicit LAP bound"));
    }
    Ok(LapConstants { a, alpha, beta, delta, nu, c1, c2, c3, epsilon0, bound })
}

/// `[(φ_end + ∫θ1)^{1/2} + ∫θ2]² e^{γε0}`, integrals over `(0, ε0)`.
pub fn diffineq_bound(
    phi_end: f64,
    theta1: impl Fn(f64) -> f64,
    theta2: impl Fn(f64) -> f64,
    gamma: f64,
    epsilon0: f64,
) -> Result<f64> {
    if !(phi_end >= 0.0) || !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("φ_end = {phi_end}, γ = {gamma}")));
    }
    let i1 = quadrature::integrate_from_origin(&theta1, epsilon0)?.value;
    let i2 = quadrature::integrate_from_origin(&theta2, epsilon0)?.value;
    Ok(((phi_end + i1).sqrt() + i2).powi(2) * (gamma * epsilon0).exp())
}

/// Worst case of `−φ′ ≤ θ1 + θ2 φ^{1/2} + γφ` on `(0, ε0)` with `φ(ε0) = φ_end`:
/// the solution of the equality, continued to `ε → 0` by RK4 in `y = ln(ε0/ε)`.
pub fn diffineq_comparison(
    phi_end: f64,
    theta1: impl Fn(f64) -> f64,
    theta2: impl Fn(f64) -> f64,
    gamma: f64,
    epsilon0: f64,
) -> Result<f64> {
    if !(phi_end >= 0.0) || !(gamma >= 0.0) || !(epsilon0 > 0.0) {
        return Err(Error::InvalidParameter(format!("φ_end = {phi_end}, γ = {gamma}, ε0 = {epsilon0}")));
    }
    let rhs = |y: f64, phi: f64| {
        let e = epsilon0 * (-y).exp();
        e * (theta1(e) + theta2(e) * phi.max(0.0).sqrt() + gamma * phi)
    };
    const Y: f64 = 60.0;
    const STEPS: usize = 60_000;
    let h = Y / STEPS as f64;
    let mut phi = phi_end;
    for k in 0..STEPS {
        let y = k as f64 * h;
        let k1 = rhs(y, phi);
        let k2 = rhs(y + 0.5 * h, phi + 0.5 * h * k1);
        let k3 = rhs(y + 0.5 * h, phi + 0.5 * h * k2);
        let k4 = rhs(y + h, phi + h * k3);
        phi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if !phi.is_finite() {
        return Err(Error::NonFinite("comparison solution"));
    }
    Ok(phi)
}

/// Norms of `R = (H−λ0)^{−1}` against `⟨A⟩` weights.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ResolventWeights {
    pub norm_r: f64,
    /// `‖[A,R](A+i)^{−1}‖`.
    pub commutator_term: f64,
    /// `‖R‖^{1−ν}(‖R‖ + ‖[A,R](A+i)^{−1}‖)^ν`, the bound used.
    pub k_route: f64,
    /// `‖R‖^{1−ν}‖⟨A⟩R⟨A⟩^{−1}‖^ν`.
    pub k_interp: f64,
    /// `‖⟨A⟩^ν R ⟨A⟩^{−ν}‖`.
    pub k_direct: f64,
}

fn resolvent_weights(r: &[f64], a: &HermitianOperator, nu: f64) -> Result<ResolventWeights> {
    let spec = a.eigen()?;
    let rd = linalg::real_diag(r);
    let norm_r = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let a_plus_i_inv = spec.function_complex(|x| C64::new(x, 1.0).inv());
    let comm = linalg::commutator_diag(&rd, a.matrix()) * C64::new(-1.0, 0.0);
    let commutator_term = linalg::operator_norm(&(comm * a_plus_i_inv))?;
    let conj = |s: f64| {
        let up = spec.function(|x| (1.0 + x * x).powf(0.5 * s));
        let down = spec.function(|x| (1.0 + x * x).powf(-0.5 * s));
        let mut m = up;
        for j in 0..r.len() {
            for i in 0..r.len() {
                m[(i, j)] *= rd[j];
            }
        }
        linalg::operator_norm(&(m * down))
    };
    let full = conj(1.0)?;
    Ok(ResolventWeights {
        norm_r,
        commutator_term,
        k_route: norm_r.powf(1.0 - nu) * (norm_r + commutator_term).powf(nu),
        k_interp: norm_r.powf(1.0 - nu) * full.powf(nu),
        k_direct: conj(nu)?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GapTransfer {
    pub lambda0: f64,
    pub interval: Interval,
    pub reciprocal_interval: Interval,
    pub weights: ResolventWeights,
    pub r_sweep: ResolventSweep,
    /// Right side evaluated at the images of the direct sweep points, aligned with them.
    pub pointwise: Vec<f64>,
    pub bound: f64,
}

impl GapTransfer {
    /// Direct sweep points exceeding their transferred bound.
    pub fn violations(&self, direct: &ResolventSweep) -> Result<usize> {
        if direct.values.len() != self.pointwise.len() {
            return Err(Error::Consistency("sweeps do not share a sample set".into()));
        }
        Ok(direct.values.iter().zip(&self.pointwise).filter(|(p, b)| p.norm > **b).count())
    }
}

/// Transfers the LAP from `R = (H−λ0)^{−1}` on `Ĩ` back to `H` on `I`.
///
/// Besides the `Ĩ` sweep, the right side is evaluated at `λ̃ = 1/(λ−λ0)`,
/// `μ′ = μ/((λ−λ0)²+μ²)` for every direct sample `(λ, μ)`, where the
/// inequality holds point by point.
pub fn gap_transfer(
    h: &MultiplierOperator,
    a: &HermitianOperator,
    interval: Interval,
    nu: f64,
    lambda0: f64,
    cfg: &SweepConfig,
) -> Result<GapTransfer> {
    let hs = h.real_samples();
    let (lo, hi) = hs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &x| (l.min(x), u.max(x)));
    if lambda0 >= lo && lambda0 <= hi {
        return Err(Error::InvalidParameter(format!("λ0 = {lambda0} inside the spectral hull [{lo}, {hi}]")));
    }
    let base = WeightedResolvent::new(h, a, nu)?;
    let r: Vec<f64> = hs.iter().map(|x| 1.0 / (x - lambda0)).collect();
    let rr = base.with_samples(r.clone())?;
    let tilde = interval.reciprocal(lambda0)?;
    let r_sweep = rr.sweep(tilde, cfg)?;
    let weights = resolvent_weights(&r, a, nu)?;
    let rhs = |lt: f64, norm: f64| lt.abs() * (lt.abs() + 1.0 / lt.abs() + norm) * weights.k_route;

    let lambdas = interval.linspace(cfg.lambda_points);
    let mus = cfg.mus()?;
    let mapped: Vec<(f64, f64)> = lambdas
        .iter()
        .flat_map(|&l| {
            mus.iter().map(move |&m| {
                let x = l - lambda0;
                (1.0 / x, m / (x * x + m * m))
            })
        })
        .collect();
    let pointwise: Vec<f64> = rr.evaluate(&mapped)?.iter().map(|p| rhs(p.lambda, p.norm)).collect();
    let bound = r_sweep
        .values
        .iter()
        .map(|p| rhs(p.lambda, p.norm))
        .chain(pointwise.iter().copied())
        .fold(0.0, f64::max);
    Ok(GapTransfer { lambda0, interval, reciprocal_interval: tilde, weights, r_sweep, pointwise, bound })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExplicitChain {
    pub constants: LapConstants,
    pub norm_r: f64,
    pub norm_r_a: f64,
    pub norm_r_a_a: f64,
    pub reciprocal_window: Interval,
    /// Bound on the `μ ≥ 1` part, `1/μ·‖⟨A⟩^{−2ν}‖ ≤ 1`.
    pub large_mu_bound: f64,
    pub k_route: f64,
    pub bound: f64,
}

/// The gap-transfer right side with the `R` resolvent replaced by the
/// explicit bounded-operator constant, for `λ0 = 0` and Mourre constant
/// `(1+β)^{−2}` of `H^{−1}` on `J̃`.
pub fn explicit_chain(
    h: &MultiplierOperator,
    a: &HermitianOperator,
    pair: &IntervalPair,
    beta: f64,
    nu: f64,
) -> Result<ExplicitChain> {
    let hs = h.real_samples();
    if hs.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidParameter("H must be strictly positive".into()));
    }
    let r: Vec<f64> = hs.iter().map(|x| 1.0 / x).collect();
    let rd = linalg::real_diag(&r);
    let ra = linalg::commutator_diag(&rd, a.matrix());
    let raa = linalg::commutator(&ra, a.matrix());
    let norm_r = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let norm_r_a = linalg::operator_norm(&ra)?;
    let norm_r_a_a = linalg::operator_norm(&raa)?;
    let tilde = pair.i.reciprocal(0.0)?;
    let jt = mourre::inverse_window(pair.j)?;
    let delta = 0.5 * (tilde.lo - jt.lo).min(jt.hi - tilde.hi);
    let mourre_a = (1.0 + beta).powi(-2);
    let constants = explicit_constants(mourre_a, norm_r, norm_r_a, norm_r_a_a, tilde.lo, tilde.hi, delta, nu)?;
    let weights = resolvent_weights(&r, a, nu)?;
    let lt = tilde.hi;
    let bound = lt * (lt + 1.0 / tilde.lo + constants.bound.max(1.0)) * weights.k_route;
    Ok(ExplicitChain {
        constants,
        norm_r,
        norm_r_a,
        norm_r_a_a,
        reciprocal_window: jt,
        large_mu_bound: 1.0,
        k_route: weights.k_route,
        bound,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct InterpolationCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub passed: bool,
}

/// `‖S1^ν X S2^ν‖ ≤ ‖X‖^{1−ν}‖S1 X S2‖^ν`.
pub fn interpolation_check(x: &DMatrix<C64>, s1: &DMatrix<C64>, s2: &DMatrix<C64>, nu: f64) -> Result<InterpolationCheck> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::InvalidParameter(format!("ν = {nu} outside [0, 1]")));
    }
    let root = |s: &DMatrix<C64>| -> Result<DMatrix<C64>> {
        let spec = linalg::hermitian_eigen(s)?;
        if !(spec.min() > 0.0) {
            return Err(Error::InvalidParameter(format!("weight not positive definite, λ_min = {:e}", spec.min())));
        }
        Ok(spec.function(|v| v.powf(nu)))
    };
    let lhs = linalg::operator_norm(&(root(s1)? * x * root(s2)?))?;
    let nx = linalg::operator_norm(x)?;
    let ns = linalg::operator_norm(&(s1 * x * s2))?;
    let rhs = nx.powf(1.0 - nu) * ns.powf(nu);
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 1.0 } else { f64::INFINITY };
    Ok(InterpolationCheck { lhs, rhs, ratio, passed: lhs <= rhs * (1.0 + 1e-10) })
}

/// Relative max-entry gap between `[R(z), A]` and `−R(z)[H,A]R(z)`.
pub fn resolvent_commutator_residual(h: &MultiplierOperator, a: &HermitianOperator, z: C64) -> Result<f64> {
    if z.im == 0.0 {
        return Err(Error::InvalidParameter("z must be off the real axis".into()));
    }
    let hs = h.samples();
    let r: Vec<C64> = hs.iter().map(|&x| (x - z).inv()).collect();
    let direct = linalg::commutator_diag(&r, a.matrix());
    let ha = linalg::commutator_diag(hs, a.matrix());
    let n = r.len();
    let identity = DMatrix::from_fn(n, n, |i, j| -(r[i] * ha[(i, j)] * r[j]));
    let scale = linalg::max_abs_entry(&direct).max(f64::MIN_POSITIVE);
    Ok(linalg::max_abs_entry(&(direct - identity)) / scale)
}

/// Mesh record for reports.
pub fn mesh(grid: &MomentumGrid) -> Mesh {
    Mesh::of(grid)
}
