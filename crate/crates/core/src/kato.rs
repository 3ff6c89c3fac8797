//! Locally smooth operators: time integrals, optimal constants, commuting
//! families and square integrability on `M(H)_a`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{self, HermitianOperator, Interval, MomentumGrid, MultiplierOperator, WaveFunction};
use crate::lap::{ResolventSweep, SweepConfig, WeightedResolvent};
use crate::linalg;
use crate::quadrature;

/// Time mesh on `[−t_max, t_max]`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TimeMesh {
    pub t_max: f64,
    pub step: f64,
}

impl TimeMesh {
    /// `t_max = 200/|I|`, step at most `π/(4β)`.
    pub fn for_window(interval: Interval, beta: f64) -> Result<Self> {
        let width = interval.width();
        if !(width > 0.0) || !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("window width {width}, β = {beta}")));
        }
        Ok(Self { t_max: 200.0 / width, step: PI / (4.0 * beta) })
    }

    /// Sample times, an even number of intervals.
    pub fn times(&self) -> Vec<f64> {
        let half = (self.t_max / self.step).ceil().max(1.0) as usize;
        let dt = self.t_max / half as f64;
        (0..=2 * half).map(|k| -self.t_max + k as f64 * dt).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeIntegral {
    pub mesh: TimeMesh,
    /// Damping rate `μ` of the factor `e^{−2μ|τ|}`; 0 for the plain integral.
    pub damping: f64,
    pub truncated: f64,
    /// `2∫_{t_max}^∞ C τ^{−2ν}`, `None` when the integrand does not decay.
    pub tail: Option<f64>,
    pub fitted_exponent: f64,
    pub total: f64,
    /// Tail missing or above 5% of the truncated part.
    pub tail_flagged: bool,
    #[serde(skip)]
    pub series: Vec<(f64, f64)>,
}

impl TimeIntegral {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "tau,integrand")?;
        for (t, v) in &self.series {
            writeln!(w, "{t:e},{v:e}")?;
        }
        Ok(())
    }
}

fn weighted_sq_norm(v: &DVector<C64>, weight: f64) -> f64 {
    v.norm_squared() * weight
}

fn projected(h: &MultiplierOperator, interval: Interval, f: &WaveFunction) -> Result<DVector<C64>> {
    if h.grid() != f.grid() {
        return Err(Error::GridMismatch("H and f live on different grids".into()));
    }
    let proj = grid::spectral_projection(h, interval)?;
    Ok(proj.projector.apply(f)?.into_amplitudes())
}

/// `⟨A⟩^{−ν}` for `ν > 1/2`.
pub fn decay_weight(a: &HermitianOperator, nu: f64) -> Result<DMatrix<C64>> {
    if !(nu > 0.5) {
        return Err(Error::InvalidParameter(format!("ν = {nu} must exceed 1/2")));
    }
    Ok(grid::bracket_power(a, nu)?.matrix().clone())
}

/// `∫ e^{−2μ|τ|} ‖T e^{iτH} E(I) f‖² dτ` by Simpson's rule, with a
/// `C τ^{−2ν}` tail fitted on the last decade when `μ = 0`.
pub fn local_decay_integral(
    t: &DMatrix<C64>,
    h: &MultiplierOperator,
    interval: Interval,
    f: &WaveFunction,
    mesh: TimeMesh,
    nu: f64,
    damping: f64,
) -> Result<TimeIntegral> {
    if !(damping >= 0.0) {
        return Err(Error::InvalidParameter(format!("damping {damping} < 0")));
    }
    let g = projected(h, interval, f)?;
    let hs = h.real_samples();
    let weight = h.grid().weight();
    let times = mesh.times();
    let values: Vec<f64> = times
        .par_iter()
        .map(|&tau| {
            let v = DVector::from_iterator(
                g.len(),
                g.iter().zip(&hs).map(|(z, &x)| z * C64::from_polar(1.0, tau * x)),
            );
            weighted_sq_norm(&(t * v), weight) * (-2.0 * damping * tau.abs()).exp()
        })
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("time integrand"));
    }
    let dt = times[1] - times[0];
    let truncated = quadrature::simpson(&values, dt);

    // last decade, both signs folded
    let n = times.len();
    let fold: Vec<(f64, f64)> = (0..n / 2)
        .filter(|&k| -times[k] >= 0.1 * mesh.t_max)
        .map(|k| (-times[k], 0.5 * (values[k] + values[n - 1 - k])))
        .filter(|&(_, v)| v > 0.0)
        .collect();
    let fitted_exponent = if fold.len() >= 2 {
        let xs: Vec<f64> = fold.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = fold.iter().map(|p| p.1.ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        -sxy / sxx
    } else {
        f64::NAN
    };
    let tail = if damping > 0.0 {
        Some(0.0)
    } else if fitted_exponent > 0.0 && fold.len() >= 2 {
        // least squares for C with the exponent pinned at 2ν
        let p = 2.0 * nu;
        let (num, den) = fold
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, v)| (a + v * x.powf(-p), b + x.powf(-2.0 * p)));
        let c = num / den;
        Some(2.0 * c * mesh.t_max.powf(1.0 - p) / (p - 1.0))
    } else {
        None
    };
    let tail_flagged = match tail {
        None => true,
        Some(x) => x > 0.05 * truncated,
    };
    Ok(TimeIntegral {
        mesh,
        damping,
        truncated,
        tail,
        fitted_exponent,
        total: truncated + tail.unwrap_or(0.0),
        tail_flagged,
        series: times.into_iter().zip(values).collect(),
    })
}

/// `(2/π) ∫ ‖T Im R(λ+iμ) E(I) f‖² dλ` by adaptive quadrature on cells of
/// width `μ`, over the spectral hull of `E(I)f` widened by `200μ`.
pub fn frequency_integral(
    t: &DMatrix<C64>,
    h: &MultiplierOperator,
    interval: Interval,
    f: &WaveFunction,
    mu: f64,
) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("μ = {mu} must be positive")));
    }
    let g = projected(h, interval, f)?;
    let hs = h.real_samples();
    let weight = h.grid().weight();
    let support: Vec<usize> = (0..g.len()).filter(|&k| g[k].norm() > 0.0).collect();
    if support.is_empty() {
        return Ok(0.0);
    }
    let lo = support.iter().map(|&k| hs[k]).fold(f64::INFINITY, f64::min) - 200.0 * mu;
    let hi = support.iter().map(|&k| hs[k]).fold(f64::NEG_INFINITY, f64::max) + 200.0 * mu;
    let cells = ((hi - lo) / mu).ceil() as usize;
    let width = (hi - lo) / cells as f64;
    let tsub = t.select_columns(&support);
    let integrand = |lambda: f64| {
        let v = DVector::from_iterator(
            support.len(),
            support.iter().map(|&k| g[k] * (mu / ((hs[k] - lambda).powi(2) + mu * mu))),
        );
        weighted_sq_norm(&(&tsub * v), weight)
    };
    // collected first so the summation order does not depend on scheduling
    let parts: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let a = lo + c as f64 * width;
            quadrature::adaptive(&integrand, a, a + width, 1e-10 / mu).0
        })
        .collect();
    let total: f64 = parts.iter().sum();
    Ok(2.0 / PI * total)
}

/// `c(p) = 8 sup_{λ∈I, μ} ‖⟨A⟩^{−ν} Im R(λ+iμ) ⟨A⟩^{−ν}‖`.
#[derive(Clone, Debug, Serialize)]
pub struct CpBound {
    pub value: f64,
    pub mu_min: f64,
    pub sweep: ResolventSweep,
}

pub fn cp_bound(
    h: &MultiplierOperator,
    a: &HermitianOperator,
    interval: Interval,
    nu: f64,
    cfg: &SweepConfig,
) -> Result<CpBound> {
    let wr = WeightedResolvent::new(h, a, nu)?;
    let sweep = wr.im_sweep(interval, cfg)?;
    Ok(CpBound { value: 8.0 * sweep.supremum, mu_min: cfg.mu_min, sweep })
}

/// Largest gap between consecutive samples of `H` inside `interval`.
pub fn level_spacing(h: &MultiplierOperator, interval: Interval) -> f64 {
    let mut xs: Vec<f64> = h.real_samples().into_iter().filter(|&x| interval.contains(x)).collect();
    xs.sort_by(f64::total_cmp);
    xs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// `c(p)` with `μ_min` raised to the level spacing of `H` in `interval`;
/// below it the sweep resolves individual grid eigenvalues.
pub fn cp_bound_resolved(
    h: &MultiplierOperator,
    a: &HermitianOperator,
    interval: Interval,
    nu: f64,
    cfg: &SweepConfig,
) -> Result<CpBound> {
    let spacing = level_spacing(h, interval);
    let cfg = SweepConfig { mu_min: cfg.mu_min.max(spacing), ..*cfg };
    cp_bound(h, a, interval, nu, &cfg)
}

/// λ mesh for suprema over ℝ: `count` points on `K` and `count/2` on each
/// side over one width of `K`.
fn extended_mesh(k: Interval, count: usize) -> Vec<f64> {
    let w = k.width().max(1e-3);
    let side = (count / 2).max(1);
    let mut out: Vec<f64> = (1..=side).rev().map(|i| k.lo - w * i as f64 / side as f64).collect();
    out.extend(k.linspace(count));
    out.extend((1..=side).map(|i| k.hi + w * i as f64 / side as f64));
    out
}

fn clamp(x: f64, k: Interval) -> f64 {
    x.max(k.lo).min(k.hi)
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimalConstant {
    /// `2^{|a|} sup μ_a ‖T E(K(a)) R_a‖²` over the sampled `(λ, μ)`.
    pub c0: f64,
    /// `8^n sup_{λ∈K, μ} ‖T Im R T*‖`.
    pub kato_bound: f64,
    pub ratio: f64,
    /// Sample points whose own term exceeds the bound at the clamped `λ`.
    pub pointwise_violations: usize,
    pub passed: bool,
    pub lambda_points: usize,
    pub mu_points: usize,
}

/// Single operator: `C_K^0 = 2 sup μ‖T E(K) R(λ+iμ)‖²` against `8 sup ‖T Im R T*‖`.
pub fn optimal_constant(
    t: &DMatrix<C64>,
    h: &MultiplierOperator,
    k: Interval,
    cfg: &SweepConfig,
) -> Result<OptimalConstant> {
    if !h.is_real() || t.ncols() != h.grid().len() {
        return Err(Error::InvalidParameter("T must act on the grid of a real H".into()));
    }
    let hs = h.real_samples();
    let lambdas = extended_mesh(k, cfg.lambda_points);
    let mus = cfg.mus()?;
    let points: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| mus.iter().map(move |&m| (l, m))).collect();
    let tt = t.adjoint();
    let rhs_at = |lambda: f64, mu: f64| -> Result<f64> {
        let d: Vec<C64> = hs.iter().map(|&x| C64::new(mu / ((x - lambda).powi(2) + mu * mu), 0.0)).collect();
        let mut m = t.clone();
        for (j, dj) in d.iter().enumerate() {
            m.column_mut(j).iter_mut().for_each(|z| *z *= dj);
        }
        linalg::hermitian_norm(&(m * &tt))
    };
    let results: Vec<Result<(f64, f64)>> = points
        .par_iter()
        .map(|&(lambda, mu)| {
            let mut m = t.clone();
            for (j, &x) in hs.iter().enumerate() {
                let d = if k.contains(x) { (C64::new(x - lambda, -mu)).inv() } else { C64::new(0.0, 0.0) };
                m.column_mut(j).iter_mut().for_each(|z| *z *= d);
            }
            let lhs = 2.0 * mu * linalg::operator_norm(&m)?.powi(2);
            let rhs = 8.0 * rhs_at(clamp(lambda, k), mu)?;
            Ok((lhs, rhs))
        })
        .collect();
    let results: Vec<(f64, f64)> = results.into_iter().collect::<Result<_>>()?;
    let c0 = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let kato_bound = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let pointwise_violations = results.iter().filter(|r| r.0 > r.1 * (1.0 + 1e-10)).count();
    Ok(OptimalConstant {
        c0,
        kato_bound,
        ratio: if kato_bound > 0.0 { c0 / kato_bound } else { 0.0 },
        pointwise_violations,
        passed: pointwise_violations == 0 && c0 <= kato_bound * (1.0 + 1e-10),
        lambda_points: lambdas.len(),
        mu_points: mus.len(),
    })
}

/// Hyperrectangle `K = I_1 × … × I_n` and commuting multipliers on one grid.
#[derive(Clone, Debug)]
pub struct FamilySpec {
    pub operators: Vec<MultiplierOperator>,
    pub k: Vec<Interval>,
}

impl FamilySpec {
    pub fn new(operators: Vec<MultiplierOperator>, k: Vec<Interval>) -> Result<Self> {
        let n = operators.len();
        if n == 0 || n > 3 || k.len() != n {
            return Err(Error::InvalidParameter(format!("{n} operators with {} intervals (1 ≤ n ≤ 3)", k.len())));
        }
        if operators.iter().any(|h| h.grid() != operators[0].grid() || !h.is_real()) {
            return Err(Error::GridMismatch("family members must be real multipliers on one grid".into()));
        }
        if k.iter().any(|i| i.is_empty() || !i.lo.is_finite() || !i.hi.is_finite()) {
            return Err(Error::InvalidParameter("K must be a compact hyperrectangle".into()));
        }
        Ok(Self { operators, k })
    }

    pub fn n(&self) -> usize {
        self.operators.len()
    }

    pub fn partition(&self) -> Vec<PartitionSet> {
        let b = Hyperrectangle { sides: self.k.iter().map(|i| (i.lo, i.hi)).collect() };
        partition_sets(&b, self.n())
    }
}

/// Family constant for the rank-one `T_f g = ⟨f, g⟩` and subset `a`:
/// `2^{|a|} sup μ_a ‖T_f E(K(a)) R_a‖²`; for `a = N` compared with
/// `8^n sup_{λ∈K} ‖T_f Im R T_f*‖`.
pub fn family_constant(
    spec: &FamilySpec,
    f: &WaveFunction,
    subset: &[usize],
    cfg: &SweepConfig,
) -> Result<OptimalConstant> {
    let n = spec.n();
    if subset.is_empty() || subset.iter().any(|&j| j >= n) {
        return Err(Error::InvalidParameter(format!("subset {subset:?} of {{0..{n}}}")));
    }
    let grid = spec.operators[0].grid();
    if f.grid() != grid {
        return Err(Error::GridMismatch("f and the family live on different grids".into()));
    }
    let weight = grid.weight();
    let hs: Vec<Vec<f64>> = spec.operators.iter().map(|h| h.real_samples()).collect();
    let rho: Vec<f64> = f.amplitudes().iter().map(|z| z.norm_sqr() * weight).collect();
    let parts = spec.partition();
    let mask = subset.iter().fold(0usize, |m, &j| m | (1 << j));
    let region = parts.iter().find(|p| p.mask == mask).expect("every subset has a set");
    let inside: Vec<bool> = (0..rho.len()).map(|q| region.contains(&(0..n).map(|j| hs[j][q]).collect::<Vec<_>>())).collect();

    let axes_l: Vec<Vec<f64>> = subset.iter().map(|&j| extended_mesh(spec.k[j], cfg.lambda_points)).collect();
    let mus = cfg.mus()?;
    let full = subset.len() == n;
    let m = subset.len();
    let mut points: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![], vec![])];
    for axis in 0..m {
        let mut next = Vec::new();
        for (l, u) in &points {
            for &lam in &axes_l[axis] {
                for &mu in &mus {
                    let mut l2 = l.clone();
                    l2.push(lam);
                    let mut u2 = u.clone();
                    u2.push(mu);
                    next.push((l2, u2));
                }
            }
        }
        points = next;
    }
    let scale = 2f64.powi(m as i32);
    let results: Vec<(f64, f64)> = points
        .par_iter()
        .map(|(lam, mu)| {
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            let clamped: Vec<f64> = (0..m).map(|i| clamp(lam[i], spec.k[subset[i]])).collect();
            for q in 0..rho.len() {
                if rho[q] == 0.0 {
                    continue;
                }
                let mut r2 = 1.0;
                let mut im = 1.0;
                for (i, &j) in subset.iter().enumerate() {
                    let x = hs[j][q];
                    r2 *= mu[i] / ((x - lam[i]).powi(2) + mu[i] * mu[i]);
                    im *= mu[i] / ((x - clamped[i]).powi(2) + mu[i] * mu[i]);
                }
                if inside[q] {
                    lhs += rho[q] * r2;
                }
                rhs += rho[q] * im;
            }
            (scale * lhs, 8f64.powi(m as i32) * rhs)
        })
        .collect();
    let c0 = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let kato_bound = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let pointwise_violations = if full { results.iter().filter(|r| r.0 > r.1 * (1.0 + 1e-10)).count() } else { 0 };
    Ok(OptimalConstant {
        c0,
        kato_bound,
        ratio: if kato_bound > 0.0 { c0 / kato_bound } else { 0.0 },
        pointwise_violations,
        passed: !full || (pointwise_violations == 0 && c0 <= kato_bound * (1.0 + 1e-10)),
        lambda_points: axes_l.iter().map(Vec::len).product(),
        mu_points: mus.len().pow(m as u32),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Hyperrectangle {
    pub sides: Vec<(f64, f64)>,
}

/// One `K(a)`; `a` as a bit mask over the axes.
#[derive(Clone, Debug, Serialize)]
pub struct PartitionSet {
    pub mask: usize,
    pub axes: Vec<usize>,
    /// `x_j ∈ side_j` for `j ∈ a` (all axes for `a = N`), or the complement of
    /// the other sets for `a = ∅`.
    pub description: String,
    #[serde(skip)]
    sides: Vec<(f64, f64)>,
    #[serde(skip)]
    n: usize,
}

impl PartitionSet {
    fn in_cylinder(sides: &[(f64, f64)], mask: usize, x: &[f64]) -> bool {
        (0..sides.len()).filter(|j| mask & (1 << j) != 0).all(|j| x[j] >= sides[j].0 && x[j] <= sides[j].1)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if self.mask != 0 {
            return Self::in_cylinder(&self.sides, self.mask, x);
        }
        !(1..(1usize << self.n)).any(|m| Self::in_cylinder(&self.sides, m, x))
    }
}

pub fn partition_sets(k: &Hyperrectangle, n: usize) -> Vec<PartitionSet> {
    assert!(n >= 1 && n <= 3 && k.sides.len() == n, "partition for 1 ≤ n ≤ 3");
    (0..(1usize << n))
        .map(|mask| {
            let axes: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
            let description = if mask == 0 {
                "complement of the union of the cylinders".to_string()
            } else {
                axes.iter()
                    .map(|&j| format!("x{} in [{}, {}]", j + 1, k.sides[j].0, k.sides[j].1))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            PartitionSet { mask, axes, description, sides: k.sides.clone(), n }
        })
        .collect()
}

/// `|||f|||_a = sup_{x_a} (∫ ρ_f(x_a ⊕ x^a) dx^a)^{1/2}` for a density on a grid.
pub fn mh_norm(grid: &MomentumGrid, rho: &[f64], subset: &[usize]) -> Result<f64> {
    let marg = marginal(grid, rho, subset)?;
    Ok(marg.iter().copied().fold(0.0, f64::max).sqrt())
}

/// `∫ ρ dx^a` as a function of the kept axes, row-major over them.
fn marginal(grid: &MomentumGrid, rho: &[f64], subset: &[usize]) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::InvalidParameter("|||·|||_a needs a nonempty a".into()));
    }
    let n = grid.dim();
    if subset.iter().any(|&j| j >= n) || rho.len() != grid.len() {
        return Err(Error::InvalidParameter("density or subset does not fit the grid".into()));
    }
    if rho.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::InvalidParameter("density has negative or non-finite entries".into()));
    }
    let cell: f64 = (0..n).filter(|j| !subset.contains(j)).map(|j| grid.spacing(j)).product();
    let size = grid.n().pow(subset.len() as u32);
    let mut out = vec![0.0; size];
    for (k, &r) in rho.iter().enumerate() {
        let idx = grid.multi_index(k);
        let key = subset.iter().fold(0, |acc, &j| acc * grid.n() + idx[j]);
        out[key] += r * cell;
    }
    Ok(out)
}

/// Half-widths `h_j = max |x_j| + Δx_j/2` over the support of `ρ`, for `j ∉ a`.
pub fn support_half_widths(grid: &MomentumGrid, rho: &[f64], subset: &[usize]) -> Vec<f64> {
    (0..grid.dim())
        .filter(|j| !subset.contains(j))
        .map(|j| {
            let m = (0..rho.len())
                .filter(|&k| rho[k] > 0.0)
                .map(|k| grid.point(k)[j].abs())
                .fold(0.0, f64::max);
            m + 0.5 * grid.spacing(j)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SquareIntegrability {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// `∏ 2h_j |||f|||² ‖g‖² (2π)^{|a|}` when the bounded-energy form applies.
    pub bounded_energy_rhs: f64,
    /// Relative gap between the DFT value and the direct Plancherel sum.
    pub plancherel_residual: f64,
    pub passed: bool,
    pub bounded_energy_passed: bool,
}

/// `∫ |⟨f, e^{i x_a·H_a} g⟩|² dx_a ≤ (2π)^{|a|} |||f|||_a² ‖g‖²` in the model
/// `L²(ℝⁿ, ρ dx)` with `H_j = x_j`. The discrete pairing is periodic in `x_a`;
/// the integral runs over one period and is evaluated by DFT.
pub fn square_integrability_check(
    grid: &Arc<MomentumGrid>,
    f: &[C64],
    g: &[C64],
    rho: &[f64],
    subset: &[usize],
    fft_tol: f64,
) -> Result<SquareIntegrability> {
    let len = grid.len();
    if f.len() != len || g.len() != len {
        return Err(Error::GridMismatch("f, g and ρ must live on the grid".into()));
    }
    let rho_f: Vec<f64> = f.iter().zip(rho).map(|(z, r)| z.norm_sqr() * r).collect();
    let nf = mh_norm(grid, &rho_f, subset)?;
    let nf_full = mh_norm(grid, &rho_f, &(0..grid.dim()).collect::<Vec<_>>())?;
    let cell = grid.weight();
    let g2: f64 = g.iter().zip(rho).map(|(z, r)| z.norm_sqr() * r).sum::<f64>() * cell;

    // F(σ_a) = ∫ conj(f) g ρ dσ^a
    let n = grid.n();
    let kept = subset.len();
    let other: f64 = (0..grid.dim()).filter(|j| !subset.contains(j)).map(|j| grid.spacing(j)).product();
    let mut big_f = vec![C64::new(0.0, 0.0); n.pow(kept as u32)];
    for k in 0..len {
        let idx = grid.multi_index(k);
        let key = subset.iter().fold(0, |acc, &j| acc * n + idx[j]);
        big_f[key] += f[k].conj() * g[k] * rho[k] * other;
    }
    let da: f64 = subset.iter().map(|&j| grid.spacing(j)).product();
    let direct = (2.0 * PI).powi(kept as i32) * big_f.iter().map(|z| z.norm_sqr()).sum::<f64>() * da;

    let mut spectrum = big_f.clone();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    for axis in 0..kept {
        let stride = n.pow((kept - 1 - axis) as u32);
        let mut line = vec![C64::new(0.0, 0.0); n];
        for start in 0..spectrum.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for i in 0..n {
                line[i] = spectrum[start + i * stride];
            }
            fft.process(&mut line);
            for i in 0..n {
                spectrum[start + i * stride] = line[i];
            }
        }
    }
    // samples x_m = 2πm/(nΔ) over one period, each spanning 2π/(nΔ) per axis
    let dx: f64 = subset.iter().map(|&j| 2.0 * PI / (n as f64 * grid.spacing(j))).product();
    let lhs = spectrum.iter().map(|z| z.norm_sqr()).sum::<f64>() * da * da * dx;
    let plancherel_residual = (lhs - direct).abs() / direct.max(f64::MIN_POSITIVE);

    let rhs = (2.0 * PI).powi(kept as i32) * nf * nf * g2;
    let widths: f64 = support_half_widths(grid, &rho_f, subset).iter().map(|h| 2.0 * h).product();
    let bounded_energy_rhs = (2.0 * PI).powi(kept as i32) * widths * nf_full * nf_full * g2;
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(SquareIntegrability {
        lhs,
        rhs,
        ratio,
        bounded_energy_rhs,
        plancherel_residual,
        passed: ratio <= 1.0 + fft_tol,
        bounded_energy_passed: lhs <= bounded_energy_rhs * (1.0 + fft_tol),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothnessReport {
    pub scenario: String,
    pub nu: f64,
    pub time_integral: f64,
    pub time_tail: Option<f64>,
    pub tail_flagged: bool,
    pub damping: f64,
    pub damped_time_integral: f64,
    pub frequency_integral: f64,
    pub two_path_gap: f64,
    pub cp: f64,
    pub c0: f64,
    pub eight_sup: f64,
    pub decay_dominated: bool,
    pub optimal_dominated: bool,
}
