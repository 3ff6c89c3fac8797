//! Synthetic two-particle channel: Cook's integrand in relative
//! coordinates, its fiber decomposition in total momentum, and the
//! estimates that make it L²-Cauchy.
//!
//! The model space is `L²(ρ dE dP)` with `H` and `P` acting by
//! multiplication. The commutator profile factorizes as
//! `φ(u; E, P) = χ_P(u)·Φ(E, P)`, with `χ̂_P` a smooth bump on the relative
//! momenta `q` allowed by `P/2 + q ∈ K1`, `P/2 − q ∈ K2`. Fourier
//! transforms in `u ↔ q` are unitary, so fiber norms can be taken in `q`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::conjugate::{self, ConjugateOperatorSpec};
use crate::dispersion::DispersionParams;
use crate::error::{Error, Result};
use crate::grid::{Interval, MomentumGrid};
use crate::linalg;
use crate::quadrature;

#[derive(Clone, Debug, Serialize)]
pub struct ChannelConfig {
    /// `total_momentum` is ignored; each fiber sets its own.
    pub params: DispersionParams,
    pub nu: f64,
    pub energy: Interval,
    pub n_energy: usize,
    /// Energy support of `ρ`.
    pub support: Interval,
    pub rho_ripple: f64,
    /// Optional restriction of `ρ` in total momentum.
    pub slab: Option<Interval>,
    pub n_momentum: usize,
    pub q_extent: f64,
    pub n_q: usize,
    pub u_extent: f64,
    pub n_u: usize,
    /// Support of the profile `Φ` in `E` and `P`.
    pub profile_energy: Interval,
    pub profile_momentum: Interval,
    /// `ψ` is normalized, then multiplied by `scale·e^{i·phase}`.
    pub psi_scale: f64,
    pub psi_phase: f64,
    pub first_window: f64,
    pub horizon: f64,
    pub budget: usize,
}

impl ChannelConfig {
    pub fn default_for(params: DispersionParams) -> Self {
        let m = params.mass;
        Self {
            params,
            nu: 0.75,
            energy: Interval::closed(2.2, 3.6),
            n_energy: 96,
            support: Interval::closed(2.3, 3.5),
            rho_ripple: 0.25,
            slab: None,
            n_momentum: 33,
            q_extent: 4.0,
            n_q: 128,
            u_extent: 200.0,
            n_u: 401,
            profile_energy: Interval::closed(2.3, 3.5),
            profile_momentum: Interval::closed(0.35, 0.85),
            psi_scale: 1.0,
            psi_phase: 0.0,
            first_window: 10.0,
            horizon: 160.0 / m,
            budget: 4096,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.params.dim() != 1 {
            return Err(Error::InvalidParameter(format!(
                "channel supports s = 1 only (got s = {})",
                self.params.dim()
            )));
        }
        if !(self.nu > 0.5 && self.nu <= 1.0) {
            return Err(Error::InvalidParameter(format!("ν = {} outside (1/2, 1]", self.nu)));
        }
        for (name, n) in [("n_energy", self.n_energy), ("n_momentum", self.n_momentum), ("n_q", self.n_q), ("n_u", self.n_u)] {
            if n < 8 {
                return Err(Error::InvalidGrid(format!("{name} = {n} < 8")));
            }
        }
        let points = self.n_energy * self.n_momentum;
        if self.n_q > self.budget || points * self.n_u > 64 * self.budget * self.budget {
            return Err(Error::BudgetExceeded { points: self.n_q.max(points), cap: self.budget });
        }
        if !(self.energy.lo >= 0.0 && self.energy.width() > 0.0) {
            return Err(Error::InvalidParameter("energy grid must lie in [0, ∞) with positive width".into()));
        }
        if !(self.first_window > 0.0 && self.horizon >= 2.0 * self.first_window) {
            return Err(Error::InvalidParameter(format!(
                "windows [{}, ·] do not fit the horizon {}",
                self.first_window, self.horizon
            )));
        }
        if !(self.rho_ripple.abs() < 1.0) {
            return Err(Error::InvalidParameter("ρ ripple must be below 1 in magnitude".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CommutatorProfile {
    pub u: Vec<f64>,
    /// `max_u ‖φ(u)‖⟨u⟩^k` for `k = 0..=4`.
    pub certificate: [f64; 5],
    /// Fitted `k` in `‖φ(u)‖ ~ ⟨u⟩^{−k}` away from the origin.
    pub decay_exponent: f64,
    pub decay_ok: bool,
    /// `∫‖φ(u)‖² du` and `∫‖⟨u⟩^ν φ(u)‖² du`.
    pub norm_sq: f64,
    pub weighted_norm_sq: f64,
    #[serde(skip)]
    pub shell_norms: Vec<f64>,
    /// `χ_P(u)`, `[P][u]`.
    #[serde(skip)]
    pub chi_u: Vec<Vec<C64>>,
    /// `χ̂_P(q)`, `[P][q]`.
    #[serde(skip)]
    pub chi_q: Vec<Vec<C64>>,
    /// `Φ(E, P)`, `[P][E]`.
    #[serde(skip)]
    pub profile: Vec<Vec<f64>>,
}

impl CommutatorProfile {
    /// `φ(u)` as a model-space array `[P][E]`.
    pub fn at(&self, iu: usize) -> Vec<Vec<C64>> {
        self.profile
            .iter()
            .zip(&self.chi_u)
            .map(|(row, chi)| row.iter().map(|&f| chi[iu] * f).collect())
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Fiber {
    index: usize,
    p: f64,
    omega: Vec<f64>,
    /// Grid indices of `E_p(I)`.
    window: Vec<usize>,
    /// `⟨A_p⟩^{−2ν}` restricted to the window.
    w2: DMatrix<C64>,
    a_nu_sq: f64,
    u_nu_sq: f64,
    c: f64,
}

#[derive(Clone, Debug)]
pub struct Channel {
    pub config: ChannelConfig,
    pub energies: Vec<f64>,
    pub momenta: Vec<f64>,
    pub q_grid: Arc<MomentumGrid>,
    /// `[P][E]`.
    pub rho: Vec<Vec<f64>>,
    pub psi: Vec<Vec<C64>>,
    pub triple_norm: f64,
    pub profile: CommutatorProfile,
    /// `conj ψ · Φ · ρ`, `[P][E]`.
    amplitude: Vec<Vec<C64>>,
    fibers: Vec<Fiber>,
}

fn linspace(iv: Interval, n: usize) -> Vec<f64> {
    (0..n).map(|k| iv.lo + iv.width() * k as f64 / (n - 1) as f64).collect()
}

fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - x * x).powi(2)
    }
}

/// Relative-momentum filter on `[−1, 1]`; its transform decays like `|u|^{−9}`.
fn filter(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - x * x).powi(8) * (-2.0 * x * x).exp()
    }
}

/// Relative momenta compatible with `P/2 + q ∈ K1`, `P/2 − q ∈ K2`.
fn allowed_q(params: &DispersionParams, p: f64) -> Option<(f64, f64)> {
    let (k1, k2) = (&params.k1, &params.k2);
    let lo = (k1.lower[0] - 0.5 * p).max(0.5 * p - k2.upper[0]);
    let hi = (k1.upper[0] - 0.5 * p).min(0.5 * p - k2.lower[0]);
    (hi > lo).then_some((lo, hi))
}

pub fn build_channel(config: &ChannelConfig) -> Result<Channel> {
    config.validate()?;
    let params = &config.params;
    let k_tot = params.k_tot();
    if !(params.k_rel().min_norm() > 0.0) {
        return Err(Error::InvalidParameter("K_rel not separated from 0".into()));
    }
    let p_range = Interval::closed(k_tot.lower[0], k_tot.upper[0]);
    let energies = linspace(config.energy, config.n_energy);
    let momenta = linspace(p_range, config.n_momentum);
    let de = energies[1] - energies[0];
    let dp = momenta[1] - momenta[0];
    if !(config.profile_momentum.lo >= p_range.lo && config.profile_momentum.hi <= p_range.hi) {
        return Err(Error::InvalidParameter(format!(
            "profile momenta [{}, {}] leave K_tot = [{}, {}]",
            config.profile_momentum.lo, config.profile_momentum.hi, p_range.lo, p_range.hi
        )));
    }
    let shell = momenta.iter().map(|p| (params.mass.powi(2) + p * p).sqrt()).fold(0.0f64, f64::max);
    if !(config.support.lo > shell) {
        return Err(Error::InvalidParameter(format!(
            "ρ support starts at E = {} inside the one-particle region E ≤ {shell:.4}",
            config.support.lo
        )));
    }
    if !(config.support.lo >= config.energy.lo && config.support.hi <= config.energy.hi) {
        return Err(Error::InvalidParameter("ρ support leaves the energy grid".into()));
    }
    if 2.0 * PI / de < 2.0 * config.horizon {
        return Err(Error::InvalidGrid(format!(
            "energy spacing {de:.4} aliases within the horizon {}; need ΔE ≤ π/horizon",
            config.horizon
        )));
    }

    let in_slab = |p: f64| config.slab.is_none_or(|s| s.contains(p));
    let rho: Vec<Vec<f64>> = momenta
        .iter()
        .map(|&p| {
            energies
                .iter()
                .map(|&e| {
                    if config.support.contains(e) && in_slab(p) {
                        1.0 + config.rho_ripple * (3.0 * e).cos()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let raw: Vec<Vec<C64>> = momenta
        .iter()
        .map(|&p| {
            energies
                .iter()
                .map(|&e| C64::from_polar(1.0 + 0.5 * (2.0 * e + p).cos(), e * p))
                .collect()
        })
        .collect();
    let norm_sq: f64 = raw
        .iter()
        .zip(&rho)
        .flat_map(|(r, w)| r.iter().zip(w).map(|(z, x)| z.norm_sqr() * x))
        .sum::<f64>()
        * de
        * dp;
    if !(norm_sq > 0.0) {
        return Err(Error::InvalidParameter("ρ vanishes on the grid".into()));
    }
    let scale = C64::from_polar(config.psi_scale / norm_sq.sqrt(), config.psi_phase);
    let psi: Vec<Vec<C64>> = raw.iter().map(|r| r.iter().map(|z| z * scale).collect()).collect();
    let triple_norm = psi
        .iter()
        .zip(&rho)
        .flat_map(|(r, w)| r.iter().zip(w).map(|(z, x)| z.norm_sqr() * x))
        .fold(0.0f64, f64::max)
        .sqrt();

    let q_grid = Arc::new(MomentumGrid::with_budget(
        vec![-config.q_extent],
        vec![config.q_extent],
        config.n_q,
        config.budget,
    )?);
    let dq = q_grid.spacing(0);
    let qs: Vec<f64> = (0..q_grid.len()).map(|k| q_grid.coordinate(0, k)).collect();
    let u = linspace(Interval::closed(-config.u_extent, config.u_extent), config.n_u);
    let du = u[1] - u[0];

    let pe = config.profile_energy;
    let pm = config.profile_momentum;
    let profile: Vec<Vec<f64>> = momenta
        .iter()
        .map(|&p| {
            let xp = (2.0 * p - pm.lo - pm.hi) / pm.width();
            energies
                .iter()
                .map(|&e| bump((2.0 * e - pe.lo - pe.hi) / pe.width()) * bump(xp))
                .collect()
        })
        .collect();
    let mut chi_q = Vec::with_capacity(momenta.len());
    let mut bands = Vec::with_capacity(momenta.len());
    for (j, &p) in momenta.iter().enumerate() {
        if profile[j].iter().all(|&f| f == 0.0) {
            chi_q.push(vec![C64::new(0.0, 0.0); qs.len()]);
            bands.push(None);
            continue;
        }
        let (lo, hi) = allowed_q(params, p).ok_or_else(|| {
            Error::InvalidParameter(format!("no relative momentum satisfies the K1/K2 constraint at P = {p}"))
        })?;
        let margin = 0.1 * (hi - lo);
        let (lo, hi) = (lo + margin, hi - margin);
        let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let row: Vec<C64> = qs
            .iter()
            .map(|&q| {
                let x = (q - c) / r;
                C64::new(filter(x), 0.0)
            })
            .collect();
        if row.iter().filter(|z| z.norm() > 0.0).count() < 3 {
            return Err(Error::InvalidGrid(format!(
                "q spacing {dq:.4} does not resolve the allowed band [{lo:.4}, {hi:.4}] at P = {p}"
            )));
        }
        chi_q.push(row);
        bands.push(Some((c, r)));
    }
    // continuum transform χ_P(u) = (2π)^{-1/2} ∫ χ̂_P(q) e^{iqu} dq
    const CELLS: usize = 2000;
    let chi_u: Vec<Vec<C64>> = bands
        .par_iter()
        .map(|band| match *band {
            None => vec![C64::new(0.0, 0.0); u.len()],
            Some((c, r)) => {
                let h = 2.0 * r / CELLS as f64;
                let samples: Vec<(f64, f64)> = (0..=CELLS)
                    .map(|k| {
                        let x = -1.0 + 2.0 * k as f64 / CELLS as f64;
                        let w = if k == 0 || k == CELLS { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                        (c + r * x, w * filter(x) * h / 3.0)
                    })
                    .collect();
                u.iter()
                    .map(|&x| {
                        samples.iter().map(|&(q, w)| C64::from_polar(w, q * x)).sum::<C64>() / (2.0 * PI).sqrt()
                    })
                    .collect()
            }
        })
        .collect();

    // ‖φ(u)‖² = Σ_P ΔP |χ_P(u)|² Σ_E ΔE ρ|Φ|²
    let energy_mass: Vec<f64> = profile
        .iter()
        .zip(&rho)
        .map(|(f, w)| f.iter().zip(w).map(|(a, b)| a * a * b).sum::<f64>() * de)
        .collect();
    let shell_norms: Vec<f64> = (0..u.len())
        .map(|iu| {
            (chi_u
                .iter()
                .zip(&energy_mass)
                .map(|(c, m)| c[iu].norm_sqr() * m)
                .sum::<f64>()
                * dp)
                .sqrt()
        })
        .collect();
    let bracket = |x: f64| (1.0 + x * x).sqrt();
    let mut certificate = [0.0; 5];
    for (k, c) in certificate.iter_mut().enumerate() {
        *c = u.iter().zip(&shell_norms).map(|(&x, n)| n * bracket(x).powi(k as i32)).fold(0.0, f64::max);
    }
    // log-log slope of ‖φ(u)‖ on the outer half of the u range
    let outer: Vec<(f64, f64)> = u
        .iter()
        .zip(&shell_norms)
        .filter(|(x, n)| x.abs() >= 0.5 * config.u_extent && **n > 0.0)
        .map(|(&x, &n)| (bracket(x).ln(), n.ln()))
        .collect();
    let decay_exponent = if outer.len() >= 2 {
        let mx = outer.iter().map(|p| p.0).sum::<f64>() / outer.len() as f64;
        let my = outer.iter().map(|p| p.1).sum::<f64>() / outer.len() as f64;
        let sxy: f64 = outer.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = outer.iter().map(|p| (p.0 - mx).powi(2)).sum();
        -sxy / sxx
    } else {
        f64::INFINITY
    };
    let norm_sq_phi: f64 = shell_norms.iter().map(|n| n * n).sum::<f64>() * du;
    let weighted: f64 = u
        .iter()
        .zip(&shell_norms)
        .map(|(&x, n)| n * n * bracket(x).powf(2.0 * config.nu))
        .sum::<f64>()
        * du;
    let profile_rec = CommutatorProfile {
        certificate,
        decay_exponent,
        decay_ok: certificate[4].is_finite() && decay_exponent >= 4.0,
        norm_sq: norm_sq_phi,
        weighted_norm_sq: weighted,
        u,
        shell_norms,
        chi_u,
        chi_q,
        profile,
    };

    let amplitude: Vec<Vec<C64>> = psi
        .iter()
        .zip(&profile_rec.profile)
        .zip(&rho)
        .map(|((s, f), w)| s.iter().zip(f).zip(w).map(|((z, a), b)| z.conj() * a * b).collect())
        .collect();

    let u2 = conjugate::position_bracket(&q_grid)?;
    let active: Vec<usize> = (0..momenta.len())
        .filter(|&j| profile_rec.chi_q[j].iter().any(|z| z.norm() > 0.0) && rho[j].iter().any(|&r| r > 0.0))
        .collect();
    let fibers: Vec<Fiber> = active
        .par_iter()
        .map(|&j| build_fiber(config, &q_grid, &u2, j, momenta[j], &profile_rec.chi_q[j], dq))
        .collect::<Result<_>>()?;

    Ok(Channel {
        config: config.clone(),
        energies,
        momenta,
        q_grid,
        rho,
        psi,
        triple_norm,
        profile: profile_rec,
        amplitude,
        fibers,
    })
}

fn build_fiber(
    config: &ChannelConfig,
    q_grid: &Arc<MomentumGrid>,
    u2: &linalg::Spectral,
    index: usize,
    p: f64,
    chi: &[C64],
    dq: f64,
) -> Result<Fiber> {
    let params = config.params.with_total_momentum(vec![p])?;
    let spec = ConjugateOperatorSpec::build(&params, q_grid.clone())?;
    let window: Vec<usize> = (0..spec.omega.len()).filter(|&k| spec.intervals.i.contains(spec.omega[k])).collect();
    for (k, z) in chi.iter().enumerate() {
        if z.norm() > 0.0 && !spec.intervals.i.contains(spec.omega[k]) {
            return Err(Error::InvalidParameter(format!(
                "χ̂ at q = {} has ω_p = {} outside I_p,ε at P = {p}",
                q_grid.coordinate(0, k),
                spec.omega[k]
            )));
        }
    }
    let sa = spec.a.eigen()?;
    let nu = config.nu;
    let w2_full = sa.function(|x| (1.0 + x * x).powf(-nu));
    let w2 = DMatrix::from_fn(window.len(), window.len(), |r, c| w2_full[(window[r], window[c])]);
    let chi_v = DVector::from_column_slice(chi);
    let a_nu = sa.function(|x| (1.0 + x * x).powf(0.5 * nu));
    let a_nu_sq = (&a_nu * &chi_v).norm_squared() * dq;
    let u_nu_sq = conjugate::position_weighted_norm(u2, &chi_v, nu, dq).powi(2);
    let c = conjugate::bracket_chain(&spec.a, u2, nu)?.c;
    Ok(Fiber { index, p, omega: spec.omega, window, w2, a_nu_sq, u_nu_sq, c })
}

/// Composite Simpson weights for `n` (even) intervals of width `h`.
fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    (0..=n)
        .map(|k| {
            let c = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    (0..=n).map(|k| if k == 0 || k == n { 0.5 * h } else { h }).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelArray {
    pub tau: f64,
    pub u: Vec<f64>,
    /// Ascending.
    pub v: Vec<f64>,
    /// `[u][v]`, row-major.
    #[serde(skip)]
    pub values: Vec<C64>,
    pub cell: f64,
}

impl KernelArray {
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.cell
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FiberFactor {
    pub p: f64,
    pub lhs: f64,
    /// `sup_f ∫‖⟨A_p⟩^{−ν} e^{iτω_p} E_p(I) f‖² dτ` over the window.
    pub local_decay: f64,
    /// `∫‖⟨A_p⟩^ν ĝ_τ‖² dτ`.
    pub weighted: f64,
    /// `C_p^{2ν} ∫‖⟨u⟩^ν ĝ_τ‖² dτ`.
    pub weighted_bound: f64,
    pub c: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainRecord {
    pub t1: f64,
    pub t2: f64,
    pub lhs: f64,
    pub lhs_error: f64,
    pub rhs: f64,
    pub rhs_error: f64,
    /// `rhs` with the second factor bounded through `C^ν`.
    pub rhs_bound: f64,
    pub samples: usize,
    pub factors: Vec<FiberFactor>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Convergence {
    pub windows: Vec<ChainRecord>,
    pub decreasing_tail: bool,
    /// Log-log slope of `lhs([t, 2t])` over the last three windows.
    pub decay_exponent: f64,
}

impl Convergence {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "t1,t2,lhs,rhs")?;
        for r in &self.windows {
            writeln!(w, "{:e},{:e},{:e},{:e}", r.t1, r.t2, r.lhs, r.rhs)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Microcausality {
    pub nu: f64,
    pub lhs: f64,
    pub truncated: f64,
    pub tail: f64,
    pub tail_exponent: f64,
    pub tail_flagged: bool,
    pub rhs: f64,
    pub ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TauberianReport {
    pub delta: f64,
    pub horizon: f64,
    pub lipschitz: f64,
    pub b_convergent: bool,
    pub slowly_oscillating: bool,
    pub l2_limit_zero: bool,
    pub consistent: bool,
    pub flagged: bool,
    pub b_max: f64,
    pub b_tail_max: f64,
    pub max_lipschitz_ratio: f64,
    pub final_ratio: f64,
}

impl Channel {
    /// `G_P(τ) = Σ_E ΔE conj ψ Φ ρ e^{iτE}` for fiber row `j`.
    fn energy_transform(&self, j: usize, tau: f64) -> C64 {
        let de = self.energies[1] - self.energies[0];
        self.amplitude[j]
            .iter()
            .zip(&self.energies)
            .map(|(a, &e)| a * C64::from_polar(1.0, tau * e))
            .sum::<C64>()
            * de
    }

    fn dp(&self) -> f64 {
        self.momenta[1] - self.momenta[0]
    }

    fn dq(&self) -> f64 {
        self.q_grid.spacing(0)
    }

    fn time_step(&self) -> f64 {
        let p0 = self.energy_bound();
        let wmax = self
            .fibers
            .iter()
            .flat_map(|f| f.window.iter().map(|&k| f.omega[k]))
            .fold(0.0f64, f64::max);
        PI / (4.0 * p0.max(wmax))
    }

    /// `p₀ = max E + ΔE/2`, cell-centered.
    pub fn energy_bound(&self) -> f64 {
        let de = self.energies[1] - self.energies[0];
        self.energies.iter().fold(0.0f64, |m, e| m.max(e.abs())) + 0.5 * de
    }

    /// `⟨ψ, e^{iτH} e^{−ivP} φ(u)⟩` on the `(u, v)` grid, the `v`-dependence
    /// by a discrete Fourier transform over the `P` axis.
    pub fn cook_kernel(&self, tau: f64) -> KernelArray {
        let n = self.momenta.len();
        let dp = self.dp();
        let p0 = self.momenta[0];
        let dv = 2.0 * PI / (n as f64 * dp);
        let g: Vec<C64> = (0..n).map(|j| self.energy_transform(j, tau)).collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let order: Vec<usize> = (0..n).map(|k| (k + n - n / 2) % n).collect();
        let v: Vec<f64> = order
            .iter()
            .map(|&m| if m < n - n / 2 { m as f64 * dv } else { (m as f64 - n as f64) * dv })
            .collect();
        let u = &self.profile.u;
        let mut values = Vec::with_capacity(u.len() * n);
        let mut line = vec![C64::new(0.0, 0.0); n];
        for iu in 0..u.len() {
            for j in 0..n {
                line[j] = self.profile.chi_u[j][iu] * g[j];
            }
            fft.process(&mut line);
            for (&m, &vm) in order.iter().zip(&v) {
                values.push(line[m] * C64::from_polar(dp, -vm * p0));
            }
        }
        let du = u[1] - u[0];
        KernelArray { tau, u: u.clone(), v, values, cell: du * dv }
    }

    /// Relative gap between `∫∫|kernel|² du dv` and
    /// `2π ∫du ∫dP |∫dE conj ψ e^{iτE} φ(u) ρ|²`.
    pub fn plancherel_residual(&self, tau: f64) -> (f64, f64) {
        let k = self.cook_kernel(tau);
        let du = k.u[1] - k.u[0];
        let g: Vec<f64> = (0..self.momenta.len()).map(|j| self.energy_transform(j, tau).norm_sqr()).collect();
        let rhs = 2.0
            * PI
            * du
            * self.dp()
            * self
                .profile
                .chi_u
                .iter()
                .zip(&g)
                .map(|(c, gj)| c.iter().map(|z| z.norm_sqr()).sum::<f64>() * gj)
                .sum::<f64>();
        let lhs = k.norm_sq();
        let scale = lhs.abs().max(rhs.abs());
        (lhs, if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 })
    }

    /// Cook's integral over `[t1, t2]` and its Cauchy–Schwarz majorant,
    /// fiber by fiber. All three time integrals share one Simpson rule.
    pub fn cs_chain(&self, t1: f64, t2: f64) -> Result<ChainRecord> {
        if !(t2 >= t1) || !t1.is_finite() || !t2.is_finite() {
            return Err(Error::InvalidParameter(format!("window [{t1}, {t2}]")));
        }
        let h0 = self.time_step();
        let n = if t2 == t1 { 0 } else { 2 * ((t2 - t1) / (2.0 * h0)).ceil().max(1.0) as usize };
        let h = if n == 0 { 0.0 } else { (t2 - t1) / n as f64 };
        let (ws, wt) = if n == 0 { (vec![0.0], vec![0.0]) } else { (simpson_weights(n, h), trapezoid_weights(n, h)) };
        let times: Vec<f64> = (0..=n).map(|k| t1 + k as f64 * h).collect();
        let dq = self.dq();
        let nu = self.config.nu;
        let factors: Vec<(FiberFactor, f64, f64)> = self
            .fibers
            .par_iter()
            .map(|fib| {
                let chi = &self.profile.chi_q[fib.index];
                let g: Vec<C64> = times.iter().map(|&t| self.energy_transform(fib.index, t)).collect();
                let mut lhs = [0.0, 0.0];
                for (k, &z) in chi.iter().enumerate() {
                    if z.norm() == 0.0 {
                        continue;
                    }
                    let w = fib.omega[k];
                    for (slot, weights) in [&ws, &wt].iter().enumerate() {
                        let s: C64 = times
                            .iter()
                            .zip(&g)
                            .zip(weights.iter())
                            .map(|((&t, gk), &wk)| gk * C64::from_polar(wk, -t * w))
                            .sum();
                        lhs[slot] += (s * z).norm_sqr() * dq;
                    }
                }
                let g2s: f64 = g.iter().zip(&ws).map(|(z, w)| z.norm_sqr() * w).sum();
                let g2t: f64 = g.iter().zip(&wt).map(|(z, w)| z.norm_sqr() * w).sum();
                // Q_jl = W²_jl Σ_k w_k e^{iτ_k(ω_l − ω_j)}
                let m = fib.window.len();
                let phases = DMatrix::from_fn(times.len(), m, |k, c| {
                    C64::from_polar(ws[k].sqrt(), times[k] * fib.omega[fib.window[c]])
                });
                let gram = phases.adjoint() * &phases;
                let q = fib.w2.component_mul(&gram);
                let local_decay = linalg::hermitian_eigenvalues(&q)?.iter().fold(0.0f64, |a, &b| a.max(b));
                let weighted = fib.a_nu_sq * g2s;
                let weighted_bound = fib.c.powf(2.0 * nu) * fib.u_nu_sq * g2s;
                let rel_err = if g2s > 0.0 { (g2s - g2t).abs() / g2s } else { 0.0 };
                if lhs[0] > local_decay * weighted * (1.0 + 1e-9) + 1e-300 {
                    return Err(Error::Consistency(format!(
                        "Cauchy–Schwarz majorant violated at P = {}: {} > {}",
                        fib.p,
                        lhs[0],
                        local_decay * weighted
                    )));
                }
                Ok((
                    FiberFactor { p: fib.p, lhs: lhs[0], local_decay, weighted, weighted_bound, c: fib.c },
                    (lhs[0] - lhs[1]).abs(),
                    rel_err,
                ))
            })
            .collect::<Result<_>>()?;
        let scale = 2.0 * PI * self.dp();
        let lhs = scale * factors.iter().map(|f| f.0.lhs).sum::<f64>();
        let lhs_error = scale * factors.iter().map(|f| f.1).sum::<f64>();
        let rhs = scale * factors.iter().map(|f| f.0.local_decay * f.0.weighted).sum::<f64>();
        let rhs_error = scale * factors.iter().map(|f| f.0.local_decay * f.0.weighted * f.2).sum::<f64>();
        let rhs_bound = scale * factors.iter().map(|f| f.0.local_decay * f.0.weighted_bound).sum::<f64>();
        if !(lhs.is_finite() && rhs.is_finite()) {
            return Err(Error::NonFinite("Cook integral"));
        }
        Ok(ChainRecord {
            t1,
            t2,
            lhs,
            lhs_error,
            rhs,
            rhs_error,
            rhs_bound,
            samples: times.len(),
            factors: factors.into_iter().map(|f| f.0).collect(),
        })
    }

    /// Windows `[t, 2t]` from the first window while `2t` stays within the horizon.
    pub fn windows(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut t = self.config.first_window;
        while 2.0 * t <= self.config.horizon * (1.0 + 1e-12) {
            out.push((t, 2.0 * t));
            t *= 2.0;
        }
        out
    }

    pub fn convergence(&self) -> Result<Convergence> {
        let windows: Vec<ChainRecord> =
            self.windows().into_iter().map(|(a, b)| self.cs_chain(a, b)).collect::<Result<_>>()?;
        let k = windows.len();
        let tail = &windows[k.saturating_sub(3)..];
        let decreasing_tail = tail.len() == 3 && tail.windows(2).all(|w| w[1].lhs < w[0].lhs);
        let pts: Vec<(f64, f64)> =
            tail.iter().filter(|r| r.lhs > 0.0).map(|r| (r.t1.ln(), r.lhs.ln())).collect();
        let decay_exponent = if pts.len() >= 2 {
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            -sxy / sxx
        } else {
            f64::NAN
        };
        Ok(Convergence { windows, decreasing_tail, decay_exponent })
    }

    /// `∫∫∫|⟨u⟩^ν kernel(τ)(u, v)|² du dv dτ` against
    /// `(2π)^{1+s} |||ψ|||² ∫‖⟨u⟩^ν φ(u)‖² du`.
    pub fn microcausality_integral(&self, nu: f64, tol: f64) -> Result<Microcausality> {
        if !(nu >= 0.0) {
            return Err(Error::InvalidParameter(format!("ν = {nu}")));
        }
        let u = &self.profile.u;
        let du = u[1] - u[0];
        let dp = self.dp();
        let de = self.energies[1] - self.energies[0];
        let weight = |x: f64| (1.0 + x * x).powf(nu);
        // ∫ ⟨u⟩^{2ν} |χ_P(u)|² du per fiber row
        let chi_w: Vec<f64> = self
            .profile
            .chi_u
            .iter()
            .map(|c| c.iter().zip(u).map(|(z, &x)| z.norm_sqr() * weight(x)).sum::<f64>() * du)
            .collect();
        let t_max = self.config.horizon;
        let half = (t_max / self.time_step()).ceil() as usize;
        let h = t_max / half as f64;
        let times: Vec<f64> = (0..=2 * half).map(|k| -t_max + k as f64 * h).collect();
        let values: Vec<f64> = times
            .par_iter()
            .map(|&t| {
                2.0 * PI
                    * dp
                    * chi_w
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| **w > 0.0)
                        .map(|(j, w)| w * self.energy_transform(j, t).norm_sqr())
                        .sum::<f64>()
            })
            .collect();
        let truncated = quadrature::simpson(&values, h);
        let n = times.len();
        let fold: Vec<(f64, f64)> = (0..n / 2)
            .filter(|&k| -times[k] >= 0.1 * t_max)
            .map(|k| (-times[k], 0.5 * (values[k] + values[n - 1 - k])))
            .filter(|&(_, v)| v > 0.0)
            .collect();
        let (tail, tail_exponent, tail_flagged) = if fold.is_empty() {
            (0.0, f64::NAN, false)
        } else {
            let xs: Vec<f64> = fold.iter().map(|p| p.0.ln()).collect();
            let ys: Vec<f64> = fold.iter().map(|p| p.1.ln()).collect();
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = ys.iter().sum::<f64>() / ys.len() as f64;
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let p = -sxy / sxx;
            if p > 1.0 {
                let c = (my + p * mx).exp();
                let tail = 2.0 * c * t_max.powf(1.0 - p) / (p - 1.0);
                (tail, p, tail > 0.05 * truncated)
            } else {
                (0.0, p, true)
            }
        };
        let lhs = truncated + tail;
        let mass: f64 = self
            .profile
            .profile
            .iter()
            .zip(&self.rho)
            .zip(&chi_w)
            .map(|((f, r), w)| f.iter().zip(r).map(|(a, b)| a * a * b).sum::<f64>() * de * w)
            .sum::<f64>()
            * dp;
        let rhs = (2.0 * PI).powi(2) * self.triple_norm.powi(2) * mass;
        let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
        Ok(Microcausality {
            nu,
            lhs,
            truncated,
            tail,
            tail_exponent,
            tail_flagged,
            rhs,
            ratio,
            passed: lhs <= rhs * (1.0 + tol),
        })
    }

    /// `L = √((2π)^s 2p₀³ |||ψ|||² ∫‖φ(u)‖² du)`.
    pub fn lipschitz_constant(&self) -> f64 {
        let p0 = self.energy_bound();
        (2.0 * PI * 2.0 * p0.powi(3) * self.triple_norm.powi(2) * self.profile.norm_sq).sqrt()
    }

    /// Tauberian check on the kernel sampled over `[0, horizon]` with
    /// spacing `delta/per_delta`; samples are recomputed, not stored.
    pub fn tauberian(&self, delta: f64, per_delta: usize) -> Result<TauberianReport> {
        let h = delta / per_delta as f64;
        let n = (self.config.horizon / h).floor() as usize;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
        let cell = self.cook_kernel(0.0).cell;
        tauberian_check(&times, &|k| self.cook_kernel(times[k]).values, cell, self.lipschitz_constant(), delta)
    }
}

/// B-convergence, slow oscillation and L² decay of `g`, sampled as
/// `g(k)` at `times[k]`. `times` must be uniform with `delta` a multiple of
/// the spacing; `cell` is the quadrature weight of one array entry.
pub fn tauberian_check(
    times: &[f64],
    g: &(impl Fn(usize) -> Vec<C64> + Sync),
    cell: f64,
    lipschitz: f64,
    delta: f64,
) -> Result<TauberianReport> {
    if times.len() < 4 {
        return Err(Error::InvalidParameter("need at least four samples".into()));
    }
    let h = times[1] - times[0];
    let per = (delta / h).round() as usize;
    if per == 0 || ((per as f64) * h - delta).abs() > 1e-9 * delta {
        return Err(Error::InvalidParameter(format!("δ = {delta} is not a multiple of the spacing {h}")));
    }
    let n = times.len();
    // (‖g_k‖², ‖g_{k+1} − g_k‖²)
    let pairs: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let a = g(k);
            let norm = a.iter().map(|z| z.norm_sqr()).sum::<f64>() * cell;
            if k + 1 == n {
                return Ok((norm, 0.0));
            }
            let b = g(k + 1);
            if a.len() != b.len() {
                return Err(Error::GridMismatch("arrays of different lengths".into()));
            }
            Ok((norm, a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() * cell))
        })
        .collect::<Result<_>>()?;
    let norms_sq: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    if pairs.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::NonFinite("sampled g"));
    }
    let trap = |a: usize, b: usize| -> f64 {
        (a..b).map(|k| 0.5 * h * (norms_sq[k] + norms_sq[k + 1])).sum()
    };
    let starts = n - per;
    let b: Vec<f64> = (0..starts).map(|i| (trap(i, i + per) / delta).sqrt()).collect();
    let b_max = b.iter().cloned().fold(0.0f64, f64::max);
    let b_tail_max = b[3 * starts / 4..].iter().cloned().fold(0.0f64, f64::max);
    let b_convergent = b_tail_max <= 0.1 * b_max;

    let mut max_lipschitz_ratio = 0.0f64;
    for &(_, d) in &pairs[..n - 1] {
        let bound = lipschitz * h;
        let r = if bound > 0.0 {
            d.sqrt() / bound
        } else if d > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        max_lipschitz_ratio = max_lipschitz_ratio.max(r);
    }
    let slowly_oscillating = max_lipschitz_ratio <= 1.0 + 1e-9;

    let max_norm = norms_sq.iter().cloned().fold(0.0f64, f64::max).sqrt();
    let final_norm = norms_sq[n - 1].sqrt();
    let final_ratio = if max_norm > 0.0 { final_norm / max_norm } else { 0.0 };
    let l2_limit_zero = final_ratio <= 0.1;
    let total = trap(0, n - 1);
    let flagged = total > 0.0 && trap(3 * (n - 1) / 4, n - 1) > 0.05 * total;
    Ok(TauberianReport {
        delta,
        horizon: times[n - 1],
        lipschitz,
        b_convergent,
        slowly_oscillating,
        l2_limit_zero,
        consistent: !(b_convergent && slowly_oscillating) || l2_limit_zero,
        flagged,
        b_max,
        b_tail_max,
        max_lipschitz_ratio,
        final_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::MomentumBox;

    fn params() -> DispersionParams {
        let k1 = MomentumBox::new(vec![0.8], vec![1.4]).unwrap();
        let k2 = MomentumBox::new(vec![-0.8], vec![-0.2]).unwrap();
        DispersionParams::new(1.0, vec![0.6], k1, k2, None).unwrap()
    }

    fn small() -> ChannelConfig {
        let mut c = ChannelConfig::default_for(params());
        c.n_momentum = 13;
        c.n_u = 81;
        c.u_extent = 20.0;
        c.horizon = 40.0;
        c
    }

    #[test]
    fn zero_function_passes_tauberian() {
        let times: Vec<f64> = (0..41).map(|k| k as f64 * 0.25).collect();
        let g = vec![vec![C64::new(0.0, 0.0); 5]; 41];
        let r = tauberian_check(&times, &|k| g[k].clone(), 1.0, 0.0, 1.0).unwrap();
        assert!(r.b_convergent && r.slowly_oscillating && r.l2_limit_zero && r.consistent);
    }

    #[test]
    fn oscillating_function_is_not_b_convergent() {
        let times: Vec<f64> = (0..201).map(|k| k as f64 * 0.25).collect();
        let g: Vec<Vec<C64>> = times.iter().map(|&t| vec![C64::from_polar(1.0, t); 3]).collect();
        let r = tauberian_check(&times, &|k| g[k].clone(), 1.0, 2.0, 1.0).unwrap();
        assert!(!r.b_convergent);
        assert!(r.slowly_oscillating);
        assert!(r.consistent);
    }

    #[test]
    fn empty_window_is_zero() {
        let ch = build_channel(&small()).unwrap();
        let r = ch.cs_chain(15.0, 15.0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.rhs >= 0.0);
    }

    #[test]
    fn zero_state_gives_zero() {
        let mut c = small();
        c.psi_scale = 0.0;
        let ch = build_channel(&c).unwrap();
        assert_eq!(ch.triple_norm, 0.0);
        assert_eq!(ch.cs_chain(10.0, 20.0).unwrap().lhs, 0.0);
        let m = ch.microcausality_integral(0.75, 1e-6).unwrap();
        assert_eq!(m.lhs, 0.0);
        assert!(m.passed);
    }

    #[test]
    fn s2_is_rejected() {
        let k1 = MomentumBox::new(vec![0.8, 0.0], vec![1.4, 0.2]).unwrap();
        let k2 = MomentumBox::new(vec![-0.8, 0.0], vec![-0.2, 0.2]).unwrap();
        let p = DispersionParams::new(1.0, vec![0.6, 0.0], k1, k2, None).unwrap();
        assert!(build_channel(&ChannelConfig::default_for(p)).is_err());
    }
}
