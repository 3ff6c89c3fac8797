//! Runs the selected modules of a scenario and collects typed reports,
//! named checks and exported curves.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conjugate::{self, ConjugateOperatorSpec, DivFDiscrepancy};
use crate::dispersion::{self, DispersionParams, IntervalPair};
use crate::error::{Error, Result};
use crate::grid::{Interval, MomentumGrid, MultiplierOperator, WaveFunction};
use crate::kato::{self, CpBound, FamilySpec, OptimalConstant, SmoothnessReport, TimeMesh};
use crate::lap::{self, ExplicitChain, ResolventSweep, ResolventWeights, SweepConfig, SweepPoint};
use crate::mourre::{self, Mesh, MourreOptions, MourreReport};
use crate::scenario::{Module, Scenario};
use crate::twoparticle::{self, ChannelConfig, CommutatorProfile, Convergence, Microcausality, TauberianReport};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Hard checks decide the exit status; soft ones are reported only.
    pub hard: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct Curve {
    pub file: String,
    pub contents: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: Scenario,
    pub mourre: Option<MourreSuite>,
    pub lap: Option<LapSuite>,
    pub kato: Option<KatoSuite>,
    pub twoparticle: Option<TwoParticleSuite>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl Report {
    pub fn failed_hard(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.hard && !c.passed).collect()
    }
}

/// Report plus side products that are kept out of `report.json`.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub curves: Vec<Curve>,
    /// Wall-clock seconds per section; not deterministic, so never serialized.
    pub timings: Vec<(String, f64)>,
}

#[derive(Default)]
struct Collector {
    checks: Vec<Check>,
    curves: Vec<Curve>,
    timings: Vec<(String, f64)>,
}

impl Collector {
    fn check(&mut self, name: &str, hard: bool, passed: bool, value: f64, tolerance: f64, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, hard, value, tolerance, detail: detail.into() });
    }

    fn curve(&mut self, file: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        let contents = String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))?;
        self.curves.push(Curve { file: file.into(), contents });
        Ok(())
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self);
        self.timings.push((label.into(), start.elapsed().as_secs_f64()));
        out
    }
}

pub fn run(scenario: &Scenario) -> Result<Outcome> {
    let params = scenario.params()?;
    let mut col = Collector::default();
    let mut report = Report {
        scenario: scenario.clone(),
        mourre: None,
        lap: None,
        kato: None,
        twoparticle: None,
        checks: Vec::new(),
        passed: false,
    };
    for module in &scenario.modules {
        match module {
            Module::Mourre => report.mourre = Some(col.timed("mourre", |c| run_mourre(scenario, &params, c))?),
            Module::Lap => report.lap = Some(col.timed("lap", |c| run_lap(scenario, &params, c))?),
            Module::Kato => report.kato = Some(col.timed("kato", |c| run_kato(scenario, &params, c))?),
            Module::Twoparticle => {
                report.twoparticle = Some(col.timed("twoparticle", |c| run_twoparticle(scenario, &params, c))?)
            }
        }
    }
    report.checks = col.checks;
    report.passed = report.checks.iter().all(|c| !c.hard || c.passed);
    Ok(Outcome { report, curves: col.curves, timings: col.timings })
}

fn build_spec(params: &DispersionParams, sc: &Scenario, n: usize) -> Result<ConjugateOperatorSpec> {
    let grid = Arc::new(MomentumGrid::symmetric(params.dim(), sc.grid.extent, n, sc.grid.budget)?);
    ConjugateOperatorSpec::build(params, grid)
}

// ---------------------------------------------------------------- mourre

#[derive(Clone, Debug, Serialize)]
pub struct ResidualAt {
    pub mesh: Mesh,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MourreSuite {
    pub params: DispersionParams,
    pub beta: f64,
    pub intervals: IntervalPair,
    pub gradient_floor: f64,
    pub commutator: Vec<ResidualAt>,
    /// Residual ratio under grid doubling.
    pub refinement_ratio: f64,
    pub refinement_tolerance: (f64, f64),
    pub commutator_tolerance: f64,
    pub ad1_residual: f64,
    pub ad2_residual: f64,
    /// `[R(z), A]` against `−R(z)[H, A]R(z)` at the centre of `I`, `Im z = 0.1`.
    pub resolvent_identity_residual: f64,
    pub div_f: DivFDiscrepancy,
    pub margin_tolerance: f64,
    pub direct: MourreReport,
    pub inverse: MourreReport,
}

fn run_mourre(sc: &Scenario, params: &DispersionParams, col: &mut Collector) -> Result<MourreSuite> {
    let tol = &sc.tolerance;
    let (spec, fine, r, r_fine) = col.timed("mourre.commutator", |_| {
        let spec = build_spec(params, sc, sc.grid.n)?;
        let fine = build_spec(params, sc, sc.grid.refine)?;
        let r = conjugate::commutator_residual(&spec)?;
        let r_fine = conjugate::commutator_residual(&fine)?;
        Ok((spec, fine, r, r_fine))
    })?;
    let ratio = r / r_fine;
    let doubled = sc.grid.refine == 2 * sc.grid.n;
    col.check(
        "mourre.commutator_refinement",
        false,
        doubled && ratio >= tol.refinement_lo && ratio <= tol.refinement_hi,
        ratio,
        tol.refinement_hi,
        format!("residual ratio N={} → N={}, accepted range [{}, {}]", sc.grid.n, sc.grid.refine, tol.refinement_lo, tol.refinement_hi),
    );
    col.check(
        "mourre.commutator_absolute",
        false,
        r_fine <= tol.commutator,
        r_fine,
        tol.commutator,
        format!("commutator residual at N={}", sc.grid.refine),
    );

    let h = spec.hamiltonian();
    let margin_tol = sc.mourre.margin_factor * r;
    let opts = MourreOptions { u_max: sc.mourre.u_max, tol: Some(margin_tol) };
    let (direct, inverse) = col.timed("mourre.checks", |_| {
        let direct = mourre::mourre_check(&h, &spec.a, spec.intervals.j, 1.0, opts)?;
        let inverse =
            mourre::inverse_mourre_check(&h, &spec.a, mourre::inverse_window(spec.intervals.j)?, params.beta(), opts)?;
        Ok((direct, inverse))
    })?;
    col.check(
        "mourre.direct",
        true,
        direct.passed && direct.margin.abs() <= margin_tol,
        direct.margin,
        margin_tol,
        "E(J) i[H,A] E(J) ≥ E(J) on the resolved subspace, |margin| within the commutator tolerance",
    );
    col.check(
        "mourre.inverse",
        true,
        inverse.passed,
        inverse.margin,
        margin_tol,
        "−E(J̃)[H⁻¹, iA]E(J̃) ≥ (1+β)⁻² E(J̃)",
    );

    let probe = spec.plateau_gaussian()?;
    let ad1 = mourre::adk_check(&spec, 1, &probe)?;
    let ad2 = mourre::adk_check(&spec, 2, &probe)?;
    let i = spec.intervals.i;
    let z = C64::new(0.5 * (i.lo + i.hi), 0.1);
    let resolvent_identity_residual = lap::resolvent_commutator_residual(&h, &spec.a, z)?;
    col.check(
        "mourre.resolvent_identity",
        true,
        resolvent_identity_residual <= 1e-8,
        resolvent_identity_residual,
        1e-8,
        "commutator via the resolvent",
    );

    Ok(MourreSuite {
        params: params.clone(),
        beta: params.beta(),
        intervals: spec.intervals.clone(),
        gradient_floor: spec.gradient_floor,
        commutator: vec![
            ResidualAt { mesh: Mesh::of(&spec.grid), residual: r },
            ResidualAt { mesh: Mesh::of(&fine.grid), residual: r_fine },
        ],
        refinement_ratio: ratio,
        refinement_tolerance: (tol.refinement_lo, tol.refinement_hi),
        commutator_tolerance: tol.commutator,
        ad1_residual: ad1,
        ad2_residual: ad2,
        resolvent_identity_residual,
        div_f: spec.div_f_discrepancy(),
        margin_tolerance: margin_tol,
        direct,
        inverse,
    })
}

// ---------------------------------------------------------------- lap

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub interval: Interval,
    pub lambda_points: usize,
    pub mus: Vec<f64>,
    pub supremum: f64,
    pub argmax: SweepPoint,
    pub saturation_change: f64,
    pub saturated: bool,
}

impl From<&ResolventSweep> for SweepSummary {
    fn from(s: &ResolventSweep) -> Self {
        Self {
            interval: s.interval,
            lambda_points: s.lambdas.len(),
            mus: s.mus.clone(),
            supremum: s.supremum,
            argmax: s.argmax,
            saturation_change: s.saturation_change,
            saturated: s.saturated,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LapScenario {
    pub label: String,
    pub params: DispersionParams,
    pub mesh: Mesh,
    pub nu: f64,
    pub sweep: SweepConfig,
    pub direct: SweepSummary,
    pub transfer_bound: f64,
    pub transfer_weights: ResolventWeights,
    pub reciprocal_sweep: SweepSummary,
    pub pointwise_violations: usize,
    pub explicit: ExplicitChain,
    pub dominated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub failures: usize,
    /// Largest `lhs/rhs` over the trials.
    pub max_ratio: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiffineqSummary {
    pub trials: TrialSummary,
    /// `diffineq_bound` on the two closed-form examples (exact values 0 and 2).
    pub closed_forms: [f64; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct LapSuite {
    pub scenarios: Vec<LapScenario>,
    pub interpolation: TrialSummary,
    pub interpolation_dim: usize,
    pub diffineq: DiffineqSummary,
}

fn lap_scenario(
    label: &str,
    params: &DispersionParams,
    spec: &ConjugateOperatorSpec,
    nu: f64,
    cfg: &SweepConfig,
) -> Result<(LapScenario, ResolventSweep)> {
    let h = spec.hamiltonian();
    let direct = lap::lap_supremum(&h, &spec.a, spec.intervals.i, nu, cfg)?;
    let transfer = lap::gap_transfer(&h, &spec.a, spec.intervals.i, nu, 0.0, cfg)?;
    let explicit = lap::explicit_chain(&h, &spec.a, &spec.intervals, params.beta(), nu)?;
    let violations = transfer.violations(&direct)?;
    let dominated = violations == 0 && direct.supremum <= transfer.bound && transfer.bound <= explicit.bound;
    let rec = LapScenario {
        label: label.into(),
        params: params.clone(),
        mesh: Mesh::of(&spec.grid),
        nu,
        sweep: *cfg,
        direct: (&direct).into(),
        transfer_bound: transfer.bound,
        transfer_weights: transfer.weights,
        reciprocal_sweep: (&transfer.r_sweep).into(),
        pointwise_violations: violations,
        explicit,
        dominated,
    };
    Ok((rec, direct))
}

/// Randomized `(p, m, ε)` with `p ∈ K_tot`, `m ∈ [0.8, 1.25]` and `ε` a
/// random fraction of the derived one; draws that fail to build are redrawn.
fn random_params(base: &DispersionParams, rng: &mut ChaCha8Rng) -> Result<DispersionParams> {
    let k_tot = base.k_tot();
    for _ in 0..50 {
        let p: Vec<f64> = k_tot.lower.iter().zip(&k_tot.upper).map(|(&l, &u)| rng.random_range(l..=u)).collect();
        let m = rng.random_range(0.8..1.25);
        let frac = rng.random_range(0.6..1.0);
        let Ok(eps) = dispersion::derive_epsilon(m, &base.k1, &base.k2) else { continue };
        if let Ok(params) = DispersionParams::new(m, p, base.k1.clone(), base.k2.clone(), Some(frac * eps)) {
            if params.intervals().is_ok() {
                return Ok(params);
            }
        }
    }
    Err(Error::InvalidParameter("no admissible randomized scenario in 50 draws".into()))
}

fn run_lap(sc: &Scenario, params: &DispersionParams, col: &mut Collector) -> Result<LapSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let nu = sc.physics.nu;
    let cfg = sc.lap.sweep;
    let mut scenarios = Vec::new();
    col.timed("lap.domination", |col| {
        let spec = build_spec(params, sc, sc.grid.n)?;
        let (rec, direct) = lap_scenario("default", params, &spec, nu, &cfg)?;
        col.curve("lap_sweep.csv", |w| direct.write_csv(w))?;
        scenarios.push(rec);
        for k in 0..sc.lap.random_scenarios {
            // redraw when the operator cannot be built on this grid
            let mut attempt = 0;
            let (p, spec) = loop {
                let p = random_params(params, &mut rng)?;
                match build_spec(&p, sc, sc.grid.n) {
                    Ok(s) => break (p, s),
                    Err(e @ Error::BudgetExceeded { .. }) => return Err(e),
                    Err(e) if attempt >= 20 => return Err(e),
                    Err(_) => attempt += 1,
                }
            };
            scenarios.push(lap_scenario(&format!("random-{k}"), &p, &spec, nu, &cfg)?.0);
        }
        Ok(())
    })?;
    for s in &scenarios {
        col.check(
            &format!("lap.domination.{}", s.label),
            true,
            s.dominated,
            s.direct.supremum,
            s.transfer_bound,
            format!(
                "direct {:.6e} ≤ transfer {:.6e} ≤ explicit {:.6e}, {} pointwise violations",
                s.direct.supremum, s.transfer_bound, s.explicit.bound, s.pointwise_violations
            ),
        );
        col.check(
            &format!("lap.saturation.{}", s.label),
            false,
            s.direct.saturated,
            s.direct.saturation_change,
            0.01,
            "relative change of the λ-maximum over the last decade of μ",
        );
    }

    let interpolation = col.timed("lap.interpolation", |_| {
        interpolation_trials(&mut rng, sc.lap.interpolation_trials, sc.lap.interpolation_dim, sc.tolerance.interpolation)
    })?;
    col.check(
        "lap.interpolation",
        true,
        interpolation.failures == 0,
        interpolation.max_ratio,
        1.0 + sc.tolerance.interpolation,
        format!("{} randomized triples", interpolation.trials),
    );

    let diffineq = col.timed("lap.diffineq", |_| diffineq_trials(&mut rng, sc.lap.diffineq_trials))?;
    col.check(
        "lap.diffineq",
        true,
        diffineq.trials.failures == 0 && diffineq.closed_forms[0] == 0.0 && (diffineq.closed_forms[1] - 2.0).abs() <= 1e-12,
        diffineq.trials.max_ratio,
        1.0,
        format!("{} randomized power-law trials; closed forms {:?}", diffineq.trials.trials, diffineq.closed_forms),
    );

    Ok(LapSuite { scenarios, interpolation, interpolation_dim: sc.lap.interpolation_dim, diffineq })
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_positive(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    let b = random_matrix(rng, d);
    let shift = rng.random_range(0.05..1.0);
    &b * b.adjoint() + DMatrix::identity(d, d) * C64::new(shift, 0.0)
}

fn interpolation_trials(rng: &mut ChaCha8Rng, trials: usize, dim: usize, tol: f64) -> Result<TrialSummary> {
    let mut failures = 0;
    let mut max_ratio = 0.0f64;
    for _ in 0..trials {
        let d = rng.random_range(2..=dim.max(2));
        let x = random_matrix(rng, d);
        let s1 = random_positive(rng, d);
        let s2 = random_positive(rng, d);
        let nu = rng.random_range(0.0..=1.0);
        let r = lap::interpolation_check(&x, &s1, &s2, nu)?;
        max_ratio = max_ratio.max(r.ratio);
        if r.lhs > r.rhs * (1.0 + tol) {
            failures += 1;
        }
    }
    Ok(TrialSummary { trials, failures, max_ratio, tolerance: tol })
}

fn diffineq_trials(rng: &mut ChaCha8Rng, trials: usize) -> Result<DiffineqSummary> {
    let mut failures = 0;
    let mut max_ratio = 0.0f64;
    for _ in 0..trials {
        let (a1, e1) = (rng.random_range(0.0..2.0), rng.random_range(-0.9..1.0));
        let (a2, e2) = (rng.random_range(0.0..2.0), rng.random_range(-0.9..1.0));
        let gamma = rng.random_range(0.0..2.0);
        let eps0 = rng.random_range(0.05..1.0);
        let phi_end = rng.random_range(0.0..3.0);
        let t1 = move |x: f64| a1 * x.powf(e1);
        let t2 = move |x: f64| a2 * x.powf(e2);
        let bound = lap::diffineq_bound(phi_end, t1, t2, gamma, eps0)?;
        let worst = lap::diffineq_comparison(phi_end, t1, t2, gamma, eps0)?;
        let ratio = if bound > 0.0 { worst / bound } else if worst == 0.0 { 0.0 } else { f64::INFINITY };
        max_ratio = max_ratio.max(ratio);
        if worst > bound * (1.0 + 1e-9) {
            failures += 1;
        }
    }
    let closed_forms = [
        lap::diffineq_bound(0.0, |_| 0.0, |_| 0.0, 0.0, 1.0)?,
        lap::diffineq_bound(1.0, |_| 1.0, |_| 0.0, 0.0, 1.0)?,
    ];
    Ok(DiffineqSummary { trials: TrialSummary { trials, failures, max_ratio, tolerance: 1e-9 }, closed_forms })
}

// ---------------------------------------------------------------- kato

#[derive(Clone, Debug, Serialize)]
pub struct StateRecord {
    pub norm_sq: f64,
    pub undamped: f64,
    pub undamped_tail: Option<f64>,
    pub tail_flagged: bool,
    pub damped: f64,
    pub frequency: f64,
    /// `|damped − frequency| / frequency`.
    pub two_path_gap: f64,
    pub dominated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CpSummary {
    pub value: f64,
    pub mu_min: f64,
    pub sweep: SweepSummary,
}

impl From<&CpBound> for CpSummary {
    fn from(c: &CpBound) -> Self {
        Self { value: c.value, mu_min: c.mu_min, sweep: (&c.sweep).into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityPoint {
    pub p: Vec<f64>,
    pub cp: f64,
    pub cp_resolved: f64,
    pub mu_min_resolved: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyRecord {
    pub mesh: Mesh,
    pub k: Vec<Interval>,
    pub subsets: Vec<(Vec<usize>, OptimalConstant)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SquareSummary {
    pub mesh: Mesh,
    pub trials: TrialSummary,
    pub bounded: TrialSummary,
    pub max_plancherel_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KatoSuite {
    pub params: DispersionParams,
    pub mesh: Mesh,
    pub interval: Interval,
    pub nu: f64,
    pub time_mesh: TimeMesh,
    pub damping: f64,
    pub sweep: SweepConfig,
    pub cp: CpSummary,
    pub cp_resolved: CpSummary,
    pub states: Vec<StateRecord>,
    pub two_path_tolerance: f64,
    /// Worst state by two-path gap.
    pub smoothness: SmoothnessReport,
    pub optimal: OptimalConstant,
    pub continuity: Vec<ContinuityPoint>,
    /// `max/min` of `c(p)` over the continuity sample, raw and resolved.
    pub continuity_spread: f64,
    pub continuity_spread_resolved: f64,
    pub family: FamilyRecord,
    pub square: SquareSummary,
}

/// Sum of three Gaussians with random centres in `±[0.3, 1.3]`, widths in
/// `[0.15, 0.4]` and phases; normalized.
fn random_state(grid: &Arc<MomentumGrid>, rng: &mut ChaCha8Rng) -> Result<WaveFunction> {
    let terms: Vec<(C64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let c = C64::from_polar(rng.random_range(0.2..1.0), rng.random_range(0.0..2.0 * PI));
            (c, sign * rng.random_range(0.3..1.3), rng.random_range(0.15..0.4), rng.random_range(-3.0..3.0))
        })
        .collect();
    WaveFunction::from_fn(grid.clone(), |q| {
        terms
            .iter()
            .map(|&(c, x0, s, k)| c * (-(q[0] - x0).powi(2) / (2.0 * s * s)).exp() * C64::from_polar(1.0, k * q[0]))
            .sum()
    })?
    .normalized()
}

fn run_kato(sc: &Scenario, params: &DispersionParams, col: &mut Collector) -> Result<KatoSuite> {
    // independent stream so that module selection does not shift the draws
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed.wrapping_add(1));
    let nu = sc.physics.nu;
    let cfg = sc.lap.sweep;
    let spec = build_spec(params, sc, sc.grid.n)?;
    let h = spec.hamiltonian();
    let i = spec.intervals.i;
    let w = kato::decay_weight(&spec.a, nu)?;
    let time_mesh = TimeMesh::for_window(i, params.beta())?;
    let damping = sc.kato.damping / time_mesh.t_max;

    let (cp, cp_resolved) = col.timed("kato.cp", |_| {
        Ok((kato::cp_bound(&h, &spec.a, i, nu, &cfg)?, kato::cp_bound_resolved(&h, &spec.a, i, nu, &cfg)?))
    })?;

    let mut worst: Option<(usize, f64)> = None;
    let states = col.timed("kato.two_path", |col| {
        let mut out = Vec::new();
        for s in 0..sc.kato.states {
            let f = random_state(&spec.grid, &mut rng)?;
            let norm_sq = f.norm().powi(2);
            let und = kato::local_decay_integral(&w, &h, i, &f, time_mesh, nu, 0.0)?;
            let damped = kato::local_decay_integral(&w, &h, i, &f, time_mesh, nu, damping)?;
            let freq = kato::frequency_integral(&w, &h, i, &f, damping)?;
            let gap = if freq > 0.0 { (damped.total - freq).abs() / freq } else { (damped.total - freq).abs() };
            if s == 0 {
                col.curve("kato_integrand.csv", |wr| und.write_csv(wr))?;
            }
            if worst.is_none_or(|(_, g)| gap > g) {
                worst = Some((s, gap));
            }
            out.push(StateRecord {
                norm_sq,
                undamped: und.total,
                undamped_tail: und.tail,
                tail_flagged: und.tail_flagged,
                damped: damped.total,
                frequency: freq,
                two_path_gap: gap,
                dominated: und.total <= cp.value * norm_sq,
            });
        }
        Ok(out)
    })?;
    let max_gap = states.iter().map(|s| s.two_path_gap).fold(0.0, f64::max);
    col.check(
        "kato.two_path",
        true,
        max_gap <= sc.tolerance.two_path,
        max_gap,
        sc.tolerance.two_path,
        format!("damped time integral against (2/π)∫‖T Im R T*‖ on {} random states, μ = {damping:.4e}", states.len()),
    );
    let worst_ratio = states.iter().map(|s| s.undamped / (cp.value * s.norm_sq)).fold(0.0, f64::max);
    col.check(
        "kato.local_decay",
        true,
        states.iter().all(|s| s.dominated),
        worst_ratio,
        1.0,
        "undamped local-decay integral over the time mesh against c(p)‖f‖²",
    );

    let optimal = col.timed("kato.optimal", |_| kato::optimal_constant(&w, &h, i, &cfg))?;
    col.check(
        "kato.optimal_constant",
        true,
        optimal.passed,
        optimal.c0,
        optimal.kato_bound,
        "C_K⁰ against 8 sup‖T Im R T*‖",
    );

    let smoothness = {
        let (s, _) = worst.unwrap_or((0, 0.0));
        let rec = states.get(s);
        SmoothnessReport {
            scenario: sc.name.clone(),
            nu,
            time_integral: rec.map_or(0.0, |r| r.undamped),
            time_tail: rec.and_then(|r| r.undamped_tail),
            tail_flagged: rec.is_some_and(|r| r.tail_flagged),
            damping,
            damped_time_integral: rec.map_or(0.0, |r| r.damped),
            frequency_integral: rec.map_or(0.0, |r| r.frequency),
            two_path_gap: rec.map_or(0.0, |r| r.two_path_gap),
            cp: cp.value,
            c0: optimal.c0,
            eight_sup: optimal.kato_bound,
            decay_dominated: states.iter().all(|s| s.dominated),
            optimal_dominated: optimal.passed,
        }
    };

    let continuity = col.timed("kato.continuity", |_| {
        let k_tot = params.k_tot();
        let n = sc.kato.continuity_points.max(1);
        let mut out = Vec::new();
        for j in 0..n {
            let t = if n == 1 { 0.5 } else { j as f64 / (n - 1) as f64 };
            let p: Vec<f64> = k_tot.lower.iter().zip(&k_tot.upper).map(|(l, u)| l + t * (u - l)).collect();
            let pp = params.with_total_momentum(p.clone())?;
            let sp = build_spec(&pp, sc, sc.grid.n)?;
            let hp = sp.hamiltonian();
            let raw = kato::cp_bound(&hp, &sp.a, sp.intervals.i, nu, &cfg)?;
            let res = kato::cp_bound_resolved(&hp, &sp.a, sp.intervals.i, nu, &cfg)?;
            out.push(ContinuityPoint { p, cp: raw.value, cp_resolved: res.value, mu_min_resolved: res.mu_min });
        }
        Ok(out)
    })?;
    let spread = |f: fn(&ContinuityPoint) -> f64| {
        let (lo, hi) = continuity.iter().map(f).fold((f64::INFINITY, 0.0f64), |(l, h), x| (l.min(x), h.max(x)));
        if lo > 0.0 { hi / lo } else { f64::INFINITY }
    };
    let continuity_spread = spread(|c| c.cp);
    let continuity_spread_resolved = spread(|c| c.cp_resolved);
    col.check(
        "kato.cp_continuity",
        false,
        continuity_spread <= sc.tolerance.continuity,
        continuity_spread,
        sc.tolerance.continuity,
        "max/min of c(p) across K_tot with the configured μ_min",
    );
    col.check(
        "kato.cp_continuity_resolved",
        false,
        continuity_spread_resolved <= sc.tolerance.continuity,
        continuity_spread_resolved,
        sc.tolerance.continuity,
        "max/min of c(p) across K_tot with μ_min raised to the level spacing",
    );

    let family = col.timed("kato.family", |_| family_record(sc, params))?;
    for (subset, oc) in &family.subsets {
        if subset.len() == family.k.len() {
            col.check(
                "kato.family",
                true,
                oc.passed,
                oc.c0,
                oc.kato_bound,
                format!("n = {} family constant against 8^n sup‖T Im R T*‖", subset.len()),
            );
        }
    }

    let square = col.timed("kato.square", |_| square_trials(sc, &mut rng))?;
    col.check(
        "kato.square_integrability",
        true,
        square.trials.failures == 0,
        square.trials.max_ratio,
        1.0 + sc.tolerance.fft,
        format!("{} randomized trials", square.trials.trials),
    );
    col.check(
        "kato.square_integrability_bounded",
        true,
        square.bounded.failures == 0,
        square.bounded.max_ratio,
        1.0 + sc.tolerance.fft,
        format!("bounded-energy form, {} trials", square.bounded.trials),
    );
    col.check(
        "kato.square_plancherel",
        true,
        square.max_plancherel_residual <= sc.tolerance.fft,
        square.max_plancherel_residual,
        sc.tolerance.fft,
        "DFT against direct Plancherel sum",
    );

    Ok(KatoSuite {
        params: params.clone(),
        mesh: Mesh::of(&spec.grid),
        interval: i,
        nu,
        time_mesh,
        damping,
        sweep: cfg,
        cp: (&cp).into(),
        cp_resolved: (&cp_resolved).into(),
        states,
        two_path_tolerance: sc.tolerance.two_path,
        smoothness,
        optimal,
        continuity,
        continuity_spread,
        continuity_spread_resolved,
        family,
        square,
    })
}

/// `H_j = ω(q_j)` on a 2-d grid over `|q_j| ≤ 2`, `K = ω([0.6, 1.0])²`, `T_f`
/// for a Gaussian `f`.
fn family_record(sc: &Scenario, params: &DispersionParams) -> Result<FamilyRecord> {
    let m = params.mass;
    let grid = Arc::new(MomentumGrid::symmetric(2, 2.0, sc.kato.family_n, sc.grid.budget)?);
    let ops = (0..2)
        .map(|j| MultiplierOperator::from_fn(grid.clone(), move |q| dispersion::omega(&[q[j]], m)))
        .collect::<Result<Vec<_>>>()?;
    let side = Interval::closed(dispersion::omega(&[0.6], m), dispersion::omega(&[1.0], m));
    let spec = FamilySpec::new(ops, vec![side, side])?;
    let f = WaveFunction::from_fn(grid.clone(), |q| {
        let r2 = (q[0] - 0.8).powi(2) + (q[1] - 0.7).powi(2);
        C64::from_polar((-r2).exp(), q[0] - q[1])
    })?
    .normalized()?;
    let cfg = SweepConfig { lambda_points: sc.kato.family_lambda_points, ..sc.lap.sweep };
    let mut subsets = Vec::new();
    for subset in [vec![0], vec![1], vec![0, 1]] {
        let oc = kato::family_constant(&spec, &f, &subset, &cfg)?;
        subsets.push((subset, oc));
    }
    Ok(FamilyRecord { mesh: Mesh::of(&grid), k: spec.k.clone(), subsets })
}

fn square_trials(sc: &Scenario, rng: &mut ChaCha8Rng) -> Result<SquareSummary> {
    let n = sc.kato.square_n;
    let grid = Arc::new(MomentumGrid::symmetric(2, 1.0, n, sc.grid.budget)?);
    let len = grid.len();
    let tol = sc.tolerance.fft;
    let draw = |rng: &mut ChaCha8Rng| -> (Vec<C64>, Vec<C64>, Vec<f64>) {
        let c = |rng: &mut ChaCha8Rng| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let f: Vec<C64> = (0..len).map(|_| c(rng)).collect();
        let g: Vec<C64> = (0..len).map(|_| c(rng)).collect();
        // ρ on a random sub-box
        let lo: Vec<usize> = (0..2).map(|_| rng.random_range(0..n / 2)).collect();
        let hi: Vec<usize> = (0..2).map(|j| rng.random_range(lo[j] + 1..n)).collect();
        let rho: Vec<f64> = (0..len)
            .map(|k| {
                let idx = grid.multi_index(k);
                let inside = (0..2).all(|j| idx[j] >= lo[j] && idx[j] <= hi[j]);
                if inside { rng.random_range(0.0..2.0) } else { 0.0 }
            })
            .collect();
        (f, g, rho)
    };
    let mut trials = TrialSummary { trials: sc.kato.square_trials, failures: 0, max_ratio: 0.0, tolerance: tol };
    let mut bounded = TrialSummary { trials: sc.kato.bounded_trials, failures: 0, max_ratio: 0.0, tolerance: tol };
    let mut max_plancherel_residual = 0.0f64;
    for _ in 0..sc.kato.square_trials {
        let (f, g, rho) = draw(rng);
        let subset = match rng.random_range(0..3) {
            0 => vec![0],
            1 => vec![1],
            _ => vec![0, 1],
        };
        let r = kato::square_integrability_check(&grid, &f, &g, &rho, &subset, tol)?;
        trials.max_ratio = trials.max_ratio.max(r.ratio);
        max_plancherel_residual = max_plancherel_residual.max(r.plancherel_residual);
        if !r.passed {
            trials.failures += 1;
        }
    }
    for _ in 0..sc.kato.bounded_trials {
        let (f, g, rho) = draw(rng);
        let r = kato::square_integrability_check(&grid, &f, &g, &rho, &[0], tol)?;
        let ratio = if r.bounded_energy_rhs > 0.0 { r.lhs / r.bounded_energy_rhs } else { 0.0 };
        bounded.max_ratio = bounded.max_ratio.max(ratio);
        max_plancherel_residual = max_plancherel_residual.max(r.plancherel_residual);
        if !r.bounded_energy_passed {
            bounded.failures += 1;
        }
    }
    Ok(SquareSummary { mesh: Mesh::of(&grid), trials, bounded, max_plancherel_residual })
}

// ---------------------------------------------------------------- twoparticle

#[derive(Clone, Debug, Serialize)]
pub struct PlancherelSample {
    pub tau: f64,
    pub norm_sq: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoParticleSuite {
    pub config: ChannelConfig,
    pub triple_norm: f64,
    pub energy_bound: f64,
    pub profile: CommutatorProfile,
    /// Spread of the measured `C_p = ‖⟨A_p⟩⟨u⟩^{−1}‖` over the fibers.
    pub c_min: f64,
    pub c_max: f64,
    pub convergence: Convergence,
    pub chain_tolerance: f64,
    pub microcausality: Microcausality,
    pub microcausality_tolerance: f64,
    pub tauberian: TauberianReport,
    pub plancherel: Vec<PlancherelSample>,
    pub fft_tolerance: f64,
}

pub fn channel_config(sc: &Scenario, params: &DispersionParams) -> ChannelConfig {
    let t = &sc.twoparticle;
    ChannelConfig {
        nu: sc.physics.nu,
        energy: t.energy,
        n_energy: t.n_energy,
        support: t.support,
        rho_ripple: t.rho_ripple,
        slab: t.slab,
        n_momentum: t.n_momentum,
        q_extent: t.q_extent,
        n_q: t.n_q,
        u_extent: t.u_extent,
        n_u: t.n_u,
        profile_energy: t.profile_energy,
        profile_momentum: t.profile_momentum,
        psi_scale: t.psi_scale,
        psi_phase: t.psi_phase,
        first_window: t.first_window,
        horizon: t.horizon,
        budget: sc.grid.budget,
        ..ChannelConfig::default_for(params.clone())
    }
}

fn run_twoparticle(sc: &Scenario, params: &DispersionParams, col: &mut Collector) -> Result<TwoParticleSuite> {
    let cfg = channel_config(sc, params);
    let channel = twoparticle::build_channel(&cfg)?;
    let tol = &sc.tolerance;
    col.check(
        "twoparticle.profile_decay",
        true,
        channel.profile.decay_ok,
        channel.profile.decay_exponent,
        4.0,
        "fitted shell decay exponent of ‖φ(u)‖",
    );

    let convergence = match channel.convergence() {
        Ok(c) => c,
        Err(Error::Consistency(msg)) => {
            return Err(Error::Consistency(format!("twoparticle.chain_soundness: {msg}")));
        }
        Err(e) => return Err(e),
    };
    let worst = convergence.windows.iter().map(|w| if w.rhs > 0.0 { w.lhs / w.rhs } else { 0.0 }).fold(0.0, f64::max);
    col.check(
        "twoparticle.chain_soundness",
        true,
        convergence.windows.iter().all(|w| w.lhs <= w.rhs * (1.0 + tol.chain)),
        worst,
        1.0 + tol.chain,
        format!("lhs ≤ rhs on {} windows up to t = {}", convergence.windows.len(), cfg.horizon),
    );
    col.check(
        "twoparticle.decreasing",
        true,
        convergence.decreasing_tail,
        convergence.decay_exponent,
        0.0,
        "lhs([t, 2t]) strictly decreasing over the last three windows",
    );
    col.curve("twoparticle_convergence.csv", |w| convergence.write_csv(w))?;

    let microcausality = channel.microcausality_integral(cfg.nu, tol.microcausality)?;
    col.check(
        "twoparticle.microcausality",
        true,
        microcausality.passed,
        microcausality.ratio,
        1.0,
        "∫∫⟨u⟩^{2ν}|K|² against (2π)^d |||ψ|||² ∫‖⟨u⟩^ν φ(u)‖²",
    );

    let tauberian = channel.tauberian(sc.twoparticle.tauberian_delta, sc.twoparticle.tauberian_per_delta)?;
    col.check(
        "twoparticle.tauberian",
        true,
        tauberian.b_convergent && tauberian.slowly_oscillating && tauberian.l2_limit_zero && tauberian.consistent,
        tauberian.max_lipschitz_ratio,
        1.0,
        format!(
            "B-convergent {}, slowly oscillating {}, L² limit zero {}",
            tauberian.b_convergent, tauberian.slowly_oscillating, tauberian.l2_limit_zero
        ),
    );

    let plancherel: Vec<PlancherelSample> = [0.0, cfg.first_window, cfg.horizon]
        .iter()
        .map(|&tau| {
            let (norm_sq, residual) = channel.plancherel_residual(tau);
            PlancherelSample { tau, norm_sq, residual }
        })
        .collect();
    let max_res = plancherel.iter().map(|p| p.residual).fold(0.0, f64::max);
    col.check(
        "twoparticle.plancherel",
        true,
        max_res <= tol.fft,
        max_res,
        tol.fft,
        "∫∫|K|² du dv against 2π∫du∫dP|χ_P G_P|²",
    );

    let cs: Vec<f64> = convergence.windows.first().map(|w| w.factors.iter().map(|f| f.c).collect()).unwrap_or_default();
    Ok(TwoParticleSuite {
        triple_norm: channel.triple_norm,
        energy_bound: channel.energy_bound(),
        profile: channel.profile.clone(),
        c_min: cs.iter().copied().fold(f64::INFINITY, f64::min),
        c_max: cs.iter().copied().fold(0.0, f64::max),
        convergence,
        chain_tolerance: tol.chain,
        microcausality,
        microcausality_tolerance: tol.microcausality,
        tauberian,
        plancherel,
        fft_tolerance: tol.fft,
        config: cfg,
    })
}
