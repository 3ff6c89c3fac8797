//! End-to-end acceptance: runs the bundled default scenario twice through the
//! binary and checks each criterion, with independent oracles for the
//! randomized ones. Prints one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use mourrekit::grid::MomentumGrid;
use mourrekit::kato;
use mourrekit::lap;

struct Run {
    report: Vec<u8>,
    json: Value,
    timings: BTreeMap<String, f64>,
    status: i32,
}

fn run_default() -> Run {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mourrekit"))
        .args(["run", "paper-default", "--out"])
        .arg(dir.path())
        .output()
        .expect("binary runs");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let timings = stderr
        .lines()
        .filter_map(|l| {
            let mut it = l.strip_prefix("timing ")?.split_whitespace();
            let label = it.next()?.to_string();
            let secs = it.next()?.trim_end_matches('s').parse().ok()?;
            Some((label, secs))
        })
        .collect();
    let report = std::fs::read(dir.path().join("report.json")).expect("report written");
    let json = serde_json::from_slice(&report).unwrap();
    Run { report, json, timings, status: out.status.code().unwrap_or(-1) }
}

fn f(v: &Value, path: &str) -> f64 {
    let mut cur = v;
    for key in path.split('.') {
        cur = match key.parse::<usize>() {
            Ok(i) => &cur[i],
            Err(_) => &cur[key],
        };
    }
    cur.as_f64().unwrap_or_else(|| panic!("{path} is not a number: {cur}"))
}

fn b(v: &Value, path: &str) -> bool {
    let mut cur = v;
    for key in path.split('.') {
        cur = &cur[key];
    }
    cur.as_bool().unwrap_or_else(|| panic!("{path} is not a bool"))
}

struct Ledger {
    lines: Vec<(usize, bool, String)>,
}

impl Ledger {
    fn record(&mut self, n: usize, passed: bool, detail: String) {
        println!("criterion {n:2}: {} {detail}", if passed { "PASS" } else { "FAIL" });
        self.lines.push((n, passed, detail));
    }
}

// ---------------------------------------------------------------- oracles

/// Worst case of the differential inequality, `dφ/dε = −(θ1 + θ2√φ + γφ)`,
/// integrated from `ε0` toward 0 in `s = ln ε` with step doubling until two
/// resolutions agree.
fn ode_oracle(phi_end: f64, t1: &dyn Fn(f64) -> f64, t2: &dyn Fn(f64) -> f64, gamma: f64, eps0: f64) -> f64 {
    let solve = |steps: usize| {
        let span = 70.0;
        let h = span / steps as f64;
        let g = |s: f64, phi: f64| {
            let e = s.exp();
            // dφ/ds = ε dφ/dε, s decreasing
            e * (t1(e) + t2(e) * phi.max(0.0).sqrt() + gamma * phi)
        };
        let mut s = eps0.ln();
        let mut phi = phi_end;
        for _ in 0..steps {
            let k1 = g(s, phi);
            let k2 = g(s - 0.5 * h, phi + 0.5 * h * k1);
            let k3 = g(s - 0.5 * h, phi + 0.5 * h * k2);
            let k4 = g(s - h, phi + h * k3);
            phi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            s -= h;
        }
        phi
    };
    let mut steps = 2000;
    let mut prev = solve(steps);
    loop {
        steps *= 2;
        let next = solve(steps);
        if (next - prev).abs() <= 1e-11 * next.abs().max(1.0) || steps > 1 << 20 {
            return next;
        }
        prev = next;
    }
}

fn hermitian_power(s: &DMatrix<C64>, nu: f64) -> DMatrix<C64> {
    let eig = s.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(l.powf(nu), 0.0)));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

/// `(lhs, rhs, bounded_rhs)` of the square-integrability inequality by
/// trapezoidal quadrature of the trigonometric polynomial over one period.
fn square_oracle(grid: &MomentumGrid, fv: &[C64], gv: &[C64], rho: &[f64], subset: &[usize]) -> (f64, f64, f64) {
    let n = grid.n();
    let d = grid.dim();
    let len = grid.len();
    let other: f64 = (0..d).filter(|j| !subset.contains(j)).map(|j| grid.spacing(j)).product();
    let da: f64 = subset.iter().map(|&j| grid.spacing(j)).product();
    // pairing as a function of the kept coordinates
    let mut pair: BTreeMap<Vec<usize>, C64> = BTreeMap::new();
    let mut marg: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for k in 0..len {
        let idx = grid.multi_index(k);
        let key: Vec<usize> = subset.iter().map(|&j| idx[j]).collect();
        *pair.entry(key.clone()).or_default() += fv[k].conj() * gv[k] * rho[k] * other;
        *marg.entry(key).or_default() += fv[k].norm_sqr() * rho[k] * other;
    }
    let m = 2 * n + 3;
    let periods: Vec<f64> = subset.iter().map(|&j| 2.0 * PI / grid.spacing(j)).collect();
    let mut lhs = 0.0;
    let total = m.pow(subset.len() as u32);
    for t in 0..total {
        let x: Vec<f64> = (0..subset.len())
            .map(|a| {
                let i = (t / m.pow(a as u32)) % m;
                i as f64 * periods[a] / m as f64
            })
            .collect();
        let val: C64 = pair
            .iter()
            .map(|(key, z)| {
                let phase: f64 = key.iter().enumerate().map(|(a, &i)| x[a] * grid.coordinate(subset[a], i)).sum();
                z * C64::from_polar(da, phase)
            })
            .sum();
        lhs += val.norm_sqr();
    }
    lhs *= periods.iter().map(|p| p / m as f64).product::<f64>();
    let sup_a = marg.values().copied().fold(0.0, f64::max);
    let g2: f64 = (0..len).map(|k| gv[k].norm_sqr() * rho[k]).sum::<f64>() * grid.weight();
    let rhs = (2.0 * PI).powi(subset.len() as i32) * sup_a * g2;
    let sup_full = (0..len).map(|k| fv[k].norm_sqr() * rho[k]).fold(0.0, f64::max);
    let widths: f64 = (0..d)
        .filter(|j| !subset.contains(j))
        .map(|j| {
            let h = (0..len)
                .filter(|&k| fv[k].norm_sqr() * rho[k] > 0.0)
                .map(|k| grid.point(k)[j].abs())
                .fold(0.0, f64::max)
                + 0.5 * grid.spacing(j);
            2.0 * h
        })
        .product();
    let bounded = (2.0 * PI).powi(subset.len() as i32) * widths * sup_full * g2;
    (lhs, rhs, bounded)
}

fn random_square_case(rng: &mut ChaCha8Rng, grid: &MomentumGrid) -> (Vec<C64>, Vec<C64>, Vec<f64>) {
    let len = grid.len();
    let n = grid.n();
    let c = |rng: &mut ChaCha8Rng| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let fv: Vec<C64> = (0..len).map(|_| c(rng)).collect();
    let gv: Vec<C64> = (0..len).map(|_| c(rng)).collect();
    let lo: Vec<usize> = (0..2).map(|_| rng.random_range(0..n - 2)).collect();
    let hi: Vec<usize> = (0..2).map(|j| rng.random_range(lo[j] + 1..n)).collect();
    let rho = (0..len)
        .map(|k| {
            let idx = grid.multi_index(k);
            if (0..2).all(|j| idx[j] >= lo[j] && idx[j] <= hi[j]) {
                rng.random_range(0.0..3.0)
            } else {
                0.0
            }
        })
        .collect();
    (fv, gv, rho)
}

// ---------------------------------------------------------------- test

#[test]
fn acceptance() {
    let mut ledger = Ledger { lines: Vec::new() };
    let first = run_default();
    let second = run_default();
    let r = &first.json;
    let t = &first.timings;
    let time = |k: &str| *t.get(k).unwrap_or_else(|| panic!("no timing for {k}"));
    println!("paper-default exit status {} and {}", first.status, second.status);

    // 1. commutator identity under grid doubling
    {
        let coarse = f(r, "mourre.commutator.0.residual");
        let fine = f(r, "mourre.commutator.1.residual");
        let n0 = f(r, "mourre.commutator.0.mesh.points_per_axis");
        let n1 = f(r, "mourre.commutator.1.mesh.points_per_axis");
        let ratio = coarse / fine;
        let secs = time("mourre.commutator");
        let ok = (n0, n1) == (128.0, 256.0) && (3.5..=4.5).contains(&ratio) && fine <= 1e-3 && secs < 10.0;
        ledger.record(
            1,
            ok,
            format!("residual {coarse:.4e} (N=128) → {fine:.4e} (N=256), ratio {ratio:.3} in [3.5, 4.5], absolute ≤ 1e-3 required, {secs:.2}s"),
        );
    }

    // 2. Mourre margins
    {
        let res = f(r, "mourre.commutator.0.residual");
        let margin = f(r, "mourre.direct.margin");
        let beta = f(r, "mourre.beta");
        let inv_const = f(r, "mourre.inverse.constant");
        let secs = time("mourre");
        let ok = b(r, "mourre.direct.passed")
            && f(r, "mourre.direct.constant") == 1.0
            && margin.abs() <= 10.0 * res
            && b(r, "mourre.inverse.passed")
            && (inv_const - (1.0 + beta).powi(-2)).abs() <= 1e-15
            && secs < 30.0;
        ledger.record(
            2,
            ok,
            format!(
                "margin {margin:.4e} vs 10·residual {:.4e}; inverse margin {:.4e} with constant {inv_const:.4e}, {secs:.2}s",
                10.0 * res,
                f(r, "mourre.inverse.margin")
            ),
        );
    }

    // 3. LAP domination on the default and 5 randomized scenarios
    {
        let scen = r["lap"]["scenarios"].as_array().unwrap();
        let mut violations = 0;
        let mut distinct = std::collections::BTreeSet::new();
        for s in scen {
            let direct = f(s, "direct.supremum");
            let transfer = f(s, "transfer_bound");
            let explicit = f(s, "explicit.bound");
            if !(direct <= transfer && transfer <= explicit) || f(s, "pointwise_violations") != 0.0 {
                violations += 1;
            }
            distinct.insert(format!("{}/{}/{}", s["params"]["mass"], s["params"]["epsilon"], s["params"]["total_momentum"]));
        }
        let secs = time("lap.domination");
        let ok = scen.len() == 6 && distinct.len() == 6 && violations == 0 && secs < 300.0;
        ledger.record(
            3,
            ok,
            format!("{} scenarios ({} distinct (m, ε, p)), {violations} violations, {secs:.1}s", scen.len(), distinct.len()),
        );
    }

    // 4. differential inequality against the ODE oracle
    {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let mut violations = 0;
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let (a1, e1) = (rng.random_range(0.0..3.0), rng.random_range(-0.95..1.5));
            let (a2, e2) = (rng.random_range(0.0..3.0), rng.random_range(-0.95..1.5));
            let gamma = rng.random_range(0.0..3.0);
            let eps0 = rng.random_range(0.01..1.0);
            let phi_end = rng.random_range(0.0..5.0);
            let t1 = move |x: f64| a1 * x.powf(e1);
            let t2 = move |x: f64| a2 * x.powf(e2);
            let bound = lap::diffineq_bound(phi_end, t1, t2, gamma, eps0).unwrap();
            let phi0 = ode_oracle(phi_end, &t1, &t2, gamma, eps0);
            worst = worst.max(phi0 / bound);
            if phi0 > bound * (1.0 + 1e-9) {
                violations += 1;
            }
        }
        let zero = lap::diffineq_bound(0.0, |_| 0.0, |_| 0.0, 0.0, 1.0).unwrap();
        let two = lap::diffineq_bound(1.0, |_| 1.0, |_| 0.0, 0.0, 1.0).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let ok = violations == 0 && zero == 0.0 && (two - 2.0).abs() <= 1e-12 && secs < 10.0;
        ledger.record(
            4,
            ok,
            format!("50 trials, {violations} violations, max φ(0+)/bound {worst:.6}; closed forms {zero} and {two:.15}, {secs:.2}s"),
        );
    }

    // 5. interpolation
    {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let mut failures = 0;
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let d = rng.random_range(2..=7);
            let x = random_matrix(&mut rng, d);
            let pos = |rng: &mut ChaCha8Rng| {
                let m = random_matrix(rng, d);
                &m * m.adjoint() + DMatrix::identity(d, d) * C64::new(rng.random_range(0.01..1.0), 0.0)
            };
            let (s1, s2) = (pos(&mut rng), pos(&mut rng));
            let nu = rng.random_range(0.0..=1.0);
            let lhs = spectral_norm(&(hermitian_power(&s1, nu) * &x * hermitian_power(&s2, nu)));
            let rhs = spectral_norm(&x).powf(1.0 - nu) * spectral_norm(&(&s1 * &x * &s2)).powf(nu);
            let lib = lap::interpolation_check(&x, &s1, &s2, nu).unwrap();
            worst = worst.max(lhs / rhs);
            let agree = (lib.lhs - lhs).abs() <= 1e-9 * lhs && (lib.rhs - rhs).abs() <= 1e-9 * rhs;
            if lhs > rhs * (1.0 + 1e-10) || !lib.passed || !agree {
                failures += 1;
            }
        }
        let secs = start.elapsed().as_secs_f64();
        ledger.record(5, failures == 0 && secs < 10.0, format!("100 triples, {failures} failures, max ratio {worst:.12}, {secs:.2}s"));
    }

    // 6. Kato two-path equality and local decay against c(p)
    {
        let states = r["kato"]["states"].as_array().unwrap();
        let cp = f(r, "kato.cp.value");
        let mut max_gap = 0.0f64;
        let mut undominated = 0;
        for s in states {
            let (d, q) = (f(s, "damped"), f(s, "frequency"));
            max_gap = max_gap.max((d - q).abs() / q);
            if f(s, "undamped") > cp * f(s, "norm_sq") {
                undominated += 1;
            }
        }
        let secs = time("kato.cp") + time("kato.two_path");
        let ok = states.len() == 20 && max_gap <= 0.02 && undominated == 0 && secs < 120.0;
        ledger.record(
            6,
            ok,
            format!("{} states, max two-path gap {max_gap:.3e} ≤ 0.02, {undominated} above c(p) = {cp:.4e}, {secs:.1}s", states.len()),
        );
    }

    // 7. family constant with the 8^2 factor
    {
        let subsets = r["kato"]["family"]["subsets"].as_array().unwrap();
        let full = subsets.iter().find(|s| s[0].as_array().unwrap().len() == 2).expect("n = 2 subset");
        let c0 = f(&full[1], "c0");
        let bound = f(&full[1], "kato_bound");
        let secs = time("kato.family");
        let ok = c0 > 0.0 && c0 <= bound && f(&full[1], "pointwise_violations") == 0.0 && secs < 120.0;
        ledger.record(7, ok, format!("C⁰ = {c0:.4e} ≤ 8²·sup‖T Im R T*‖ = {bound:.4e}, {secs:.2}s"));
    }

    // 8. square integrability with a quadrature oracle
    {
        let start = Instant::now();
        let grid = Arc::new(MomentumGrid::symmetric(2, 1.0, 12, 4096).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        let mut failures = 0;
        let mut worst = 0.0f64;
        for k in 0..50 {
            let (fv, gv, rho) = random_square_case(&mut rng, &grid);
            let subset = [vec![0], vec![1], vec![0, 1]][k % 3].clone();
            let (lhs, rhs, _) = square_oracle(&grid, &fv, &gv, &rho, &subset);
            let lib = kato::square_integrability_check(&grid, &fv, &gv, &rho, &subset, 1e-6).unwrap();
            worst = worst.max(lhs / rhs);
            let agree = (lib.lhs - lhs).abs() <= 1e-9 * lhs && (lib.rhs - rhs).abs() <= 1e-9 * rhs;
            if lhs / rhs > 1.0 + 1e-6 || !lib.passed || !agree {
                failures += 1;
            }
        }
        let mut bounded_failures = 0;
        for _ in 0..10 {
            let (fv, gv, rho) = random_square_case(&mut rng, &grid);
            let (lhs, _, bounded) = square_oracle(&grid, &fv, &gv, &rho, &[0]);
            let lib = kato::square_integrability_check(&grid, &fv, &gv, &rho, &[0], 1e-6).unwrap();
            let agree = (lib.bounded_energy_rhs - bounded).abs() <= 1e-9 * bounded;
            if lhs > bounded * (1.0 + 1e-6) || !lib.bounded_energy_passed || !agree {
                bounded_failures += 1;
            }
        }
        let secs = start.elapsed().as_secs_f64();
        ledger.record(
            8,
            failures == 0 && bounded_failures == 0 && secs < 30.0,
            format!("50 trials, {failures} failures, max ratio {worst:.6}; bounded-energy 10 trials, {bounded_failures} failures, {secs:.2}s"),
        );
    }

    // 9. two-particle chain
    {
        let tp = &r["twoparticle"];
        let windows = tp["convergence"]["windows"].as_array().unwrap();
        let mass = f(r, "scenario.physics.mass");
        let sound = windows.iter().all(|w| f(w, "lhs") <= f(w, "rhs"));
        let last_t = windows.last().map_or(0.0, |w| f(w, "t2"));
        let lhs: Vec<f64> = windows.iter().map(|w| f(w, "lhs")).collect();
        let tail = &lhs[lhs.len().saturating_sub(3)..];
        let decreasing = tail.len() == 3 && tail.windows(2).all(|p| p[1] < p[0]);
        let micro = b(tp, "microcausality.passed");
        let tb = &tp["tauberian"];
        let tauber = ["b_convergent", "slowly_oscillating", "l2_limit_zero", "consistent"].iter().all(|k| b(tb, k));
        let secs = time("twoparticle");
        let ok = sound && (last_t - 160.0 / mass).abs() < 1e-9 && decreasing && micro && tauber && secs < 600.0;
        ledger.record(
            9,
            ok,
            format!(
                "{} windows up to t = {last_t}, chain sound {sound}, tail decreasing {decreasing}, microcausality ratio {:.4}, Tauberian all-pass {tauber}, {secs:.2}s",
                windows.len(),
                f(tp, "microcausality.ratio")
            ),
        );
    }

    // 10. determinism
    {
        let start = Instant::now();
        let same = first.report == second.report;
        let secs = start.elapsed().as_secs_f64();
        ledger.record(
            10,
            same && first.status == 0 && second.status == 0 && secs < 1.0,
            format!("report.json {} bytes, byte-identical {same}, exit {} and {}", first.report.len(), first.status, second.status),
        );
    }

    let failed: Vec<usize> = ledger.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
