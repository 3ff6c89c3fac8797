use mourrekit::grid::{Interval, MomentumGrid};
use mourrekit::scenario::Scenario;
use mourrekit::{kato, mourre, suite};

fn scenario(extra: &str) -> Scenario {
    Scenario::parse(&format!("name = t\nseed = 11\ngrid.n = 48\ngrid.refine = 96\n{extra}")).unwrap()
}

#[test]
fn mourre_suite_passes_on_a_coarse_grid() {
    let out = suite::run(&scenario("modules = mourre\n")).unwrap();
    let m = out.report.mourre.as_ref().unwrap();
    assert!((3.5..=4.5).contains(&m.refinement_ratio), "{}", m.refinement_ratio);
    assert!(m.direct.passed && m.inverse.passed);
    assert!(m.resolvent_identity_residual < 1e-8);
    assert!(out.report.failed_hard().is_empty());
    assert!(out.report.lap.is_none() && out.report.kato.is_none());
}

#[test]
fn runs_are_reproducible() {
    let sc = scenario("modules = lap\nlap.random_scenarios = 1\nlap.interpolation_trials = 4\nlap.diffineq_trials = 3\n");
    let a = suite::run(&sc).unwrap();
    let b = suite::run(&sc).unwrap();
    let key = |o: &suite::Outcome| o.report.checks.iter().map(|c| (c.name.clone(), c.value.to_bits())).collect::<Vec<_>>();
    assert_eq!(key(&a), key(&b));
    assert!(a.report.failed_hard().is_empty(), "{:?}", a.report.failed_hard());
    let csv = a.curves.iter().find(|c| c.file == "lap_sweep.csv").unwrap();
    assert!(csv.contents.lines().count() > 66);
}

#[test]
fn inverse_window_swaps_and_inverts_the_ends() {
    let w = mourre::inverse_window(Interval::open(2.0, 4.0)).unwrap();
    assert_eq!((w.lo, w.hi), (0.25, 0.5));
    assert!(mourre::inverse_window(Interval::open(-1.0, 4.0)).is_err());
}

#[test]
fn marginal_norm_is_the_sup_of_the_integrated_density() {
    let g = MomentumGrid::symmetric(2, 1.0, 9, 4096).unwrap();
    let rho: Vec<f64> = (0..g.len()).map(|k| {
        let q = g.point(k);
        (1.0 + q[0]).powi(2) * (2.0 - q[1])
    }).collect();
    for (subset, other) in [(0usize, 1usize), (1, 0)] {
        let brute = (0..9)
            .map(|i| (0..9).map(|j| {
                let mut idx = [0; 2];
                idx[subset] = i;
                idx[other] = j;
                rho[g.flat_index(&idx)]
            }).sum::<f64>() * g.spacing(other))
            .fold(0.0, f64::max)
            .sqrt();
        let got = kato::mh_norm(&g, &rho, &[subset]).unwrap();
        assert!((got - brute).abs() < 1e-13, "{got} vs {brute}");
    }
    let full = kato::mh_norm(&g, &rho, &[0, 1]).unwrap();
    assert!((full - rho.iter().copied().fold(0.0, f64::max).sqrt()).abs() < 1e-13);
    assert!(kato::mh_norm(&g, &rho, &[]).is_err());
}
