use mourrekit::conjugate::{self, CutoffSpec};
use mourrekit::dispersion::{DispersionParams, MomentumBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(s: usize) -> DispersionParams {
    let k1 = MomentumBox::new(vec![0.8; s], vec![1.4; s]).unwrap();
    let k2 = MomentumBox::new(vec![-0.8; s], vec![-0.2; s]).unwrap();
    let p = (0..s).map(|i| 0.6 - 0.3 * i as f64).collect();
    DispersionParams::new(1.0, p, k1, k2, None).unwrap()
}

fn fd_divergence(q: &[f64], pr: &DispersionParams, c: &CutoffSpec) -> f64 {
    let h = 1e-5;
    (0..q.len())
        .map(|i| {
            let mut a = q.to_vec();
            let mut b = q.to_vec();
            a[i] += h;
            b[i] -= h;
            let fa = conjugate::vector_field_f(&a, pr, c, 0.0).unwrap()[i];
            let fb = conjugate::vector_field_f(&b, pr, c, 0.0).unwrap()[i];
            (fa - fb) / (2.0 * h)
        })
        .sum()
}

/// Largest |closed form − finite difference| over random points away from ∇ω_p = 0.
fn worst(s: usize) -> (f64, f64) {
    let pr = params(s);
    let c = CutoffSpec::new(pr.epsilon, pr.beta()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(s as u64);
    let (mut printed, mut exact) = (0.0f64, 0.0f64);
    let mut used = 0;
    while used < 200 {
        let q: Vec<f64> = (0..s).map(|_| rng.random_range(-2.5..2.5)).collect();
        let g: f64 = pr.grad(&q).iter().map(|x| x * x).sum::<f64>().sqrt();
        if g < 0.3 {
            continue;
        }
        used += 1;
        let fd = fd_divergence(&q, &pr, &c);
        let d = conjugate::div_f(&q, &pr, &c);
        printed = printed.max((d.printed - fd).abs());
        exact = exact.max((d.exact - fd).abs());
    }
    (printed, exact)
}

#[test]
fn closed_forms_agree_with_differences_in_one_dimension() {
    let (printed, exact) = worst(1);
    assert!(exact < 1e-4, "{exact}");
    assert!(printed < 1e-4, "{printed}");
}

#[test]
fn printed_form_misses_the_hessian_term_in_two_dimensions() {
    let (printed, exact) = worst(2);
    assert!(exact < 1e-4, "{exact}");
    assert!(printed > 1e-2, "{printed}");
}

#[test]
fn cutoff_is_one_on_its_plateau() {
    let c = CutoffSpec::new(0.2, 3.0).unwrap();
    for x in [0.1, 1.0, 3.9, 4.0] {
        assert_eq!(c.theta(x), 1.0, "x = {x}");
    }
    for x in [0.0, 0.05, 5.0, 6.0] {
        assert_eq!(c.theta(x), 0.0, "x = {x}");
    }
}
