//! Quadrature rules.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) on `[a, b]`; returns `(value, error estimate)`.
pub fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> (f64, f64) {
        if whole.1 <= tol || depth == 0 {
            return whole;
        }
        let m = 0.5 * (a + b);
        let left = gk15(f, a, m);
        let right = gk15(f, m, b);
        let l = rec(f, a, m, 0.5 * tol, left, depth - 1);
        let r = rec(f, m, b, 0.5 * tol, right, depth - 1);
        (l.0 + r.0, l.1 + r.1)
    }
    let whole = gk15(f, a, b);
    rec(f, a, b, tol, whole, 40)
}

#[derive(Clone, Copy, Debug)]
pub struct SingularIntegral {
    pub value: f64,
    pub error: f64,
    /// Fitted decay rate `α+1` of a local power law `c·x^α` at the origin.
    pub origin_rate: f64,
}

/// `∫_0^{x0} θ(x) dx` for nonnegative `θ` with an integrable power-law
/// singularity at 0. The substitution `x = x0·e^{−y}` turns `c·x^α` into an
/// exponential in `y`; `[0, 40]` is integrated adaptively and the remainder
/// in closed form from the fitted exponential rate.
pub fn integrate_from_origin(theta: &impl Fn(f64) -> f64, x0: f64) -> Result<SingularIntegral> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::InvalidParameter(format!("upper limit {x0}")));
    }
    let g = |y: f64| {
        let x = x0 * (-y).exp();
        theta(x) * x
    };
    const Y: f64 = 40.0;
    for y in [0.0, 1.0, 10.0, Y - 1.0, Y] {
        let v = g(y);
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidParameter(format!("integrand {v} at x = {:e}", x0 * (-y).exp())));
        }
    }
    let (body, err) = adaptive(&g, 0.0, Y, 1e-13 * (1.0 + g(0.0).abs()));
    let (g1, g2) = (g(Y - 1.0), g(Y));
    let (rate, tail) = if g2 == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let rate = (g1 / g2).ln();
        if !(rate > 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "integrand not integrable at 0 (local exponent {:.4})",
                rate - 1.0
            )));
        }
        (rate, g2 / rate)
    };
    Ok(SingularIntegral { value: body + tail, error: err, origin_rate: rate })
}

/// Composite Simpson rule on equally spaced samples (odd count).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd number of samples");
    let mut s = values[0] + values[n - 1];
    for (k, v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_kronrod_polynomials_and_oscillation() {
        let (v, _) = adaptive(&|x: f64| x.powi(5) - 2.0 * x, 0.0, 2.0, 1e-14);
        assert_relative_eq!(v, 64.0 / 6.0 - 4.0, epsilon = 1e-13);
        let (v, _) = adaptive(&|x: f64| (20.0 * x).cos(), 0.0, 3.0, 1e-13);
        assert_relative_eq!(v, (60.0f64).sin() / 20.0, epsilon = 1e-12);
    }

    #[test]
    fn power_laws_at_origin() {
        for alpha in [-0.999, -0.9, -0.5, 0.0, 0.7] {
            let r = integrate_from_origin(&|x: f64| 2.0 * x.powf(alpha), 0.3).unwrap();
            let exact = 2.0 * 0.3f64.powf(alpha + 1.0) / (alpha + 1.0);
            assert_relative_eq!(r.value, exact, max_relative = 1e-10);
        }
        assert!(integrate_from_origin(&|x: f64| 1.0 / x, 1.0).is_err());
        assert!(integrate_from_origin(&|x: f64| x.powf(-1.2), 1.0).is_err());
        assert_eq!(integrate_from_origin(&|_| 0.0, 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn simpson_cubic_exact() {
        let h = 0.25;
        let v: Vec<f64> = (0..9).map(|k| (k as f64 * h).powi(3)).collect();
        assert_relative_eq!(simpson(&v, h), 2f64.powi(4) / 4.0, epsilon = 1e-14);
    }
}
