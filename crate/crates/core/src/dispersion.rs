//! Relativistic dispersion `ω(q) = √(m²+|q|²)` and the two-particle fiber energy
//! `ω_p(q) = ω(p/2+q) + ω(p/2−q)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Interval;

/// Axis-aligned box in momentum space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentumBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl MomentumBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidParameter("box bounds must be nonempty and of equal length".into()));
        }
        for (&lo, &hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidParameter("unbounded box".into()));
            }
            if lo > hi {
                return Err(Error::InvalidParameter(format!("box side [{lo}, {hi}] is empty")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn point(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    /// `max_{x∈box} |x|`, attained at a corner.
    pub fn max_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo.abs().max(hi.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `dist(0, box)`.
    pub fn min_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| if lo > 0.0 { lo } else if hi < 0.0 { -hi } else { 0.0 })
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    }

    pub fn minkowski_sum(&self, other: &Self) -> Self {
        Self {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a + b).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect(),
        }
    }

    /// `{x − y : x ∈ self, y ∈ other}`.
    pub fn minkowski_difference(&self, other: &Self) -> Self {
        Self {
            lower: self.lower.iter().zip(&other.upper).map(|(a, b)| a - b).collect(),
            upper: self.upper.iter().zip(&other.lower).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let (a, b): (Vec<f64>, Vec<f64>) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| if c >= 0.0 { (c * lo, c * hi) } else { (c * hi, c * lo) })
            .unzip();
        Self { lower: a, upper: b }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Tensor grid with `per_axis` points per side (corners included).
    pub fn samples(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| {
                if per_axis < 2 || lo == hi {
                    vec![0.5 * (lo + hi)]
                } else {
                    Interval::closed(lo, hi).linspace(per_axis)
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&x| {
                        let mut v = prefix.clone();
                        v.push(x);
                        v
                    })
                })
                .collect();
        }
        out
    }
}

fn norm2(q: &[f64]) -> f64 {
    q.iter().map(|x| x * x).sum()
}

pub fn omega(q: &[f64], m: f64) -> f64 {
    (m * m + norm2(q)).sqrt()
}

fn split(q: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let plus = p.iter().zip(q).map(|(p, q)| 0.5 * p + q).collect();
    let minus = p.iter().zip(q).map(|(p, q)| 0.5 * p - q).collect();
    (plus, minus)
}

pub fn omega_p(q: &[f64], p: &[f64], m: f64) -> f64 {
    let (kp, km) = split(q, p);
    omega(&kp, m) + omega(&km, m)
}

/// `∇_q ω_p = k₊/ω(k₊) − k₋/ω(k₋)` with `k± = p/2 ± q`.
pub fn grad_omega_p(q: &[f64], p: &[f64], m: f64) -> Vec<f64> {
    let (kp, km) = split(q, p);
    let (wp, wm) = (omega(&kp, m), omega(&km, m));
    kp.iter().zip(&km).map(|(a, b)| a / wp - b / wm).collect()
}

/// Hessian in `q`, row-major `s×s`.
pub fn hessian_omega_p(q: &[f64], p: &[f64], m: f64) -> Vec<f64> {
    let s = q.len();
    let (kp, km) = split(q, p);
    let mut h = vec![0.0; s * s];
    for k in [&kp, &km] {
        let w = omega(k, m);
        for i in 0..s {
            for j in 0..s {
                let delta = if i == j { 1.0 } else { 0.0 };
                h[i * s + j] += (delta - k[i] * k[j] / (w * w)) / w;
            }
        }
    }
    h
}

pub fn laplacian_omega_p(q: &[f64], p: &[f64], m: f64) -> f64 {
    let s = q.len() as f64;
    let (kp, km) = split(q, p);
    [kp, km]
        .iter()
        .map(|k| {
            let w = omega(k, m);
            s / w - norm2(k) / (w * w * w)
        })
        .sum()
}

/// `sup_{K1} ω + sup_{K2} ω`.
pub fn beta_cap(k1: &MomentumBox, k2: &MomentumBox, m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::InvalidParameter(format!("mass {m} must be positive")));
    }
    let w = |b: &MomentumBox| (m * m + b.max_norm().powi(2)).sqrt();
    Ok(w(k1) + w(k2))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalPair {
    pub i: Interval,
    pub j: Interval,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DispersionParams {
    pub mass: f64,
    pub total_momentum: Vec<f64>,
    pub epsilon: f64,
    pub k1: MomentumBox,
    pub k2: MomentumBox,
}

impl DispersionParams {
    /// Derives ε from the boxes unless an override is given.
    pub fn new(
        mass: f64,
        total_momentum: Vec<f64>,
        k1: MomentumBox,
        k2: MomentumBox,
        epsilon_override: Option<f64>,
    ) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("mass {mass} must be positive")));
        }
        let s = total_momentum.len();
        if s == 0 || k1.dim() != s || k2.dim() != s {
            return Err(Error::InvalidParameter("dimension mismatch between p, K1 and K2".into()));
        }
        let rel = k1.minkowski_difference(&k2);
        if !(rel.min_norm() > 0.0) {
            return Err(Error::InvalidParameter("K_rel = K1 − K2 is not separated from 0".into()));
        }
        let epsilon = match epsilon_override {
            Some(e) if e > 0.0 && e.is_finite() => e,
            Some(e) => return Err(Error::InvalidParameter(format!("epsilon override {e} must be positive"))),
            None => derive_epsilon(mass, &k1, &k2)?,
        };
        Ok(Self { mass, total_momentum, epsilon, k1, k2 })
    }

    pub fn dim(&self) -> usize {
        self.total_momentum.len()
    }

    pub fn k_tot(&self) -> MomentumBox {
        self.k1.minkowski_sum(&self.k2)
    }

    pub fn k_rel(&self) -> MomentumBox {
        self.k1.minkowski_difference(&self.k2)
    }

    pub fn beta(&self) -> f64 {
        beta_cap(&self.k1, &self.k2, self.mass).expect("mass validated at construction")
    }

    /// `2ω(p/2)`, the bottom of the fiber spectrum.
    pub fn threshold(&self) -> f64 {
        let half: Vec<f64> = self.total_momentum.iter().map(|p| 0.5 * p).collect();
        2.0 * omega(&half, self.mass)
    }

    pub fn omega_p(&self, q: &[f64]) -> f64 {
        omega_p(q, &self.total_momentum, self.mass)
    }

    pub fn grad(&self, q: &[f64]) -> Vec<f64> {
        grad_omega_p(q, &self.total_momentum, self.mass)
    }

    pub fn hessian(&self, q: &[f64]) -> Vec<f64> {
        hessian_omega_p(q, &self.total_momentum, self.mass)
    }

    pub fn laplacian(&self, q: &[f64]) -> f64 {
        laplacian_omega_p(q, &self.total_momentum, self.mass)
    }

    pub fn with_total_momentum(&self, p: Vec<f64>) -> Result<Self> {
        if p.len() != self.dim() {
            return Err(Error::InvalidParameter("total momentum dimension".into()));
        }
        Ok(Self { total_momentum: p, ..self.clone() })
    }

    pub fn intervals(&self) -> Result<IntervalPair> {
        intervals(self, self.beta())
    }

    /// Lower bound `b` for `|∇ω_p|` on `ω_p^{-1}(closure J)`, shrunk by 10%.
    pub fn gradient_floor(&self, pair: &IntervalPair) -> f64 {
        let s = self.dim();
        let directions = unit_directions(s);
        let mut best = f64::INFINITY;
        for d in &directions {
            let at = |r: f64| -> Vec<f64> { d.iter().map(|x| r * x).collect() };
            let f = |r: f64| self.omega_p(&at(r));
            let r_in = solve_radius(&f, pair.j.lo);
            let r_out = solve_radius(&f, pair.j.hi);
            for k in 0..=200 {
                let r = r_in + (r_out - r_in) * k as f64 / 200.0;
                best = best.min(norm2(&self.grad(&at(r))).sqrt());
            }
        }
        0.9 * best
    }
}

/// Smallest `r ≥ 0` with `f(r) = level`, for `f` increasing along the ray.
fn solve_radius(f: &impl Fn(f64) -> f64, level: f64) -> f64 {
    if f(0.0) >= level {
        return 0.0;
    }
    let mut hi = 1.0;
    while f(hi) < level {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn unit_directions(s: usize) -> Vec<Vec<f64>> {
    match s {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..720)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 720.0;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let cube = MomentumBox::new(vec![-1.0; s], vec![1.0; s]).expect("unit cube");
            cube.samples(9)
                .into_iter()
                .filter(|v| v.iter().any(|x| x.abs() == 1.0))
                .map(|v| {
                    let n = norm2(&v).sqrt();
                    v.into_iter().map(|x| x / n).collect()
                })
                .collect()
        }
    }
}

/// `0.9·inf{ω_p(q) − 2ω(p/2) : 2q ∈ K_rel, p ∈ K_tot}` by tensor-grid minimization.
pub fn derive_epsilon(m: f64, k1: &MomentumBox, k2: &MomentumBox) -> Result<f64> {
    let s = k1.dim();
    let per_axis = match s {
        1 => 201,
        2 => 41,
        _ => 13,
    };
    let tot = k1.minkowski_sum(k2);
    let half_rel = k1.minkowski_difference(k2).scaled(0.5);
    let ps = tot.samples(per_axis);
    let qs = half_rel.samples(per_axis);
    let mut best = f64::INFINITY;
    for p in &ps {
        let half: Vec<f64> = p.iter().map(|x| 0.5 * x).collect();
        let floor = 2.0 * omega(&half, m);
        for q in &qs {
            best = best.min(omega_p(q, p, m) - floor);
        }
    }
    if !(best > 0.0) {
        return Err(Error::InvalidParameter("no positive energy gap above threshold".into()));
    }
    Ok(0.9 * best)
}

/// `I = [2ω(p/2)+ε, β]`, `J = (2ω(p/2)+ε/2, β+1)`, `δ = min(ε/4, 1/2)`.
pub fn intervals(params: &DispersionParams, beta: f64) -> Result<IntervalPair> {
    let t = params.threshold();
    let eps = params.epsilon;
    if !(beta > t + eps) {
        return Err(Error::EmptyWindow(format!("β = {beta} ≤ 2ω(p/2)+ε = {}", t + eps)));
    }
    Ok(IntervalPair {
        i: Interval::closed(t + eps, beta),
        j: Interval::open(t + 0.5 * eps, beta + 1.0),
        delta: (0.25 * eps).min(0.5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_params() -> DispersionParams {
        DispersionParams::new(
            1.0,
            vec![0.6],
            MomentumBox::interval(0.8, 1.4).unwrap(),
            MomentumBox::interval(-0.8, -0.2).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn omega_values() {
        assert_eq!(omega(&[0.0], 2.5), 2.5);
        assert_eq!(omega(&[0.75], 1.0), 1.25);
        assert_eq!(omega(&[0.3, -0.4], 1.0), omega(&[-0.3, 0.4], 1.0));
    }

    #[test]
    fn omega_p_minimum_and_reduction() {
        let p = [0.6];
        assert_relative_eq!(omega_p(&[0.0], &p, 1.0), 2.0 * 1.09f64.sqrt(), epsilon = 1e-15);
        assert_eq!(omega_p(&[0.7], &[0.0], 1.0), 2.0 * omega(&[0.7], 1.0));
        assert_eq!(grad_omega_p(&[0.0], &p, 1.0), vec![0.0]);
        assert_eq!(laplacian_omega_p(&[0.0, 0.0], &[0.0, 0.0], 2.0), 2.0 * 2.0 / 2.0);
    }

    #[test]
    fn beta_examples() {
        let z = MomentumBox::point(&[0.0]).unwrap();
        assert_eq!(beta_cap(&z, &z, 1.5).unwrap(), 3.0);
        let b = beta_cap(&MomentumBox::interval(1.0, 2.0).unwrap(), &MomentumBox::interval(-1.0, 0.0).unwrap(), 1.0)
            .unwrap();
        assert_relative_eq!(b, 5f64.sqrt() + 2f64.sqrt(), epsilon = 1e-15);
        assert!(MomentumBox::interval(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn interval_example() {
        let mut params = default_params();
        params.total_momentum = vec![0.0];
        params.epsilon = 0.5;
        let pair = intervals(&params, 3.0).unwrap();
        assert_eq!(pair.i, Interval::closed(2.5, 3.0));
        assert_eq!(pair.j, Interval::open(2.25, 4.0));
        assert_eq!(pair.delta, 0.125);
        assert!(matches!(intervals(&params, 2.4), Err(Error::EmptyWindow(_))));
    }

    #[test]
    fn default_epsilon_and_beta() {
        let p = default_params();
        // smallest gap at p = 1.2, q = 0.5: 0.9·(ω(1.1)+ω(0.1)−2ω(0.6))
        assert!(p.epsilon > 0.14 && p.epsilon < 0.15, "{}", p.epsilon);
        assert_relative_eq!(p.beta(), 2.96f64.sqrt() + 1.64f64.sqrt(), epsilon = 1e-15);
        assert!(p.gradient_floor(&p.intervals().unwrap()) > 0.0);
    }

    #[test]
    fn rejects_touching_relative_set() {
        let r = DispersionParams::new(
            1.0,
            vec![0.0],
            MomentumBox::interval(-0.5, 0.5).unwrap(),
            MomentumBox::interval(0.0, 0.5).unwrap(),
            None,
        );
        assert!(r.is_err());
    }
}
