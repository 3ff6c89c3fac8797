//! Uniform momentum grids, states on them, and their dense operator realizations.
//!
//! Flat indices are row-major: the last axis varies fastest.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Spectral};

pub const DEFAULT_BUDGET: usize = 4096;
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-6;
pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentumGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    n: usize,
}

impl MomentumGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, n: usize) -> Result<Self> {
        Self::with_budget(lower, upper, n, DEFAULT_BUDGET)
    }

    pub fn with_budget(lower: Vec<f64>, upper: Vec<f64>, n: usize, budget: usize) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidGrid("axis bounds must be nonempty and of equal length".into()));
        }
        if n < 4 {
            return Err(Error::InvalidGrid(format!("N = {n} < 4")));
        }
        for (a, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidGrid(format!("axis {a}: bounds [{lo}, {hi}]")));
            }
        }
        let points = n.checked_pow(lower.len() as u32).unwrap_or(usize::MAX);
        if points > budget {
            return Err(Error::BudgetExceeded { points, cap: budget });
        }
        Ok(Self { lower, upper, n })
    }

    /// `[-extent, extent]^dim`.
    pub fn symmetric(dim: usize, extent: f64, n: usize, budget: usize) -> Result<Self> {
        Self::with_budget(vec![-extent; dim], vec![extent; dim], n, budget)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.n - 1) as f64
    }

    /// Quadrature weight of a single point.
    pub fn weight(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim() - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = k % self.n;
            k /= self.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if i == self.n - 1 {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        self.multi_index(k)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coordinate(a, i))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.multi_index(k).iter().any(|&i| i == 0 || i == self.n - 1)
    }

    /// Same extent with `n` points per axis.
    pub fn refined(&self, n: usize, budget: usize) -> Result<Self> {
        Self::with_budget(self.lower.clone(), self.upper.clone(), n, budget)
    }
}

fn same_grid(a: &Arc<MomentumGrid>, b: &Arc<MomentumGrid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{a:?} vs {b:?}")))
    }
}

/// Real interval with independently open or closed ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: true, hi_closed: true }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: false, hi_closed: false }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi || (self.lo == self.hi && self.lo_closed && self.hi_closed))
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    /// `{1/(λ−λ0) : λ ∈ self}` for an interval not containing `λ0`.
    pub fn reciprocal(&self, lambda0: f64) -> Result<Self> {
        let (a, b) = (self.lo - lambda0, self.hi - lambda0);
        if a <= 0.0 && b >= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "reference point {lambda0} inside [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(Self { lo: 1.0 / b, hi: 1.0 / a, lo_closed: self.hi_closed, hi_closed: self.lo_closed })
    }

    pub fn linspace(&self, count: usize) -> Vec<f64> {
        if count == 1 {
            return vec![0.5 * (self.lo + self.hi)];
        }
        (0..count)
            .map(|k| {
                if k == count - 1 {
                    self.hi
                } else {
                    self.lo + (self.hi - self.lo) * k as f64 / (count - 1) as f64
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct WaveFunction {
    grid: Arc<MomentumGrid>,
    amplitudes: DVector<C64>,
}

impl WaveFunction {
    pub fn new(grid: Arc<MomentumGrid>, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} amplitudes on a grid of {} points",
                amplitudes.len(),
                grid.len()
            )));
        }
        if !amplitudes.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("wave function"));
        }
        Ok(Self { grid, amplitudes })
    }

    pub fn zeros(grid: Arc<MomentumGrid>) -> Self {
        let n = grid.len();
        Self { grid, amplitudes: DVector::zeros(n) }
    }

    pub fn from_fn(grid: Arc<MomentumGrid>, f: impl Fn(&[f64]) -> C64) -> Result<Self> {
        let amps = DVector::from_iterator(grid.len(), (0..grid.len()).map(|k| f(&grid.point(k))));
        Self::new(grid, amps)
    }

    pub fn grid(&self) -> &Arc<MomentumGrid> {
        &self.grid
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        (self.amplitudes.norm_squared() * self.grid.weight()).sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter("cannot normalize the zero state".into()));
        }
        Ok(Self { grid: self.grid.clone(), amplitudes: &self.amplitudes / C64::new(n, 0.0) })
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self { grid: self.grid.clone(), amplitudes: &self.amplitudes * c }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Self { grid: self.grid.clone(), amplitudes: &self.amplitudes + &other.amplitudes })
    }

    pub fn max_abs(&self) -> f64 {
        self.amplitudes.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn boundary_layer_max(&self) -> f64 {
        (0..self.grid.len())
            .filter(|&k| self.grid.is_boundary(k))
            .fold(0.0, |m, k| m.max(self.amplitudes[k].norm()))
    }

    pub fn check_boundary(&self, tol: f64) -> Result<()> {
        let layer_max = self.boundary_layer_max();
        let limit = tol * self.max_abs();
        if layer_max > limit {
            return Err(Error::BoundaryNotVanishing { layer_max, limit });
        }
        Ok(())
    }
}

/// `Δq^s Σ conj(f_k) g_k`.
pub fn inner(f: &WaveFunction, g: &WaveFunction) -> Result<C64> {
    same_grid(&f.grid, &g.grid)?;
    Ok(f.amplitudes.dotc(&g.amplitudes) * f.grid.weight())
}

pub fn derivative(f: &WaveFunction, axis: usize) -> Result<WaveFunction> {
    derivative_with_tol(f, axis, DEFAULT_BOUNDARY_TOL)
}

/// Second-order central difference along `axis`; the two end layers of that
/// axis are set to zero.
pub fn derivative_with_tol(f: &WaveFunction, axis: usize, boundary_tol: f64) -> Result<WaveFunction> {
    let g = &f.grid;
    if axis >= g.dim() {
        return Err(Error::InvalidParameter(format!("axis {axis} on a {}-d grid", g.dim())));
    }
    f.check_boundary(boundary_tol)?;
    let h = g.spacing(axis);
    let stride = g.stride(axis);
    let mut out = DVector::zeros(g.len());
    for k in 0..g.len() {
        let i = g.multi_index(k)[axis];
        if i == 0 || i == g.n() - 1 {
            continue;
        }
        out[k] = (f.amplitudes[k + stride] - f.amplitudes[k - stride]) / C64::new(2.0 * h, 0.0);
    }
    WaveFunction::new(g.clone(), out)
}

#[derive(Clone, Debug)]
pub struct MultiplierOperator {
    grid: Arc<MomentumGrid>,
    samples: Vec<C64>,
}

impl MultiplierOperator {
    pub fn new(grid: Arc<MomentumGrid>, samples: Vec<C64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} samples on {} points", samples.len(), grid.len())));
        }
        if !samples.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("multiplier samples"));
        }
        Ok(Self { grid, samples })
    }

    pub fn from_real(grid: Arc<MomentumGrid>, samples: &[f64]) -> Result<Self> {
        Self::new(grid, linalg::real_diag(samples))
    }

    pub fn from_fn(grid: Arc<MomentumGrid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let s: Vec<f64> = (0..grid.len()).map(|k| f(&grid.point(k))).collect();
        Self::from_real(grid, &s)
    }

    pub fn grid(&self) -> &Arc<MomentumGrid> {
        &self.grid
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn real_samples(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.re).collect()
    }

    pub fn is_real(&self) -> bool {
        self.samples.iter().all(|z| z.im == 0.0)
    }

    pub fn apply(&self, f: &WaveFunction) -> Result<WaveFunction> {
        same_grid(&self.grid, &f.grid)?;
        let amps = DVector::from_iterator(
            self.samples.len(),
            self.samples.iter().zip(f.amplitudes.iter()).map(|(m, a)| m * a),
        );
        WaveFunction::new(self.grid.clone(), amps)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Result<Self> {
        Self::new(self.grid.clone(), self.samples.iter().map(|&z| f(z)).collect())
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        linalg::diag_matrix(&self.samples)
    }

    pub fn norm(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Number of nonzero samples (the rank of a projection).
    pub fn rank(&self) -> usize {
        self.samples.iter().filter(|z| **z != C64::new(0.0, 0.0)).count()
    }
}

#[derive(Clone, Debug)]
pub struct HermitianOperator {
    grid: Arc<MomentumGrid>,
    matrix: DMatrix<C64>,
}

impl HermitianOperator {
    pub fn new(grid: Arc<MomentumGrid>, matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != grid.len() || matrix.ncols() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{}x{} matrix on {} points",
                matrix.nrows(),
                matrix.ncols(),
                grid.len()
            )));
        }
        if !linalg::all_finite(&matrix) {
            return Err(Error::NonFinite("Hermitian operator"));
        }
        let tol = HERMITICITY_TOL * linalg::max_abs_entry(&matrix);
        let residual = linalg::hermiticity_residual(&matrix);
        if residual > tol {
            return Err(Error::NotHermitian { residual, tol });
        }
        Ok(Self { grid, matrix })
    }

    pub fn zeros(grid: Arc<MomentumGrid>) -> Self {
        let n = grid.len();
        Self { grid, matrix: DMatrix::zeros(n, n) }
    }

    pub fn identity(grid: Arc<MomentumGrid>) -> Self {
        let n = grid.len();
        Self { grid, matrix: DMatrix::identity(n, n) }
    }

    pub fn from_multiplier(m: &MultiplierOperator) -> Result<Self> {
        if !m.is_real() {
            return Err(Error::InvalidParameter("complex multiplier is not Hermitian".into()));
        }
        Ok(Self { grid: m.grid.clone(), matrix: m.to_dense() })
    }

    pub fn grid(&self) -> &Arc<MomentumGrid> {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn apply(&self, f: &WaveFunction) -> Result<WaveFunction> {
        same_grid(&self.grid, &f.grid)?;
        WaveFunction::new(self.grid.clone(), &self.matrix * &f.amplitudes)
    }

    pub fn norm(&self) -> Result<f64> {
        linalg::hermitian_norm(&self.matrix)
    }

    pub fn eigen(&self) -> Result<Spectral> {
        linalg::hermitian_eigen(&self.matrix)
    }

    pub fn function(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let sp = self.eigen()?;
        Ok(Self { grid: self.grid.clone(), matrix: sp.function(f) })
    }
}

/// Largest singular value of a dense matrix.
pub fn operator_norm(m: &DMatrix<C64>) -> Result<f64> {
    linalg::operator_norm(m)
}

/// `⟨M⟩^{−ν} = (1+M²)^{−ν/2}`.
pub fn bracket_power(m: &HermitianOperator, nu: f64) -> Result<HermitianOperator> {
    if !(nu >= 0.0) {
        return Err(Error::InvalidParameter(format!("bracket exponent ν = {nu} < 0")));
    }
    if nu == 0.0 {
        return Ok(HermitianOperator::identity(m.grid.clone()));
    }
    m.function(|x| (1.0 + x * x).powf(-0.5 * nu))
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub projector: MultiplierOperator,
    pub selected: usize,
}

impl Projection {
    pub fn is_zero(&self) -> bool {
        self.selected == 0
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.projector.samples.len()).filter(|&k| self.projector.samples[k].re == 1.0).collect()
    }
}

/// Indicator of `{q : Re m(q) ∈ window}`.
pub fn spectral_projection(m: &MultiplierOperator, window: Interval) -> Result<Projection> {
    if window.is_empty() {
        return Err(Error::EmptyWindow(format!("[{}, {}]", window.lo, window.hi)));
    }
    let samples: Vec<C64> = m
        .samples
        .iter()
        .map(|z| if window.contains(z.re) { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
        .collect();
    let selected = samples.iter().filter(|z| z.re == 1.0).count();
    Ok(Projection { projector: MultiplierOperator { grid: m.grid.clone(), samples }, selected })
}

/// Position operator `u_axis = i ∂/∂q_axis` as the Hermitian central-difference stencil.
pub fn position_operator(grid: &Arc<MomentumGrid>, axis: usize) -> HermitianOperator {
    let n = grid.len();
    let h = grid.spacing(axis);
    let stride = grid.stride(axis);
    let c = C64::new(0.0, 1.0 / (2.0 * h));
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        if grid.multi_index(k)[axis] + 1 < grid.n() {
            m[(k, k + stride)] = c;
            m[(k + stride, k)] = -c;
        }
    }
    HermitianOperator { grid: grid.clone(), matrix: m }
}

fn write_header<W: Write>(grid: &MomentumGrid, kind: &str, columns: &[String], w: &mut W) -> Result<()> {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    writeln!(w, "# mourrekit {kind}")?;
    writeln!(w, "# dim {}", grid.dim())?;
    writeln!(w, "# n {}", grid.n())?;
    writeln!(w, "# lower {}", join(&grid.lower))?;
    writeln!(w, "# upper {}", join(&grid.upper))?;
    writeln!(w, "# columns {}", columns.join(" "))?;
    Ok(())
}

fn q_columns(dim: usize) -> Vec<String> {
    (1..=dim).map(|a| format!("q{a}")).collect()
}

/// Column-format snapshot: `index q1 .. qs re im`, one line per grid point.
pub fn write_snapshot<W: Write>(f: &WaveFunction, w: &mut W) -> Result<()> {
    let g = &f.grid;
    let mut cols = vec!["index".to_string()];
    cols.extend(q_columns(g.dim()));
    cols.extend(["re".to_string(), "im".to_string()]);
    write_header(g, "state", &cols, w)?;
    for k in 0..g.len() {
        let mut line = k.to_string();
        for q in g.point(k) {
            line.push_str(&format!(" {q:e}"));
        }
        let z = f.amplitudes[k];
        line.push_str(&format!(" {:e} {:e}", z.re, z.im));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Real fields on the grid in column format: `index q1 .. qs name1 name2 ..`.
pub fn write_fields<W: Write>(grid: &MomentumGrid, names: &[&str], fields: &[&[f64]], w: &mut W) -> Result<()> {
    if names.len() != fields.len() || fields.iter().any(|f| f.len() != grid.len()) {
        return Err(Error::GridMismatch("field columns".into()));
    }
    let mut cols = vec!["index".to_string()];
    cols.extend(q_columns(grid.dim()));
    cols.extend(names.iter().map(|s| s.to_string()));
    write_header(grid, "fields", &cols, w)?;
    for k in 0..grid.len() {
        let mut line = k.to_string();
        for q in grid.point(k) {
            line.push_str(&format!(" {q:e}"));
        }
        for f in fields {
            line.push_str(&format!(" {:e}", f[k]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Nonzero matrix entries in column format: `row col re im`.
pub fn write_matrix<W: Write>(op: &HermitianOperator, w: &mut W) -> Result<()> {
    let cols = ["row", "col", "re", "im"].map(String::from);
    write_header(&op.grid, "matrix", &cols, w)?;
    let m = &op.matrix;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            if z != C64::new(0.0, 0.0) {
                writeln!(w, "{i} {j} {:e} {:e}", z.re, z.im)?;
            }
        }
    }
    Ok(())
}

fn header_value<'a>(lines: &'a [String], key: &str) -> Result<&'a str> {
    let prefix = format!("# {key} ");
    lines
        .iter()
        .find_map(|l| l.strip_prefix(&prefix))
        .ok_or_else(|| Error::Parse(format!("missing header `{key}`")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")))
}

pub fn read_snapshot<R: BufRead>(r: R) -> Result<WaveFunction> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.starts_with('#') {
            header.push(line);
        } else if !line.trim().is_empty() {
            rows.push(line);
        }
    }
    let dim: usize = header_value(&header, "dim")?.trim().parse().map_err(|_| Error::Parse("dim".into()))?;
    let n: usize = header_value(&header, "n")?.trim().parse().map_err(|_| Error::Parse("n".into()))?;
    let lower = header_value(&header, "lower")?.split_whitespace().map(parse_f64).collect::<Result<Vec<_>>>()?;
    let upper = header_value(&header, "upper")?.split_whitespace().map(parse_f64).collect::<Result<Vec<_>>>()?;
    if lower.len() != dim {
        return Err(Error::Parse("bounds do not match dim".into()));
    }
    let grid = Arc::new(MomentumGrid::with_budget(lower, upper, n, usize::MAX)?);
    if rows.len() != grid.len() {
        return Err(Error::Parse(format!("{} rows for {} points", rows.len(), grid.len())));
    }
    let mut amps = DVector::zeros(grid.len());
    for row in &rows {
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != dim + 3 {
            return Err(Error::Parse(format!("row `{row}`")));
        }
        let k: usize = fields[0].parse().map_err(|_| Error::Parse(format!("index in `{row}`")))?;
        if k >= grid.len() {
            return Err(Error::Parse(format!("index {k} out of range")));
        }
        amps[k] = C64::new(parse_f64(fields[dim + 1])?, parse_f64(fields[dim + 2])?);
    }
    WaveFunction::new(grid, amps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid1(n: usize) -> Arc<MomentumGrid> {
        Arc::new(MomentumGrid::symmetric(1, 4.0, n, DEFAULT_BUDGET).unwrap())
    }

    #[test]
    fn grid_invariants() {
        assert!(MomentumGrid::new(vec![0.0], vec![1.0], 3).is_err());
        assert!(matches!(
            MomentumGrid::new(vec![0.0; 2], vec![1.0; 2], 65),
            Err(Error::BudgetExceeded { points: 4225, cap: 4096 })
        ));
        let g = MomentumGrid::new(vec![0.0, -1.0], vec![1.0, 1.0], 5).unwrap();
        assert_eq!(g.len(), 25);
        assert_relative_eq!(g.weight(), 0.25 * 0.5);
        assert_eq!(g.point(7), vec![0.25, 0.0]);
        assert_eq!(g.flat_index(&g.multi_index(17)), 17);
        assert!(g.is_boundary(4) && !g.is_boundary(6));
    }

    #[test]
    fn one_hot_normalization() {
        let g = grid1(16);
        let mut amps = DVector::zeros(16);
        amps[5] = C64::new(g.weight().powf(-0.5), 0.0);
        let f = WaveFunction::new(g, amps).unwrap();
        assert_relative_eq!(inner(&f, &f).unwrap().re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn inner_rejects_grid_mismatch() {
        let f = WaveFunction::zeros(grid1(8));
        let g = WaveFunction::zeros(grid1(9));
        assert!(matches!(inner(&f, &g), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn derivative_of_sine() {
        let pi = std::f64::consts::PI;
        let err = |n: usize| {
            let g = Arc::new(MomentumGrid::new(vec![-4.0 * pi], vec![4.0 * pi], n).unwrap());
            let f = WaveFunction::from_fn(g.clone(), |q| C64::new(q[0].sin(), 0.0)).unwrap();
            let d = derivative_with_tol(&f, 0, 1e-12).unwrap();
            (1..n - 1).fold(0.0f64, |m, k| m.max((d.amplitudes()[k].re - g.point(k)[0].cos()).abs()))
        };
        let (e1, e2) = (err(201), err(401));
        assert!(e1 < 3e-3);
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn derivative_of_interior_constant_vanishes() {
        let g = grid1(32);
        let f = WaveFunction::from_fn(g.clone(), |q| {
            if q[0].abs() < 3.9 { C64::new(2.0, 0.0) } else { C64::new(0.0, 0.0) }
        })
        .unwrap();
        let d = derivative(&f, 0).unwrap();
        for k in 2..30 {
            assert_eq!(d.amplitudes()[k], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn derivative_names_boundary_violation() {
        let g = grid1(32);
        let f = WaveFunction::from_fn(g, |_| C64::new(1.0, 0.0)).unwrap();
        match derivative(&f, 0) {
            Err(Error::BoundaryNotVanishing { layer_max, .. }) => assert_eq!(layer_max, 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn norms_of_simple_matrices() {
        assert_relative_eq!(operator_norm(&DMatrix::identity(5, 5)).unwrap(), 1.0, epsilon = 1e-14);
        let d = linalg::diag_matrix(&linalg::real_diag(&[1.0, -3.0, 2.0]));
        assert_relative_eq!(operator_norm(&d).unwrap(), 3.0, epsilon = 1e-14);
        assert_relative_eq!(linalg::hermitian_norm(&d).unwrap(), 3.0, epsilon = 1e-14);
        let mut bad = DMatrix::<C64>::identity(2, 2);
        bad[(0, 1)] = C64::new(f64::NAN, 0.0);
        assert!(operator_norm(&bad).is_err());
    }

    #[test]
    fn bracket_power_cases() {
        let g = Arc::new(MomentumGrid::new(vec![0.0], vec![1.0], 4).unwrap());
        let zero = HermitianOperator::zeros(g.clone());
        let b = bracket_power(&zero, 0.7).unwrap();
        assert!((b.matrix() - DMatrix::identity(4, 4)).iter().all(|z| z.norm() < 1e-15));
        let id = HermitianOperator::identity(g.clone());
        let b = bracket_power(&id, 1.0).unwrap();
        assert_relative_eq!(b.matrix()[(2, 2)].re, 1.0 / 2f64.sqrt(), epsilon = 1e-14);
        assert!(bracket_power(&id, -0.1).is_err());
    }

    #[test]
    fn projection_windows() {
        let g = grid1(16);
        let m = MultiplierOperator::from_fn(g, |q| q[0] * q[0]).unwrap();
        let full = spectral_projection(&m, Interval::closed(-1.0, 100.0)).unwrap();
        assert_eq!(full.selected, 16);
        let none = spectral_projection(&m, Interval::closed(-3.0, -1.0)).unwrap();
        assert!(none.is_zero());
        assert!(spectral_projection(&m, Interval::open(1.0, 1.0)).is_err());
    }

    #[test]
    fn snapshot_roundtrip_2d() {
        let g = Arc::new(MomentumGrid::new(vec![-1.0, 0.0], vec![1.0, 2.0], 5).unwrap());
        let f = WaveFunction::from_fn(g, |q| C64::new(q[0].exp(), q[1] / 3.0)).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&f, &mut buf).unwrap();
        let back = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back.grid().as_ref(), f.grid().as_ref());
        assert_eq!(back.amplitudes(), f.amplitudes());
    }

    #[test]
    fn position_operator_is_hermitian() {
        let g = Arc::new(MomentumGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 6).unwrap());
        for axis in 0..2 {
            let u = position_operator(&g, axis);
            assert_eq!(linalg::hermiticity_residual(u.matrix()), 0.0);
            assert!(HermitianOperator::new(g.clone(), u.matrix().clone()).is_ok());
        }
    }

    fn random_state(seed: &[f64], g: &Arc<MomentumGrid>) -> WaveFunction {
        let amps = DVector::from_iterator(g.len(), (0..g.len()).map(|k| C64::new(seed[2 * k], seed[2 * k + 1])));
        WaveFunction::new(g.clone(), amps).unwrap()
    }

    proptest! {
        #[test]
        fn inner_is_hermitian_sesquilinear(a in prop::collection::vec(-1.0f64..1.0, 16),
                                           b in prop::collection::vec(-1.0f64..1.0, 16),
                                           cr in -2.0f64..2.0, ci in -2.0f64..2.0) {
            let g = grid1(8);
            let (f, h) = (random_state(&a, &g), random_state(&b, &g));
            let c = C64::new(cr, ci);
            let fh = inner(&f, &h).unwrap();
            let hf = inner(&h, &f).unwrap();
            prop_assert!((fh - hf.conj()).norm() < 1e-13);
            let lhs = inner(&f.scaled(c), &h).unwrap();
            prop_assert!((lhs - c.conj() * fh).norm() < 1e-12);
            let ff = inner(&f, &f).unwrap();
            prop_assert!(ff.re >= 0.0 && ff.im.abs() < 1e-15);
        }

        #[test]
        fn derivative_is_linear(a in prop::collection::vec(-1.0f64..1.0, 32),
                                b in prop::collection::vec(-1.0f64..1.0, 32)) {
            let g = grid1(16);
            let zero_edges = |v: &[f64]| {
                let mut v = v.to_vec();
                for k in [0, 1, 30, 31] { v[k] = 0.0; }
                random_state(&v, &g)
            };
            let (f, h) = (zero_edges(&a), zero_edges(&b));
            let lhs = derivative(&f.add(&h).unwrap(), 0).unwrap();
            let rhs = derivative(&f, 0).unwrap().add(&derivative(&h, 0).unwrap()).unwrap();
            for k in 0..16 {
                prop_assert!((lhs.amplitudes()[k] - rhs.amplitudes()[k]).norm() <= 1e-15);
            }
        }

        #[test]
        fn bracket_powers_compose(entries in prop::collection::vec(-2.0f64..2.0, 72),
                                  nu1 in 0.0f64..1.5, nu2 in 0.0f64..1.5) {
            let g = Arc::new(MomentumGrid::new(vec![0.0], vec![1.0], 6).unwrap());
            let raw = DMatrix::from_fn(6, 6, |i, j| C64::new(entries[6 * i + j], entries[36 + 6 * i + j]));
            let m = HermitianOperator::new(g, (&raw + raw.adjoint()) * C64::new(0.5, 0.0)).unwrap();
            let p1 = bracket_power(&m, nu1).unwrap();
            let p2 = bracket_power(&m, nu2).unwrap();
            let p12 = bracket_power(&m, nu1 + nu2).unwrap();
            let diff = p1.matrix() * p2.matrix() - p12.matrix();
            prop_assert!(operator_norm(&diff).unwrap() < 1e-10);
            prop_assert!(p12.norm().unwrap() <= 1.0 + 1e-12);
        }

        #[test]
        fn projection_idempotent_and_commuting(lo in -1.0f64..10.0, w in 0.1f64..10.0) {
            let g = grid1(32);
            let m = MultiplierOperator::from_fn(g, |q| q[0] * q[0] - q[0]).unwrap();
            let p = spectral_projection(&m, Interval::closed(lo, lo + w)).unwrap().projector;
            let pp = p.map(|z| z * z).unwrap();
            prop_assert_eq!(pp.samples(), p.samples());
            prop_assert!(p.samples().iter().all(|z| z.im == 0.0 && (z.re == 0.0 || z.re == 1.0)));
            let dm = p.to_dense();
            let hm = m.to_dense();
            prop_assert_eq!(&dm * &hm, &hm * &dm);
        }
    }
}
