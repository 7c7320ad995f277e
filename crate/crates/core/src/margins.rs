//! Per-cell marginal extreme-value model: empirical distribution below a high
//! threshold, generalised Pareto tail above it, and the transforms between the
//! observed scale and unit-exponential margins.

use alloc::vec::Vec;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{CellMask, Grid, GriddedFieldStack, ScaleTag};

/// Exp(1) value assigned to observations beyond a finite fitted endpoint.
pub const EXP1_CAP: f64 = 20.0;
pub const DEFAULT_QUANTILE: f64 = 0.98;
pub const DEFAULT_MIN_EXCEEDANCES: usize = 30;

const XI_MIN: f64 = -0.95;
const XI_MAX: f64 = 1.0;
const XI_ZERO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub sigma: f64,
    pub xi: f64,
    /// Threshold `u`.
    pub u: f64,
    /// Exceedance probability of `u`.
    pub lambda: f64,
    pub n_exceed: usize,
}

impl GpdFit {
    /// Upper endpoint of the excess distribution (infinite when `ξ ≥ 0`).
    pub fn excess_endpoint(&self) -> f64 {
        if self.xi < -XI_ZERO {
            -self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }
}

/// Survival function of the generalised Pareto distribution at excess `x ≥ 0`.
pub fn gpd_survival(sigma: f64, xi: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if xi.abs() < XI_ZERO {
        return (-x / sigma).exp();
    }
    let base = 1.0 + xi * x / sigma;
    if base <= 0.0 {
        return 0.0;
    }
    (-base.ln() / xi).exp()
}

/// Excess `x` with `gpd_survival(sigma, xi, x) = s` for `s ∈ [0, 1]`.
pub fn gpd_inverse_survival(sigma: f64, xi: f64, s: f64) -> f64 {
    if s >= 1.0 {
        return 0.0;
    }
    if xi.abs() < XI_ZERO {
        return if s <= 0.0 { f64::INFINITY } else { -sigma * s.ln() };
    }
    if s <= 0.0 {
        return if xi < 0.0 { -sigma / xi } else { f64::INFINITY };
    }
    sigma * ((-xi * s.ln()).exp() - 1.0) / xi
}

/// Log-likelihood of excesses under GPD(σ, ξ); `-∞` outside the support.
pub fn gpd_log_likelihood(excesses: &[f64], sigma: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = excesses.len() as f64;
    if xi.abs() < XI_ZERO {
        let s: f64 = excesses.iter().sum();
        return -n * sigma.ln() - s / sigma;
    }
    let mut acc = 0.0;
    for &x in excesses {
        let y = xi * x / sigma;
        if y <= -1.0 {
            return f64::NEG_INFINITY;
        }
        acc += y.ln_1p();
    }
    -n * sigma.ln() - (1.0 + 1.0 / xi) * acc
}

/// Maximum-likelihood σ for fixed ξ (Newton on log σ inside a bisection bracket).
fn profile_sigma(x: &[f64], xi: f64, x_max: f64, mean: f64) -> f64 {
    if xi.abs() < XI_ZERO {
        return mean;
    }
    let n = x.len() as f64;
    let c = 1.0 + 1.0 / xi;
    // score and its derivative with respect to s = log σ
    let score = |s: f64| -> (f64, f64) {
        let sigma = s.exp();
        let (mut g, mut h) = (0.0, 0.0);
        for &xi_x in x {
            let y = xi * xi_x / sigma;
            let r = y / (1.0 + y);
            g += r;
            h += r / (1.0 + y);
        }
        (-n + c * g, -c * h)
    };
    let mut lo = if xi < 0.0 {
        (-xi * x_max).ln() + 1e-12
    } else {
        (mean * 1e-8).ln()
    };
    let mut hi = mean.ln().max(lo + 1.0);
    while score(hi).0 > 0.0 {
        lo = hi;
        hi += 2.0;
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g, h) = score(s);
        if g > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = if h < 0.0 { s - g / h } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - s).abs() < 1e-13 * (1.0 + s.abs()) || hi - lo < 1e-14 {
            s = next;
            break;
        }
        s = next;
    }
    s.exp()
}

/// Maximum-likelihood GPD fit to positive excesses, returning `(σ̂, ξ̂)`.
///
/// ξ is profiled over `[-0.95, 1]`: a coarse grid locates candidate maxima,
/// each of which is refined by golden-section search.
pub fn fit_gpd(excesses: &[f64], min_exceedances: usize) -> Result<(f64, f64)> {
    if excesses.len() < min_exceedances.max(2) {
        return Err(Error::TooFewExceedances { got: excesses.len(), need: min_exceedances.max(2) });
    }
    if excesses.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(invalid("excesses must be positive and finite"));
    }
    let n = excesses.len() as f64;
    let mean = excesses.iter().sum::<f64>() / n;
    let var = excesses.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 1e-12 * mean * mean) {
        return Err(Error::Degenerate("excesses have zero variance".into()));
    }
    let x_max = excesses.iter().cloned().fold(0.0, f64::max);
    let profile = |xi: f64| -> (f64, f64) {
        let sigma = profile_sigma(excesses, xi, x_max, mean);
        (gpd_log_likelihood(excesses, sigma, xi), sigma)
    };

    const GRID: usize = 40;
    let xs: Vec<f64> = (0..=GRID).map(|i| XI_MIN + (XI_MAX - XI_MIN) * i as f64 / GRID as f64).collect();
    let ls: Vec<f64> = xs.iter().map(|&xi| profile(xi).0).collect();
    let mut peaks: Vec<usize> = (0..=GRID)
        .filter(|&i| (i == 0 || ls[i] >= ls[i - 1]) && (i == GRID || ls[i] >= ls[i + 1]))
        .filter(|&i| ls[i].is_finite())
        .collect();
    if peaks.is_empty() {
        return Err(Error::NoConvergence("profile likelihood is not finite on the shape grid".into()));
    }
    peaks.sort_by(|&a, &b| ls[b].partial_cmp(&ls[a]).unwrap_or(core::cmp::Ordering::Equal));
    peaks.truncate(3);

    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for &i in &peaks {
        let mut a = xs[i.saturating_sub(1)];
        let mut b = xs[(i + 1).min(GRID)];
        let mut c = b - golden * (b - a);
        let mut d = a + golden * (b - a);
        let mut fc = profile(c).0;
        let mut fd = profile(d).0;
        let mut iter = 0;
        while b - a > 1e-7 && iter < 200 {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - golden * (b - a);
                fc = profile(c).0;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + golden * (b - a);
                fd = profile(d).0;
            }
            iter += 1;
        }
        for xi in [0.5 * (a + b), xs[i]] {
            let (l, sigma) = profile(xi);
            if l > best.0 {
                best = (l, sigma, xi);
            }
        }
    }
    if !best.0.is_finite() || !(best.1 > 0.0) {
        return Err(Error::NoConvergence("GPD likelihood maximisation failed".into()));
    }
    Ok((best.1, best.2))
}

/// Type-7 (linear interpolation) empirical quantile of a sorted sample.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Marginal model of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMarginal {
    pub fit: GpdFit,
    /// Total sample size used for fitting.
    pub n: usize,
    /// Sorted sample values not exceeding the threshold.
    pub below: Vec<f32>,
}

impl CellMarginal {
    /// Fit a cell from its full sample of observed values.
    pub fn fit(values: &[f64], quantile: f64, min_exceedances: usize) -> Result<Self> {
        if !(quantile > 0.0 && quantile < 1.0) {
            return Err(invalid("threshold quantile must lie in (0, 1)"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("cell sample contains non-finite values"));
        }
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        if n < 3 {
            return Err(Error::InsufficientData("cell sample too small".into()));
        }
        let u = empirical_quantile(&sorted, quantile);
        let split = sorted.partition_point(|&v| v <= u);
        let excesses: Vec<f64> = sorted[split..].iter().map(|v| v - u).collect();
        let (sigma, xi) = fit_gpd(&excesses, min_exceedances)?;
        let fit = GpdFit { sigma, xi, u, lambda: excesses.len() as f64 / n as f64, n_exceed: excesses.len() };
        let below = sorted[..split].iter().map(|&v| v as f32).collect();
        Ok(Self { fit, n, below })
    }

    fn value(&self, i: usize) -> f64 {
        self.below[i] as f64
    }

    /// Cumulative probability attached to the order statistic at index `i`
    /// (ties share the probability of their last occurrence).
    fn knot_p(&self, i: usize) -> f64 {
        let v = self.below[i];
        if v == self.below[0] {
            return 0.0;
        }
        if v as f64 >= self.fit.u {
            return 1.0 - self.fit.lambda;
        }
        let rank = self.below.partition_point(|&w| w <= v);
        rank as f64 / (self.n as f64 + 1.0)
    }

    /// Distribution function on the observed scale.
    pub fn cdf(&self, x: f64) -> f64 {
        let u = self.fit.u;
        if x > u {
            return 1.0 - self.fit.lambda * gpd_survival(self.fit.sigma, self.fit.xi, x - u);
        }
        let m = self.below.len();
        if m == 0 || x >= u {
            return 1.0 - self.fit.lambda;
        }
        if x <= self.value(0) {
            return 0.0;
        }
        let j = self.below.partition_point(|&w| (w as f64) <= x);
        let (xa, pa) = (self.value(j - 1), self.knot_p(j - 1));
        let (xb, pb) = if j < m && self.value(j) < u {
            (self.value(j), self.knot_p(j))
        } else {
            (u, 1.0 - self.fit.lambda)
        };
        if xb <= xa {
            return pb;
        }
        pa + (pb - pa) * (x - xa) / (xb - xa)
    }

    /// Observed value at unit-exponential value `e`; returns `(value, capped)`
    /// where `capped` flags values beyond a finite fitted endpoint.
    pub fn to_exp(&self, x: f64) -> (f64, bool) {
        let f = &self.fit;
        if x > f.u {
            let s = gpd_survival(f.sigma, f.xi, x - f.u);
            if s <= 0.0 {
                return (EXP1_CAP, true);
            }
            let e = -(f.lambda * s).ln();
            return if e > EXP1_CAP { (EXP1_CAP, true) } else { (e, false) };
        }
        let p = self.cdf(x);
        (-(-p).ln_1p(), false)
    }

    /// Inverse of [`Self::to_exp`]: observed value with unit-exponential value `e`.
    pub fn from_exp(&self, e: f64) -> f64 {
        let f = &self.fit;
        let e = e.max(0.0);
        if e > -f.lambda.ln() {
            let s = (-e).exp() / f.lambda;
            return f.u + gpd_inverse_survival(f.sigma, f.xi, s);
        }
        self.quantile_below(-(-e).exp_m1())
    }

    fn quantile_below(&self, p: f64) -> f64 {
        let m = self.below.len();
        let top = 1.0 - self.fit.lambda;
        if m == 0 {
            return self.fit.u;
        }
        if p <= 0.0 {
            return self.value(0);
        }
        if p >= top {
            return self.fit.u;
        }
        // first order statistic whose knot probability reaches p
        let (mut lo, mut hi) = (0usize, m);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.knot_p(mid) >= p {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let (xa, pa, xb, pb) = if lo == m || self.value(lo) >= self.fit.u {
            (self.value(m - 1), self.knot_p(m - 1), self.fit.u, top)
        } else if lo == 0 {
            return self.value(0);
        } else {
            (self.value(lo - 1), self.knot_p(lo - 1), self.value(lo), self.knot_p(lo))
        };
        if pb <= pa {
            return xb;
        }
        xa + (xb - xa) * (p - pa) / (pb - pa)
    }

    /// Observed-scale upper endpoint of the cell distribution.
    pub fn upper_endpoint(&self) -> f64 {
        self.fit.u + self.fit.excess_endpoint()
    }
}

/// Per-cell marginal models over a grid; masked cells carry no model.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalModel {
    pub grid: Grid,
    pub quantile: f64,
    pub cells: Vec<Option<CellMarginal>>,
}

/// Counts reported by stack transforms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransformReport {
    /// Values mapped to the Exp(1) cap because they exceeded a finite endpoint.
    pub capped: usize,
}

impl MarginalModel {
    pub fn new(grid: Grid, quantile: f64, cells: Vec<Option<CellMarginal>>) -> Result<Self> {
        if cells.len() != grid.len() {
            return Err(invalid("cell model count does not match grid"));
        }
        Ok(Self { grid, quantile, cells })
    }

    pub fn cell(&self, idx: usize) -> Result<&CellMarginal> {
        self.cells[idx].as_ref().ok_or_else(|| {
            let (x, y) = self.grid.coords(idx);
            Error::MaskedCell { x, y }
        })
    }

    pub fn to_exp(&self, idx: usize, x: f64) -> Result<f64> {
        Ok(self.cell(idx)?.to_exp(x).0)
    }

    pub fn from_exp(&self, idx: usize, e: f64) -> Result<f64> {
        Ok(self.cell(idx)?.from_exp(e))
    }

    /// Transform an observed stack onto Exp(1) margins. Masked cells are set to 0.
    pub fn to_exp_margins(&self, stack: &GriddedFieldStack) -> Result<(GriddedFieldStack, TransformReport)> {
        self.check(stack, ScaleTag::Observed)?;
        let mut out = stack.clone().with_scale(ScaleTag::Exp1);
        let mut report = TransformReport::default();
        let n = self.grid.len();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = match &self.cells[k % n] {
                Some(c) => {
                    let (e, capped) = c.to_exp(*v as f64);
                    report.capped += capped as usize;
                    e as f32
                }
                None => 0.0,
            };
        }
        Ok((out, report))
    }

    /// Transform an Exp(1) stack back to observed margins. Masked cells and
    /// non-finite (missing) values are passed through unchanged.
    pub fn from_exp_margins(&self, stack: &GriddedFieldStack) -> Result<GriddedFieldStack> {
        self.check(stack, ScaleTag::Exp1)?;
        let mut out = stack.clone().with_scale(ScaleTag::Observed);
        let n = self.grid.len();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            if let (Some(c), true) = (&self.cells[k % n], v.is_finite()) {
                *v = c.from_exp(*v as f64) as f32;
            }
        }
        Ok(out)
    }

    fn check(&self, stack: &GriddedFieldStack, scale: ScaleTag) -> Result<()> {
        if stack.grid.n_x != self.grid.n_x || stack.grid.n_y != self.grid.n_y {
            return Err(invalid("stack grid does not match marginal model grid"));
        }
        if stack.scale != scale {
            return Err(invalid("stack is on the wrong scale for this transform"));
        }
        Ok(())
    }
}

/// Gather each cell's values across a set of observed stacks on one grid.
pub fn gather_cell_samples(stacks: &[GriddedFieldStack]) -> Result<Vec<Vec<f32>>> {
    let grid = stacks.first().ok_or_else(|| invalid("no field stacks given"))?.grid;
    let total: usize = stacks.iter().map(|s| s.n_t()).sum();
    let mut out: Vec<Vec<f32>> = (0..grid.len()).map(|_| Vec::with_capacity(total)).collect();
    for s in stacks {
        if s.grid.n_x != grid.n_x || s.grid.n_y != grid.n_y {
            return Err(invalid("field stacks have different grids"));
        }
        if s.scale != ScaleTag::Observed {
            return Err(invalid("marginal fitting requires observed-scale stacks"));
        }
        for t in 0..s.n_t() {
            for (cell, v) in s.raster(t).iter().enumerate() {
                out[cell].push(*v);
            }
        }
    }
    Ok(out)
}

/// Fit the marginal model cell by cell (serially).
pub fn fit_marginal_model(
    stacks: &[GriddedFieldStack],
    mask: &CellMask,
    quantile: f64,
    min_exceedances: usize,
) -> Result<MarginalModel> {
    let samples = gather_cell_samples(stacks)?;
    let grid = stacks[0].grid;
    let mut cells = Vec::with_capacity(grid.len());
    for (idx, s) in samples.iter().enumerate() {
        cells.push(fit_cell(grid, mask, idx, s, quantile, min_exceedances)?);
    }
    MarginalModel::new(grid, quantile, cells)
}

/// Fit one cell, honouring the mask and annotating errors with the cell.
pub fn fit_cell(
    grid: Grid,
    mask: &CellMask,
    idx: usize,
    sample: &[f32],
    quantile: f64,
    min_exceedances: usize,
) -> Result<Option<CellMarginal>> {
    if !mask.is_included(idx) {
        return Ok(None);
    }
    let values: Vec<f64> = sample.iter().map(|&v| v as f64).collect();
    let (x, y) = grid.coords(idx);
    CellMarginal::fit(&values, quantile, min_exceedances).map(Some).map_err(|e| e.at_cell(x, y))
}
