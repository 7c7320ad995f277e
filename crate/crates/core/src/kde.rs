//! Multivariate Gaussian kernel density estimation with conditional sampling.
//!
//! Given a bandwidth matrix `H`, conditioning on a subset of coordinates
//! yields a Gaussian mixture over the remaining ones: component `i` has
//! weight proportional to the kernel of the conditioning block evaluated at
//! the observation, mean `z_m(i) + H_{m,c} H_{c,c}⁻¹ (z_c − z_c(i))` and the
//! common covariance `H_{m,m} − H_{m,c} H_{c,c}⁻¹ H_{c,m}`.
//!
//! Circular coordinates carry a period; differences along them are wrapped
//! into half a period either side of zero and sampled values are wrapped back.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::DMatrix;
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Bandwidth selection options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    /// Multiplier on the rule-of-thumb bandwidth (applied squared to `H`).
    pub factor: f64,
    /// Use only the diagonal of the sample covariance.
    pub diagonal: bool,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Self { factor: 1.0, diagonal: false }
    }
}

/// Wrap `x` into `(-p/2, p/2]` for a period `p > 0`; identity when `p == 0`.
#[inline]
pub fn wrap_period(x: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return x;
    }
    let h = 0.5 * p;
    let mut r = x % p;
    if r > h {
        r -= p;
    } else if r <= -h {
        r += p;
    }
    r
}

fn circular_mean(col: impl Iterator<Item = f64>, p: f64) -> f64 {
    let k = 2.0 * PI / p;
    let (mut s, mut c) = (0.0, 0.0);
    for v in col {
        s += (k * v).sin();
        c += (k * v).cos();
    }
    s.atan2(c) / k
}

/// Sample covariance (divisor `n − 1`) with circular coordinates centred on
/// their circular mean.
pub fn sample_covariance(data: &[f64], d: usize, periods: &[f64]) -> Vec<f64> {
    let n = data.len() / d;
    let mut mean = vec![0.0; d];
    for j in 0..d {
        let col = (0..n).map(|i| data[i * d + j]);
        mean[j] = if periods[j] > 0.0 { circular_mean(col, periods[j]) } else { col.sum::<f64>() / n as f64 };
    }
    let mut cov = vec![0.0; d * d];
    let mut dev = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            dev[j] = wrap_period(data[i * d + j] - mean[j], periods[j]);
        }
        for a in 0..d {
            for b in 0..=a {
                cov[a * d + b] += dev[a] * dev[b];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for a in 0..d {
        for b in 0..=a {
            cov[a * d + b] /= denom;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    cov
}

/// Rule-of-thumb bandwidth `H = factor² · n^(−2/(d+4)) · Σ̂`. A singular
/// covariance receives a ridge of `1e-8·trace(Σ̂)`.
pub fn scott_bandwidth(data: &[f64], d: usize, periods: &[f64], bw: Bandwidth) -> Result<Vec<f64>> {
    if d == 0 || data.len() % d != 0 {
        return Err(invalid("data length must be a multiple of the dimension"));
    }
    let n = data.len() / d;
    if n < 2 {
        return Err(Error::InsufficientData("bandwidth selection needs at least two observations".into()));
    }
    if !(bw.factor > 0.0 && bw.factor.is_finite()) {
        return Err(invalid("bandwidth factor must be positive"));
    }
    let mut cov = sample_covariance(data, d, periods);
    if bw.diagonal {
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    cov[a * d + b] = 0.0;
                }
            }
        }
    }
    if cholesky(&cov, d).is_none() {
        let trace: f64 = (0..d).map(|a| cov[a * d + a]).sum();
        let ridge = if trace > 0.0 { 1e-8 * trace } else { 1e-8 };
        log::warn!("singular sample covariance in bandwidth selection; adding ridge {ridge:e}");
        for a in 0..d {
            cov[a * d + a] += ridge;
        }
    }
    let s = bw.factor * bw.factor * (n as f64).powf(-2.0 / (d as f64 + 4.0));
    cov.iter_mut().for_each(|v| *v *= s);
    Ok(cov)
}

/// Lower Cholesky factor of a row-major symmetric matrix, or `None` if it is
/// not numerically positive definite.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(d, d, a);
    let c = m.cholesky()?;
    let l = c.l();
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for k in 0..=r {
            out[r * d + k] = l[(r, k)];
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(out)
}

/// Solve `L y = b` in place for lower-triangular row-major `L`.
#[inline]
fn forward_solve(l: &[f64], d: usize, b: &mut [f64]) {
    for r in 0..d {
        let mut acc = b[r];
        for k in 0..r {
            acc -= l[r * d + k] * b[k];
        }
        b[r] = acc / l[r * d + r];
    }
}

fn log_det_from_chol(l: &[f64], d: usize) -> f64 {
    (0..d).map(|r| 2.0 * l[r * d + r].ln()).sum()
}

/// Kernel density estimate over `n` observations in `d` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KdeParts", into = "KdeParts")]
pub struct KdeModel {
    n: usize,
    d: usize,
    data: Vec<f64>,
    h: Vec<f64>,
    periods: Vec<f64>,
    chol: Vec<f64>,
    log_norm: f64,
}

/// Serialized form of a [`KdeModel`]; derived quantities are rebuilt on load.
#[derive(Serialize, Deserialize)]
struct KdeParts {
    d: usize,
    data: Vec<f64>,
    bandwidth: Vec<f64>,
    periods: Vec<f64>,
}

impl From<KdeModel> for KdeParts {
    fn from(m: KdeModel) -> Self {
        Self { d: m.d, data: m.data, bandwidth: m.h, periods: m.periods }
    }
}

impl TryFrom<KdeParts> for KdeModel {
    type Error = Error;
    fn try_from(p: KdeParts) -> Result<Self> {
        KdeModel::new(p.data, p.d, p.bandwidth, p.periods)
    }
}

impl KdeModel {
    /// Build from row-major data, a bandwidth matrix and per-dimension periods
    /// (zero for linear coordinates).
    pub fn new(data: Vec<f64>, d: usize, h: Vec<f64>, periods: Vec<f64>) -> Result<Self> {
        if d == 0 || data.is_empty() || data.len() % d != 0 {
            return Err(invalid("KDE needs at least one observation"));
        }
        if h.len() != d * d || periods.len() != d {
            return Err(invalid("bandwidth or period dimensions do not match the data"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("KDE data must be finite"));
        }
        for a in 0..d {
            for b in 0..a {
                if (h[a * d + b] - h[b * d + a]).abs() > 1e-12 * (h[a * d + a] * h[b * d + b]).sqrt() {
                    return Err(invalid("bandwidth matrix must be symmetric"));
                }
            }
        }
        let chol = cholesky(&h, d).ok_or_else(|| Error::NotPositiveDefinite("KDE bandwidth".into()))?;
        let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det_from_chol(&chol, d));
        let mut data = data;
        for (k, v) in data.iter_mut().enumerate() {
            *v = wrap_period(*v, periods[k % d]);
        }
        Ok(Self { n: data.len() / d, d, data, h, periods, chol, log_norm })
    }

    /// Build with a rule-of-thumb bandwidth.
    pub fn fit(data: Vec<f64>, d: usize, periods: Vec<f64>, bw: Bandwidth) -> Result<Self> {
        let h = scott_bandwidth(&data, d, &periods, bw)?;
        Self::new(data, d, h, periods)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.h
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let d = self.d;
        let mut diff = vec![0.0; d];
        let mut logs = Vec::with_capacity(self.n);
        for i in 0..self.n {
            for j in 0..d {
                diff[j] = wrap_period(z[j] - self.data[i * d + j], self.periods[j]);
            }
            forward_solve(&self.chol, d, &mut diff);
            logs.push(-0.5 * diff.iter().map(|v| v * v).sum::<f64>());
        }
        log_sum_exp(&logs) - (self.n as f64).ln() + self.log_norm
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        self.log_density(z).exp()
    }

    /// Draw one observation from the full density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let i = rng.random_range(0..self.n);
        let d = self.d;
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d)
            .map(|r| {
                let noise: f64 = (0..=r).map(|k| self.chol[r * d + k] * eps[k]).sum();
                wrap_period(self.data[i * d + r] + noise, self.periods[r])
            })
            .collect()
    }

    /// Precompute the conditional density given coordinates `cond_dims`.
    pub fn conditional(&self, cond_dims: &[usize]) -> Result<ConditionalKde> {
        ConditionalKde::new(self, cond_dims)
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mixture weights for one conditioning value.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub rows: Vec<usize>,
    pub weights: Vec<f64>,
    cumulative: Vec<f64>,
    /// The conditioning point was so far from every observation that the
    /// kernel weights underflowed; the nearest observation dominates.
    pub underflow: bool,
}

impl Mixture {
    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.rows.len() - 1);
        self.rows[k]
    }
}

/// Conditional kernel density of the free coordinates given the others.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalKde {
    n: usize,
    free_dims: Vec<usize>,
    cond_dims: Vec<usize>,
    xf: Vec<f64>,
    xc: Vec<f64>,
    pf: Vec<f64>,
    pc: Vec<f64>,
    chol_cc: Vec<f64>,
    gain: Vec<f64>,
    chol_bar: Vec<f64>,
    log_norm_bar: f64,
}

impl ConditionalKde {
    fn new(model: &KdeModel, cond_dims: &[usize]) -> Result<Self> {
        let d = model.d;
        if cond_dims.iter().any(|&c| c >= d) {
            return Err(invalid("conditioning dimension out of range"));
        }
        let mut seen = vec![false; d];
        for &c in cond_dims {
            if seen[c] {
                return Err(invalid("repeated conditioning dimension"));
            }
            seen[c] = true;
        }
        let free_dims: Vec<usize> = (0..d).filter(|j| !seen[*j]).collect();
        if free_dims.is_empty() {
            return Err(invalid("at least one coordinate must remain free"));
        }
        let (f, c) = (free_dims.len(), cond_dims.len());
        let h = |a: usize, b: usize| model.h[a * d + b];
        let sub = |ra: &[usize], rb: &[usize]| DMatrix::from_fn(ra.len(), rb.len(), |i, j| h(ra[i], rb[j]));
        let h_ff = sub(&free_dims, &free_dims);
        let (gain_m, bar) = if c == 0 {
            (DMatrix::zeros(f, 0), h_ff)
        } else {
            let h_cc = sub(cond_dims, cond_dims);
            let h_fc = sub(&free_dims, cond_dims);
            let chol = h_cc.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("conditioning block".into()))?;
            // gain = H_fc H_cc⁻¹ = (H_cc⁻¹ H_cf)ᵀ
            let gain = chol.solve(&h_fc.transpose()).transpose();
            let bar = &h_ff - &gain * h_fc.transpose();
            let bar = (&bar + bar.transpose()) * 0.5;
            (gain, bar)
        };
        let flat = |m: &DMatrix<f64>| {
            let mut v = vec![0.0; m.nrows() * m.ncols()];
            for r in 0..m.nrows() {
                for k in 0..m.ncols() {
                    v[r * m.ncols() + k] = m[(r, k)];
                }
            }
            v
        };
        let chol_bar = cholesky(&flat(&bar), f).ok_or_else(|| Error::NotPositiveDefinite("conditional covariance".into()))?;
        let chol_cc = if c == 0 {
            Vec::new()
        } else {
            cholesky(&flat(&sub(cond_dims, cond_dims)), c).ok_or_else(|| Error::NotPositiveDefinite("conditioning block".into()))?
        };
        let log_norm_bar = -0.5 * (f as f64 * (2.0 * PI).ln() + log_det_from_chol(&chol_bar, f));
        let mut xf = Vec::with_capacity(model.n * f);
        let mut xc = Vec::with_capacity(model.n * c);
        for i in 0..model.n {
            let row = model.row(i);
            xf.extend(free_dims.iter().map(|&j| row[j]));
            xc.extend(cond_dims.iter().map(|&j| row[j]));
        }
        Ok(Self {
            n: model.n,
            pf: free_dims.iter().map(|&j| model.periods[j]).collect(),
            pc: cond_dims.iter().map(|&j| model.periods[j]).collect(),
            free_dims,
            cond_dims: cond_dims.to_vec(),
            xf,
            xc,
            chol_cc,
            gain: flat(&gain_m),
            chol_bar,
            log_norm_bar,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn free_dims(&self) -> &[usize] {
        &self.free_dims
    }

    pub fn cond_dims(&self) -> &[usize] {
        &self.cond_dims
    }

    /// Conditioning coordinates of observation `i`.
    pub fn cond_row(&self, i: usize) -> &[f64] {
        let c = self.cond_dims.len();
        &self.xc[i * c..(i + 1) * c]
    }

    fn cond_diff(&self, i: usize, cond: &[f64], out: &mut [f64]) {
        let c = self.cond_dims.len();
        for j in 0..c {
            out[j] = wrap_period(cond[j] - self.xc[i * c + j], self.pc[j]);
        }
    }

    /// Mixture weights given the conditioning values, optionally restricted
    /// to a subset of observations.
    pub fn mixture(&self, cond: &[f64], rows: Option<&[usize]>) -> Mixture {
        let c = self.cond_dims.len();
        let rows: Vec<usize> = match rows {
            Some(r) if !r.is_empty() => r.to_vec(),
            _ => (0..self.n).collect(),
        };
        let mut diff = vec![0.0; c];
        let logs: Vec<f64> = rows
            .iter()
            .map(|&i| {
                if c == 0 {
                    return 0.0;
                }
                self.cond_diff(i, cond, &mut diff);
                forward_solve(&self.chol_cc, c, &mut diff);
                -0.5 * diff.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let underflow = m < -700.0;
        if underflow {
            log::warn!("conditional KDE weights underflow; falling back to the nearest observation");
        }
        let lse = log_sum_exp(&logs);
        let weights: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Mixture { rows, weights, cumulative, underflow }
    }

    /// Mean of mixture component `i` (wrapped on circular coordinates).
    pub fn component_mean(&self, i: usize, cond: &[f64]) -> Vec<f64> {
        let (f, c) = (self.free_dims.len(), self.cond_dims.len());
        let mut diff = vec![0.0; c];
        self.cond_diff(i, cond, &mut diff);
        (0..f)
            .map(|r| {
                let shift: f64 = (0..c).map(|k| self.gain[r * c + k] * diff[k]).sum();
                wrap_period(self.xf[i * f + r] + shift, self.pf[r])
            })
            .collect()
    }

    /// Draw the free coordinates from a prepared mixture.
    pub fn sample_mixture<R: Rng + ?Sized>(&self, mix: &Mixture, cond: &[f64], rng: &mut R) -> Vec<f64> {
        let i = mix.pick(rng);
        let f = self.free_dims.len();
        let mean = self.component_mean(i, cond);
        let eps: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
        (0..f)
            .map(|r| {
                let noise: f64 = (0..=r).map(|k| self.chol_bar[r * f + k] * eps[k]).sum();
                wrap_period(mean[r] + noise, self.pf[r])
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, cond: &[f64], rows: Option<&[usize]>, rng: &mut R) -> Vec<f64> {
        let mix = self.mixture(cond, rows);
        self.sample_mixture(&mix, cond, rng)
    }

    /// Conditional density of the free coordinates `z_free`.
    pub fn density(&self, cond: &[f64], rows: Option<&[usize]>, z_free: &[f64]) -> f64 {
        let f = self.free_dims.len();
        let mix = self.mixture(cond, rows);
        let mut diff = vec![0.0; f];
        let mut total = 0.0;
        for (&i, &w) in mix.rows.iter().zip(&mix.weights) {
            if w == 0.0 {
                continue;
            }
            let mean = self.component_mean(i, cond);
            for r in 0..f {
                diff[r] = wrap_period(z_free[r] - mean[r], self.pf[r]);
            }
            forward_solve(&self.chol_bar, f, &mut diff);
            total += w * (self.log_norm_bar - 0.5 * diff.iter().map(|v| v * v).sum::<f64>()).exp();
        }
        total
    }
}
