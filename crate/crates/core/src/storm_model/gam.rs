//! Penalised cubic regression splines and Bernoulli logistic additive models
//! with smoothing parameters chosen by generalised cross-validation.

use alloc::vec;
use alloc::vec::Vec;
use alloc::string::String;
use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::margins::empirical_quantile;

const DEGREE: usize = 3;

/// Clamped cubic B-spline basis on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSpline {
    pub knots: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl BSpline {
    /// Basis with up to `n_interior` interior knots at sample quantiles, or
    /// `None` if the sample is constant.
    pub fn from_data(x: &[f64], n_interior: usize) -> Option<Self> {
        let mut s = x.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = (s[0], s[s.len() - 1]);
        if !(hi > lo) {
            return None;
        }
        let mut interior: Vec<f64> = (1..=n_interior)
            .map(|i| empirical_quantile(&s, i as f64 / (n_interior + 1) as f64))
            .filter(|&k| k > lo && k < hi)
            .collect();
        interior.dedup();
        let mut knots = vec![lo; DEGREE + 1];
        knots.extend(interior);
        knots.extend(vec![hi; DEGREE + 1]);
        Some(Self { knots, lo, hi })
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    /// Basis values at `x` (clamped to the basis range).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let k = self.n_basis();
        let x = x.clamp(self.lo, self.hi);
        let t = &self.knots;
        // knot span with t[span] ≤ x < t[span+1]
        let mut span = DEGREE;
        while span < k - 1 && x >= t[span + 1] {
            span += 1;
        }
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; k];
        for (j, v) in n.iter().enumerate() {
            out[span - DEGREE + j] = *v;
        }
        out
    }
}

/// One fitted smooth term `β(ν) = B(ν) Z θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smooth {
    pub basis: BSpline,
    /// Constraint null-space basis, `K × (K−1)` row-major.
    pub z: Vec<f64>,
    pub coef: Vec<f64>,
    pub lambda: f64,
}

impl Smooth {
    fn design_row(&self, x: f64) -> Vec<f64> {
        let b = self.basis.eval(x);
        let (k, m) = (b.len(), b.len() - 1);
        (0..m).map(|c| (0..k).map(|r| b[r] * self.z[r * m + c]).sum()).collect()
    }

    pub fn value(&self, x: f64) -> f64 {
        self.design_row(x).iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamConfig {
    pub n_interior: usize,
    pub n_lambda: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub passes: usize,
    pub min_obs: usize,
}

impl Default for GamConfig {
    fn default() -> Self {
        Self { n_interior: 10, n_lambda: 15, lambda_min: 1e-3, lambda_max: 1e6, passes: 2, min_obs: 200 }
    }
}

/// Bernoulli logistic additive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    pub covariates: Vec<String>,
    pub intercept: f64,
    /// `None` where the covariate was constant in training.
    pub smooths: Vec<Option<Smooth>>,
    /// Complete separation was detected and maximal smoothing imposed.
    pub separated: bool,
}

/// Logistic function.
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl ActivityModel {
    /// Linear predictor and whether any covariate was clamped to the training range.
    pub fn linear_predictor(&self, x: &[f64]) -> (f64, bool) {
        let mut eta = self.intercept;
        let mut clamped = false;
        for (s, &v) in self.smooths.iter().zip(x) {
            if let Some(s) = s {
                clamped |= v < s.basis.lo || v > s.basis.hi;
                eta += s.value(v);
            }
        }
        (eta, clamped)
    }

    /// Predicted probability in `(0, 1)` and the clamping flag.
    pub fn predict(&self, x: &[f64]) -> (f64, bool) {
        let (eta, clamped) = self.linear_predictor(x);
        (logistic(eta).clamp(1e-12, 1.0 - 1e-12), clamped)
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        self.predict(x).0
    }
}

struct Design {
    x: DMatrix<f64>,
    /// Column ranges of each kept smooth.
    blocks: Vec<(usize, usize, DMatrix<f64>)>,
}

fn second_difference_penalty(k: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(k - 2, k);
    for r in 0..k - 2 {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    d.transpose() * d
}

/// Orthonormal basis of the complement of `c` (Householder reflection).
fn null_space(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, k - 1).into_owned()
}

struct Fit {
    beta: DVector<f64>,
    gcv: f64,
    separated: bool,
}

fn pirls(x: &DMatrix<f64>, y: &[f64], penalty: &DMatrix<f64>, start: Option<&DVector<f64>>) -> Option<Fit> {
    let (n, p) = (x.nrows(), x.ncols());
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut beta = match start {
        Some(b) => b.clone(),
        None => {
            let mut b = DVector::zeros(p);
            b[0] = (mean / (1.0 - mean)).ln();
            b
        }
    };
    let mut eta = x * &beta;
    let mut dev_old = f64::INFINITY;
    let mut separated = false;
    let mut last = None;
    for _ in 0..100 {
        let mut w = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let mu = logistic(eta[i]).clamp(1e-10, 1.0 - 1e-10);
            let wi = mu * (1.0 - mu);
            w[i] = wi;
            z[i] = eta[i] + (y[i] - mu) / wi;
        }
        let mut xtw = x.transpose();
        for i in 0..n {
            xtw.column_mut(i).scale_mut(w[i]);
        }
        let xtwx = &xtw * x;
        let m = &xtwx + penalty;
        let chol = m.clone().cholesky()?;
        let new_beta = chol.solve(&(&xtw * &z));
        let new_eta = x * &new_beta;
        let dev: f64 = (0..n)
            .map(|i| {
                let mu = logistic(new_eta[i]).clamp(1e-15, 1.0 - 1e-15);
                -2.0 * (y[i] * mu.ln() + (1.0 - y[i]) * (1.0 - mu).ln())
            })
            .sum::<f64>()
            + new_beta.dot(&(penalty * &new_beta));
        if new_eta.iter().any(|e| e.abs() > 30.0) {
            separated = true;
        }
        beta = new_beta;
        eta = new_eta;
        // GCV at the current working model
        let trace = chol.solve(&xtwx).trace();
        let rss: f64 = (0..n).map(|i| w[i] * (z[i] - eta[i]).powi(2)).sum();
        let gcv = n as f64 * rss / (n as f64 - trace).powi(2);
        last = Some(gcv);
        if (dev_old - dev).abs() < 1e-9 * (dev.abs() + 1e-9) {
            break;
        }
        dev_old = dev;
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return None;
    }
    Some(Fit { beta, gcv: last?, separated })
}

/// Basis, constraint null space, constrained design columns and penalty of one smooth.
type SmoothParts = (BSpline, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

fn build_design(cols: &[Vec<f64>], n_interior: usize) -> (Design, Vec<Option<SmoothParts>>) {
    let n = cols[0].len();
    let mut parts: Vec<Option<SmoothParts>> = Vec::new();
    let mut p = 1;
    for col in cols {
        match BSpline::from_data(col, n_interior) {
            Some(basis) => {
                let k = basis.n_basis();
                let mut b = DMatrix::zeros(n, k);
                for (i, &v) in col.iter().enumerate() {
                    for (j, bv) in basis.eval(v).into_iter().enumerate() {
                        b[(i, j)] = bv;
                    }
                }
                let sums = DVector::from_iterator(k, (0..k).map(|j| b.column(j).sum()));
                let z = null_space(&sums);
                let s = z.transpose() * second_difference_penalty(k) * &z;
                p += k - 1;
                let xz = &b * &z;
                parts.push(Some((basis, z, xz, s)));
            }
            None => parts.push(None),
        }
    }
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    let mut blocks = Vec::new();
    let mut at = 1;
    for part in parts.iter().flatten() {
        let m = part.2.ncols();
        x.view_mut((0, at), (n, m)).copy_from(&part.2);
        blocks.push((at, m, part.3.clone()));
        at += m;
    }
    (Design { x, blocks }, parts)
}

fn penalty_matrix(design: &Design, lambdas: &[f64]) -> DMatrix<f64> {
    let p = design.x.ncols();
    let mut s = DMatrix::zeros(p, p);
    for ((at, m, sj), &l) in design.blocks.iter().zip(lambdas) {
        let mut v = s.view_mut((*at, *at), (*m, *m));
        v += sj * l;
    }
    s
}

/// Fit a logistic additive model of `y` on the covariate columns `cols`.
pub fn fit_logistic_gam(names: &[&str], cols: &[Vec<f64>], y: &[bool], cfg: &GamConfig) -> Result<ActivityModel> {
    if cols.is_empty() || cols.len() != names.len() {
        return Err(invalid("covariate names and columns must match"));
    }
    let n = y.len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(invalid("covariate columns must have one value per observation"));
    }
    if n < cfg.min_obs {
        return Err(Error::InsufficientData(alloc::format!("{n} observations, {} required", cfg.min_obs)));
    }
    if cols.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("covariates must be finite"));
    }
    let yf: Vec<f64> = y.iter().map(|&b| b as u8 as f64).collect();
    let events = yf.iter().sum::<f64>();
    if events == 0.0 || events == n as f64 {
        return Err(Error::Degenerate("response has no variation".into()));
    }
    let (design, parts) = build_design(cols, cfg.n_interior);
    let q = design.blocks.len();
    let grid: Vec<f64> = (0..cfg.n_lambda)
        .map(|i| {
            let f = if cfg.n_lambda > 1 { i as f64 / (cfg.n_lambda - 1) as f64 } else { 0.0 };
            (cfg.lambda_min.ln() + f * (cfg.lambda_max.ln() - cfg.lambda_min.ln())).exp()
        })
        .collect();
    let mut idx = vec![cfg.n_lambda / 2; q];
    let lam = |idx: &[usize]| idx.iter().map(|&i| grid[i]).collect::<Vec<_>>();
    let mut best = pirls(&design.x, &yf, &penalty_matrix(&design, &lam(&idx)), None);
    let mut separated = best.as_ref().is_none_or(|f| f.separated);
    if !separated && q > 0 {
        for _ in 0..cfg.passes {
            for j in 0..q {
                for g in 0..cfg.n_lambda {
                    if g == idx[j] {
                        continue;
                    }
                    let mut trial = idx.clone();
                    trial[j] = g;
                    let start = best.as_ref().map(|b| &b.beta);
                    if let Some(fit) = pirls(&design.x, &yf, &penalty_matrix(&design, &lam(&trial)), start) {
                        if !fit.separated && fit.gcv < best.as_ref().map_or(f64::INFINITY, |b| b.gcv) {
                            best = Some(fit);
                            idx = trial;
                        }
                    }
                }
            }
        }
    }
    if separated {
        log::warn!("complete separation in logistic additive model; imposing maximal smoothing");
        idx = vec![cfg.n_lambda - 1; q];
        best = pirls(&design.x, &yf, &penalty_matrix(&design, &lam(&idx)), None);
        separated = true;
    }
    let fit = best.ok_or_else(|| Error::NoConvergence("penalised IRLS failed".into()))?;
    let mut smooths = Vec::with_capacity(cols.len());
    let mut block = 0;
    for part in parts {
        match part {
            Some((basis, z, _, _)) => {
                let (at, m, _) = &design.blocks[block];
                let k = basis.n_basis();
                let mut zf = vec![0.0; k * (k - 1)];
                for r in 0..k {
                    for c in 0..k - 1 {
                        zf[r * (k - 1) + c] = z[(r, c)];
                    }
                }
                smooths.push(Some(Smooth {
                    basis,
                    z: zf,
                    coef: fit.beta.rows(*at, *m).iter().cloned().collect(),
                    lambda: grid[idx[block]],
                }));
                block += 1;
            }
            None => smooths.push(None),
        }
    }
    Ok(ActivityModel {
        covariates: names.iter().map(|s| String::from(*s)).collect(),
        intercept: fit.beta[0],
        smooths,
        separated,
    })
}
