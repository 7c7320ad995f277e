//! Eulerian diagnostics of observed and simulated catalogs: conditional
//! exceedance probabilities χ with extremal-index-adjusted intervals, return
//! levels, QQ comparisons with bootstrap tolerance bands and spatial event
//! densities.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::margins::{empirical_quantile, GpdFit};

/// Default run length of the runs estimator of the extremal index.
pub const DEFAULT_RUN_LENGTH: usize = 6;

/// Exp(1) quantile `x^q = −log(1 − q)`.
pub fn exp_quantile(q: f64) -> f64 {
    -(1.0 - q).ln()
}

/// Runs estimator of the extremal index: exceedances separated by at least
/// `run_length` non-exceedances start a new cluster; `θ̂` is the number of
/// clusters over the number of exceedances.
pub fn extremal_index(series: &[f64], x: f64, run_length: usize) -> Result<f64> {
    let mut exceed = 0usize;
    let mut clusters = 0usize;
    let mut gap = usize::MAX;
    for &v in series {
        if v > x {
            exceed += 1;
            if gap >= run_length.max(1) {
                clusters += 1;
            }
            gap = 0;
        } else {
            gap = gap.saturating_add(1);
        }
    }
    if exceed == 0 {
        return Err(Error::InsufficientData(String::from("no exceedances of the threshold")));
    }
    Ok((clusters as f64 / exceed as f64).clamp(f64::MIN_POSITIVE, 1.0))
}

/// Wilson score interval for a proportion `p` from `n` (possibly fractional)
/// trials at normal quantile `z`.
pub fn wilson_interval(p: f64, n: f64, z: f64) -> (f64, f64) {
    if !(n > 0.0) {
        return (0.0, 1.0);
    }
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// Estimates of `χ(q) = Pr(X₂ > x^q | X₁ > x^q)` on a grid of `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiEstimate {
    pub q: Vec<f64>,
    /// `None` where the first series has no exceedance.
    pub chi: Vec<Option<f64>>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    /// Conditioning exceedances deflated by the extremal index.
    pub n_eff: Vec<f64>,
    pub joint: Vec<usize>,
    pub conditioning: Vec<usize>,
}

/// Minimum number of exceedances for which the extremal index is estimated;
/// below it exceedances are treated as independent.
pub const MIN_INDEX_EXCEEDANCES: usize = 10;

/// Conditional proportions of joint exceedances of two Exp(1)-scale series
/// with 95% Wilson intervals on the effective number of exceedances.
/// Interval widths reflect sampling variability only, not uncertainty in the
/// model parameters.
pub fn chi_estimate(s1: &[f64], s2: &[f64], q_grid: &[f64], run_length: usize) -> Result<ChiEstimate> {
    if s1.len() != s2.len() {
        return Err(invalid("series differ in length"));
    }
    if s1.len() < 100 {
        return Err(Error::InsufficientData(alloc::format!("{} paired values, 100 required", s1.len())));
    }
    if q_grid.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(invalid("probability levels must lie in (0, 1)"));
    }
    let mut out = ChiEstimate {
        q: q_grid.to_vec(),
        chi: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        n_eff: Vec::new(),
        joint: Vec::new(),
        conditioning: Vec::new(),
    };
    for &q in q_grid {
        let x = exp_quantile(q);
        let n1 = s1.iter().filter(|&&v| v > x).count();
        let nj = s1.iter().zip(s2).filter(|(&a, &b)| a > x && b > x).count();
        out.joint.push(nj);
        out.conditioning.push(n1);
        if n1 == 0 {
            out.chi.push(None);
            out.lower.push(None);
            out.upper.push(None);
            out.n_eff.push(0.0);
            continue;
        }
        let theta = if n1 >= MIN_INDEX_EXCEEDANCES { extremal_index(s1, x, run_length)? } else { 1.0 };
        let chi = nj as f64 / n1 as f64;
        let n_eff = n1 as f64 * theta;
        let (lo, hi) = wilson_interval(chi, n_eff, 1.959_963_984_540_054);
        out.chi.push(Some(chi));
        out.lower.push(Some(lo));
        out.upper.push(Some(hi));
        out.n_eff.push(n_eff);
    }
    Ok(out)
}

/// Level exceeded on average once in `t_periods` periods of
/// `events_per_period` events under a threshold-excess fit.
pub fn return_level(fit: &GpdFit, t_periods: f64, events_per_period: f64) -> Result<f64> {
    let m = t_periods * events_per_period * fit.lambda;
    if !(m >= 1.0) || !m.is_finite() {
        return Err(invalid("return period too short: the level would fall below the threshold"));
    }
    let lm = m.ln();
    let excess = if fit.xi == 0.0 { fit.sigma * lm } else { fit.sigma * (fit.xi * lm).exp_m1() / fit.xi };
    Ok(fit.u + excess)
}

/// Empirical return level: the value exceeded on average once in
/// `t_periods` periods, from a sample covering `n_periods` periods. Returns
/// `None` when the sample is too short.
pub fn empirical_return_level(values: &[f64], n_periods: f64, t_periods: f64) -> Option<f64> {
    let n = values.len();
    let exceed = n_periods / t_periods;
    if n == 0 || exceed > n as f64 || !(exceed > 0.0) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(empirical_quantile(&sorted, 1.0 - exceed / n as f64))
}

/// Matched quantiles with a simultaneous bootstrap tolerance band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqData {
    pub probs: Vec<f64>,
    pub qa: Vec<f64>,
    pub qb: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QqData {
    pub fn inside(&self) -> Vec<bool> {
        self.qb.iter().zip(self.lower.iter().zip(&self.upper)).map(|(&b, (&l, &u))| b >= l && b <= u).collect()
    }

    pub fn n_inside(&self) -> usize {
        self.inside().into_iter().filter(|&i| i).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqConfig {
    pub n_quantiles: usize,
    pub n_boot: usize,
    pub level: f64,
}

impl Default for QqConfig {
    fn default() -> Self {
        Self { n_quantiles: 9, n_boot: 500, level: 0.95 }
    }
}

fn sorted_quantiles(mut x: Vec<f64>, probs: &[f64]) -> Vec<f64> {
    x.sort_by(f64::total_cmp);
    probs.iter().map(|&p| empirical_quantile(&x, p)).collect()
}

/// QQ comparison of `b` against `a` at probabilities `i/(n+1)`.
///
/// The band is built under the hypothesis that `b` comes from the
/// distribution of `a`: each replicate resamples `a*` (size of `a`) and `b*`
/// (size of `b`) from `a`, and the band `q_a ± c·s` uses the per-quantile
/// standard deviation `s` of `q(b*) − q(a*)` and the `level` quantile `c` of
/// the largest standardised deviation, so coverage holds jointly.
pub fn qq_data<R: Rng + ?Sized>(a: &[f64], b: &[f64], cfg: &QqConfig, rng: &mut R) -> Result<QqData> {
    let ga: Vec<Vec<f64>> = a.iter().map(|&v| vec![v]).collect();
    let gb: Vec<Vec<f64>> = b.iter().map(|&v| vec![v]).collect();
    qq_data_grouped(&ga, &gb, cfg, rng)
}

/// As [`qq_data`], but resampling whole groups (for example all values of
/// one storm), which keeps within-group dependence in the band.
pub fn qq_data_grouped<R: Rng + ?Sized>(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &QqConfig, rng: &mut R) -> Result<QqData> {
    let flat = |g: &[Vec<f64>]| -> Vec<f64> { g.iter().flatten().copied().collect() };
    let (fa, fb) = (flat(a), flat(b));
    let nq = cfg.n_quantiles;
    if nq == 0 || fa.len() < nq || fb.len() < nq {
        return Err(Error::InsufficientData(alloc::format!("both samples need at least {nq} values")));
    }
    if fa.iter().chain(&fb).any(|v| !v.is_finite()) {
        return Err(invalid("QQ samples must be finite"));
    }
    let probs: Vec<f64> = (1..=nq).map(|i| i as f64 / (nq + 1) as f64).collect();
    let qa = sorted_quantiles(fa, &probs);
    let qb = sorted_quantiles(fb, &probs);
    let draw = |count: usize, rng: &mut R| -> Vec<f64> {
        let mut out = Vec::new();
        for _ in 0..count {
            out.extend_from_slice(&a[rng.random_range(0..a.len())]);
        }
        out
    };
    let mut diffs: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_boot);
    for _ in 0..cfg.n_boot {
        let mut sa = draw(a.len(), rng);
        let mut sb = draw(b.len(), rng);
        if sa.len() < 1 || sb.len() < 1 {
            sa.push(qa[0]);
            sb.push(qa[0]);
        }
        let (ra, rb) = (sorted_quantiles(sa, &probs), sorted_quantiles(sb, &probs));
        diffs.push(rb.iter().zip(&ra).map(|(x, y)| x - y).collect());
    }
    let nb = diffs.len().max(1) as f64;
    let sd: Vec<f64> = (0..nq)
        .map(|i| {
            let m = diffs.iter().map(|d| d[i]).sum::<f64>() / nb;
            let v = diffs.iter().map(|d| (d[i] - m).powi(2)).sum::<f64>() / (nb - 1.0).max(1.0);
            v.sqrt().max(1e-12)
        })
        .collect();
    let mut maxdev: Vec<f64> =
        diffs.iter().map(|d| d.iter().zip(&sd).map(|(x, s)| x.abs() / s).fold(0.0, f64::max)).collect();
    maxdev.sort_by(f64::total_cmp);
    let c = if maxdev.is_empty() { 0.0 } else { empirical_quantile(&maxdev, cfg.level) };
    let lower = qa.iter().zip(&sd).map(|(q, s)| q - c * s).collect();
    let upper = qa.iter().zip(&sd).map(|(q, s)| q + c * s).collect();
    Ok(QqData { probs, qa, qb, lower, upper })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("rank correlation needs two equal-length samples of at least two values"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    pearson(&ra, &rb)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("correlation needs two equal-length samples of at least two values"));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::Degenerate(String::from("constant sample in correlation")));
    }
    Ok(sab / (saa * sbb).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Least-squares non-increasing fit by pool-adjacent-violators.
pub fn isotonic_non_increasing(y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if y.len() != w.len() || w.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("isotonic fit needs one positive weight per value"));
    }
    // Blocks of (mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, l1 + l2));
        }
    }
    Ok(blocks.into_iter().flat_map(|(m, _, l)| core::iter::repeat_n(m, l)).collect())
}

/// Counts of events per grid cell, optionally smoothed by a Gaussian kernel
/// of standard deviation `sigma` cells. Events outside the grid are ignored.
/// Smoothing renormalises the kernel within the grid, so the total is kept.
pub fn spatial_density(points: &[[f64; 2]], n_x: usize, n_y: usize, sigma: Option<f64>) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(invalid("no events"));
    }
    if n_x == 0 || n_y == 0 {
        return Err(invalid("empty grid"));
    }
    let mut counts = vec![0.0; n_x * n_y];
    for p in points {
        let (x, y) = (p[0].round(), p[1].round());
        if x >= 0.0 && y >= 0.0 && (x as usize) < n_x && (y as usize) < n_y {
            counts[y as usize * n_x + x as usize] += 1.0;
        }
    }
    let Some(s) = sigma.filter(|&s| s > 0.0) else { return Ok(counts) };
    let r = (4.0 * s).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-0.5 * (d as f64 / s).powi(2)).exp()).collect();
    let mut out = vec![0.0; n_x * n_y];
    for (idx, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let (cx, cy) = ((idx % n_x) as i64, (idx / n_x) as i64);
        let inside = |v: i64, n: usize| v >= 0 && (v as usize) < n;
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                if inside(cx + dx, n_x) && inside(cy + dy, n_y) {
                    total += kernel[(dx + r) as usize] * kernel[(dy + r) as usize];
                }
            }
        }
        for dy in -r..=r {
            for dx in -r..=r {
                if inside(cx + dx, n_x) && inside(cy + dy, n_y) {
                    let k = kernel[(dx + r) as usize] * kernel[(dy + r) as usize];
                    out[(cy + dy) as usize * n_x + (cx + dx) as usize] += c * k / total;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotonic_pools_violators() {
        let f = isotonic_non_increasing(&[1.0, 3.0, 2.0, 0.5], &[1.0; 4]).unwrap();
        assert_eq!(f, vec![2.0, 2.0, 2.0, 0.5]);
    }

    #[test]
    fn single_isolated_exceedance_has_unit_index() {
        let mut s = vec![0.0; 50];
        s[20] = 5.0;
        assert_eq!(extremal_index(&s, 1.0, 6).unwrap(), 1.0);
    }
}
