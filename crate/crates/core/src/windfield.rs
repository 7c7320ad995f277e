//! Wind speeds inside a footprint.
//!
//! Relative winds inside an ellipse are modelled as a transformed zero-mean,
//! unit-variance Gaussian field with geometrically anisotropic Matérn
//! correlation. A simulated field is conditioned to reach the footprint
//! maximum at its designated cell and the lower limit of the footprint value
//! distribution on the ellipse boundary (and, for storms centred inside the
//! footprint, over a secondary region around the centre), then mapped back
//! through the weighted footprint value distribution.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::extract::{wrap_pi, Ellipse, FootprintFeatures, WindstormRecord};
use crate::grid::{Grid, GriddedFieldStack, ScaleTag};
use crate::kde::{Bandwidth, KdeModel};
use crate::margins::MarginalModel;
use crate::rng::{key_str, stream};
use crate::special::{matern, norm_cdf, norm_ppf};
use crate::storm_model::transition::NamedKde;
use crate::track::StormTrack;

/// Matérn shape used throughout.
pub const KAPPA: f64 = 0.6;

/// Order in which the anisotropy rotation and scaling act on a separation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AnisotropyOrder {
    /// `‖J·Ψ·h‖`: rotate by ψ, then inflate the second axis by ζ.
    #[default]
    RotateThenScale,
    /// `‖Ψ·J·h‖`: inflate the second grid axis, then rotate. Rotation keeps
    /// lengths, so ψ has no effect in this order.
    ScaleThenRotate,
}

/// Anisotropic distance between two locations.
pub fn anisotropic_distance(si: [f64; 2], sj: [f64; 2], psi: f64, zeta: f64, order: AnisotropyOrder) -> f64 {
    separation_length([si[0] - sj[0], si[1] - sj[1]], psi, zeta, order)
}

#[inline]
fn separation_length(h: [f64; 2], psi: f64, zeta: f64, order: AnisotropyOrder) -> f64 {
    match order {
        AnisotropyOrder::RotateThenScale => {
            let (s, c) = psi.sin_cos();
            let u = c * h[0] - s * h[1];
            let v = s * h[0] + c * h[1];
            u.hypot(zeta * v)
        }
        AnisotropyOrder::ScaleThenRotate => h[0].hypot(zeta * h[1]),
    }
}

/// Anisotropy angle for a footprint whose centre lies at bearing `theta_e`
/// from the storm: correlation decays most slowly perpendicular to that
/// bearing.
pub fn anisotropy_angle(theta_e: f64) -> f64 {
    wrap_pi(-theta_e)
}

/// Parameters of the anisotropic Matérn correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub kappa: f64,
    /// Range in cells.
    pub alpha: f64,
    pub psi: f64,
    /// Anisotropy ratio `≥ 1`.
    pub zeta: f64,
}

impl GpParams {
    pub fn new(alpha: f64, psi: f64, zeta: f64) -> Result<Self> {
        Self::with_kappa(KAPPA, alpha, psi, zeta)
    }

    pub fn with_kappa(kappa: f64, alpha: f64, psi: f64, zeta: f64) -> Result<Self> {
        if !(kappa > 0.0 && alpha > 0.0 && zeta >= 1.0 && psi.is_finite() && alpha.is_finite() && zeta.is_finite()) {
            return Err(invalid("Matérn parameters need κ > 0, α > 0 and ζ ≥ 1"));
        }
        Ok(Self { kappa, alpha, psi, zeta })
    }

    /// Parameters for a footprint: ψ perpendicular to `Θ_E`, `ζ = A/B`.
    pub fn for_footprint(f: &FootprintFeatures, alpha: f64, kappa: f64) -> Result<Self> {
        let zeta = if f.b > 0.0 { (f.a / f.b).max(1.0) } else { 1.0 };
        Self::with_kappa(kappa, alpha, anisotropy_angle(f.theta_e), zeta)
    }

    pub fn correlation(&self, h: [f64; 2], order: AnisotropyOrder) -> f64 {
        matern(separation_length(h, self.psi, self.zeta, order), self.alpha, self.kappa)
    }
}

/// Empirical semivariogram on anisotropy-corrected distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variogram {
    /// Mean separation of the pairs in each non-empty bin.
    pub centres: Vec<f64>,
    pub gamma: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramConfig {
    pub bins: usize,
    pub kappa: f64,
    pub min_cells: usize,
    /// Larger fields are thinned to about this many cells before pairing.
    pub max_cells: usize,
    pub order: AnisotropyOrder,
}

impl Default for VariogramConfig {
    fn default() -> Self {
        Self { bins: 15, kappa: KAPPA, min_cells: 200, max_cells: 2500, order: AnisotropyOrder::RotateThenScale }
    }
}

/// Semivariogram with `cfg.bins` equal bins up to half the largest separation.
pub fn empirical_variogram(
    coords: &[[f64; 2]],
    values: &[f64],
    psi: f64,
    zeta: f64,
    cfg: &VariogramConfig,
) -> Result<Variogram> {
    if coords.len() != values.len() {
        return Err(invalid("coordinates and values differ in length"));
    }
    if coords.len() < cfg.min_cells.max(2) {
        return Err(Error::InsufficientData(alloc::format!(
            "{} cells in the footprint, {} required",
            coords.len(),
            cfg.min_cells
        )));
    }
    if cfg.bins == 0 {
        return Err(invalid("variogram needs at least one bin"));
    }
    let stride = coords.len().div_ceil(cfg.max_cells.max(2));
    let idx: Vec<usize> = (0..coords.len()).step_by(stride).collect();
    let dist = |i: usize, j: usize| anisotropic_distance(coords[i], coords[j], psi, zeta, cfg.order);
    let mut d_max: f64 = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d_max = d_max.max(dist(i, j));
        }
    }
    let cutoff = 0.5 * d_max;
    if !(cutoff > 0.0) {
        return Err(invalid("footprint cells do not span any distance"));
    }
    let width = cutoff / cfg.bins as f64;
    let mut sum_d = vec![0.0; cfg.bins];
    let mut sum_g = vec![0.0; cfg.bins];
    let mut counts = vec![0usize; cfg.bins];
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d = dist(i, j);
            if d > cutoff || d <= 0.0 {
                continue;
            }
            let k = ((d / width) as usize).min(cfg.bins - 1);
            sum_d[k] += d;
            sum_g[k] += 0.5 * (values[i] - values[j]).powi(2);
            counts[k] += 1;
        }
    }
    let mut out = Variogram { centres: Vec::new(), gamma: Vec::new(), counts: Vec::new() };
    for k in 0..cfg.bins {
        if counts[k] > 0 {
            out.centres.push(sum_d[k] / counts[k] as f64);
            out.gamma.push(sum_g[k] / counts[k] as f64);
            out.counts.push(counts[k]);
        }
    }
    Ok(out)
}

/// Weighted least-squares fit of the unit-sill Matérn variogram `1 − ρ(u)`.
///
/// Residuals are relative to the model (`γ̂/γ − 1`), matching the variance
/// of a semivariance estimate, which grows with its square. Long lags are
/// dominated by the particular realisation rather than by α, so the fit is
/// restricted to bins within the current range estimate (at least three
/// bins) and iterated until the range settles.
pub fn fit_matern_range(v: &Variogram, kappa: f64) -> Result<f64> {
    if v.centres.is_empty() || v.gamma.iter().all(|&g| g <= 1e-12) {
        return Err(Error::NoSpatialStructure);
    }
    let u_max = v.centres.iter().cloned().fold(0.0, f64::max);
    let min_window = v.centres[v.centres.len().min(3) - 1];
    let mut window = f64::INFINITY;
    let mut alpha = f64::NAN;
    for _ in 0..20 {
        let limit = window.max(min_window);
        let objective = |log_a: f64| {
            let a = log_a.exp();
            v.centres
                .iter()
                .zip(&v.gamma)
                .filter(|(&u, _)| u <= limit)
                .map(|(&u, &g)| {
                    let model = (1.0 - matern(u, a, kappa)).max(1e-12);
                    (g / model - 1.0).powi(2)
                })
                .sum::<f64>()
        };
        let next = minimise_log_range(objective, (1e-2f64).ln(), (100.0 * u_max).ln());
        let settled = (next / alpha - 1.0).abs() < 1e-6;
        alpha = next;
        if settled {
            break;
        }
        window = alpha;
    }
    // No correlation left at the shortest lag: the field is spatially white.
    if matern(v.centres[0], alpha, kappa) < 0.02 {
        return Err(Error::NoSpatialStructure);
    }
    Ok(alpha)
}

/// Grid search followed by golden-section refinement over `[lo, hi]` on the
/// log scale; returns the minimising range.
fn minimise_log_range(objective: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let m = 200;
    let grid: Vec<f64> = (0..=m).map(|i| lo + (hi - lo) * i as f64 / m as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&g| objective(g)).collect();
    let best = (0..=m).fold(0, |b, i| if vals[i] < vals[b] { i } else { b });
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(m)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = objective(d);
        }
    }
    (0.5 * (a + b)).exp()
}

/// Range of a Gaussian-scale footprint field by variogram fitting.
pub fn estimate_alpha(coords: &[[f64; 2]], values: &[f64], psi: f64, zeta: f64, cfg: &VariogramConfig) -> Result<f64> {
    let v = empirical_variogram(coords, values, psi, zeta, cfg)?;
    fit_matern_range(&v, cfg.kappa)
}

/// Normal scores `Φ⁻¹(r/(n+1))` from average ranks: the Gaussian transform
/// of a footprint through its own empirical distribution.
pub fn gaussian_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = 0.5 * (i + j) as f64 + 1.0;
        let z = norm_ppf(rank / (n as f64 + 1.0));
        for &k in &order[i..=j] {
            out[k] = z;
        }
        i = j + 1;
    }
    out
}

/// Conditional density of the range given the footprint area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaModel {
    pub model: NamedKde,
}

impl AlphaModel {
    pub fn fit(pairs: &[(f64, f64)], bw: Bandwidth) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::InsufficientData(alloc::format!("{} (α, Δ) pairs", pairs.len())));
        }
        let data: Vec<f64> = pairs.iter().flat_map(|&(a, d)| [a, d]).collect();
        let kde = KdeModel::fit(data, 2, vec![0.0, 0.0], bw)?;
        let model = NamedKde::new(vec![String::from("alpha"), String::from("delta")], kde, 1)?;
        Ok(Self { model })
    }

    /// Draw `α | Δ`, redrawing non-positive values. After 1,000 failed
    /// draws the smallest positive training range is returned.
    pub fn sample<R: Rng + ?Sized>(&self, delta: f64, rng: &mut R) -> f64 {
        let cond = self.model.conditional();
        for _ in 0..1000 {
            let a = cond.sample(&[delta], None, rng)[0];
            if a > 0.0 {
                return a;
            }
        }
        let kde = &self.model.kde;
        (0..kde.n()).map(|i| kde.row(i)[0]).filter(|&a| a > 0.0).fold(f64::INFINITY, f64::min)
    }
}

/// Continuous, strictly increasing distribution function interpolating a
/// weighted sample at its mid-point plotting positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintDistribution {
    x: Vec<f64>,
    p: Vec<f64>,
    lower_quantile: f64,
    /// The neighbourhood weights all vanished and the nearest footprint was used.
    pub nearest_fallback: bool,
}

impl FootprintDistribution {
    /// Build from `(value, weight)` pairs; values above `cap` are dropped.
    pub fn from_weighted(mut sample: Vec<(f64, f64)>, cap: f64, lower_quantile: f64) -> Result<Self> {
        sample.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::from_sorted(sample.into_iter(), cap, lower_quantile)
    }

    /// As [`FootprintDistribution::from_weighted`] for pairs already sorted by value.
    pub fn from_sorted(sample: impl Iterator<Item = (f64, f64)>, cap: f64, lower_quantile: f64) -> Result<Self> {
        if !(lower_quantile > 0.0 && lower_quantile < 0.5) {
            return Err(invalid("lower quantile must lie in (0, 0.5)"));
        }
        let mut xs: Vec<f64> = Vec::new();
        let mut ws: Vec<f64> = Vec::new();
        for (v, w) in sample.filter(|&(v, w)| v.is_finite() && v <= cap && w > 0.0) {
            if xs.last() == Some(&v) {
                *ws.last_mut().unwrap() += w;
            } else {
                xs.push(v);
                ws.push(w);
            }
        }
        if xs.is_empty() {
            return Err(Error::InsufficientData(String::from("no footprint values at or below the maximum")));
        }
        let total: f64 = ws.iter().sum();
        let m = xs.len();
        if m == 1 {
            let x0 = xs[0] - 1e-9 * xs[0].abs().max(1.0);
            return Ok(Self { x: vec![x0, xs[0]], p: vec![0.0, 1.0], lower_quantile, nearest_fallback: false });
        }
        let mut p = Vec::with_capacity(m + 2);
        let mut cum = 0.0;
        for w in &ws {
            let w = w / total;
            p.push(cum + 0.5 * w);
            cum += w;
        }
        let mut x = Vec::with_capacity(m + 2);
        let slope_lo = (xs[1] - xs[0]) / (p[1] - p[0]);
        x.push(xs[0] - p[0] * slope_lo);
        x.extend_from_slice(&xs);
        let mut pp = Vec::with_capacity(m + 2);
        pp.push(0.0);
        pp.extend_from_slice(&p);
        if xs[m - 1] >= cap {
            // The sample already reaches the maximum: it carries the upper tail.
            *pp.last_mut().unwrap() = 1.0;
        } else {
            let slope_hi = (xs[m - 1] - xs[m - 2]) / (p[m - 1] - p[m - 2]);
            let top = (xs[m - 1] + (1.0 - p[m - 1]) * slope_hi).min(cap);
            x.push(top);
            pp.push(1.0);
        }
        Ok(Self { x, p: pp, lower_quantile, nearest_fallback: false })
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let n = self.x.len();
        if v <= self.x[0] {
            return 0.0;
        }
        if v >= self.x[n - 1] {
            return 1.0;
        }
        let k = self.x.partition_point(|&a| a <= v);
        let (x0, x1, p0, p1) = (self.x[k - 1], self.x[k], self.p[k - 1], self.p[k]);
        p0 + (p1 - p0) * (v - x0) / (x1 - x0)
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.x.len();
        if q <= 0.0 {
            return self.x[0];
        }
        if q >= 1.0 {
            return self.x[n - 1];
        }
        let k = self.p.partition_point(|&a| a <= q).clamp(1, n - 1);
        let (x0, x1, p0, p1) = (self.x[k - 1], self.x[k], self.p[k - 1], self.p[k]);
        x0 + (x1 - x0) * (q - p0) / (p1 - p0)
    }

    /// Lower limit: the configured small weighted quantile.
    pub fn lower_limit(&self) -> f64 {
        self.quantile(self.lower_quantile)
    }

    /// Top of the support.
    pub fn upper_limit(&self) -> f64 {
        self.x[self.x.len() - 1]
    }
}

/// In-footprint Exp(1) values of one training footprint and its covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingFootprint {
    pub w: f64,
    pub delta: f64,
    pub omega: f64,
    pub values: Vec<f64>,
}

/// Kernel-weighted pool of training footprints from which conditional
/// footprint value distributions are built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionModelParts", into = "DistributionModelParts")]
pub struct FootprintDistributionModel {
    pub footprints: Vec<TrainingFootprint>,
    /// Per-covariate kernel bandwidths for (W, Δ, Ω).
    pub bandwidths: [f64; 3],
    pub lower_quantile: f64,
    /// All training values in ascending order with their footprint index.
    pooled: Vec<(f64, u32)>,
}

#[derive(Serialize, Deserialize)]
struct DistributionModelParts {
    footprints: Vec<TrainingFootprint>,
    bandwidths: [f64; 3],
    lower_quantile: f64,
}

impl From<FootprintDistributionModel> for DistributionModelParts {
    fn from(m: FootprintDistributionModel) -> Self {
        Self { footprints: m.footprints, bandwidths: m.bandwidths, lower_quantile: m.lower_quantile }
    }
}

impl TryFrom<DistributionModelParts> for FootprintDistributionModel {
    type Error = Error;
    fn try_from(p: DistributionModelParts) -> Result<Self> {
        Self::with_bandwidths(p.footprints, p.bandwidths, p.lower_quantile)
    }
}

impl FootprintDistributionModel {
    /// Bandwidths are `factor · sd · n^(-1/7)` per covariate.
    pub fn new(footprints: Vec<TrainingFootprint>, factor: f64, lower_quantile: f64) -> Result<Self> {
        if footprints.is_empty() {
            return Err(Error::InsufficientData(String::from("no training footprints")));
        }
        if !(factor > 0.0) {
            return Err(invalid("kernel bandwidth factor must be positive"));
        }
        let n = footprints.len() as f64;
        let col = |f: &dyn Fn(&TrainingFootprint) -> f64| {
            let mean = footprints.iter().map(f).sum::<f64>() / n;
            let var = footprints.iter().map(|t| (f(t) - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 { sd } else { 1.0 }
        };
        let scale = factor * n.powf(-1.0 / 7.0);
        let bandwidths = [col(&|t| t.w) * scale, col(&|t| t.delta) * scale, col(&|t| t.omega) * scale];
        Self::with_bandwidths(footprints, bandwidths, lower_quantile)
    }

    pub fn with_bandwidths(footprints: Vec<TrainingFootprint>, bandwidths: [f64; 3], lower_quantile: f64) -> Result<Self> {
        if footprints.is_empty() {
            return Err(Error::InsufficientData(String::from("no training footprints")));
        }
        if bandwidths.iter().any(|&h| !(h > 0.0)) {
            return Err(invalid("kernel bandwidths must be positive"));
        }
        if footprints.iter().any(|f| f.values.is_empty()) {
            return Err(invalid("training footprint without values"));
        }
        let mut pooled: Vec<(f64, u32)> = footprints
            .iter()
            .enumerate()
            .flat_map(|(k, f)| f.values.iter().map(move |&v| (v, k as u32)))
            .collect();
        pooled.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(Self { footprints, bandwidths, lower_quantile, pooled })
    }

    /// Kernel weights of the training footprints, normalised to sum to one;
    /// `None` when every weight underflows.
    pub fn weights(&self, w: f64, delta: f64, omega: f64) -> Option<Vec<f64>> {
        let h = self.bandwidths;
        let raw: Vec<f64> = self
            .footprints
            .iter()
            .map(|f| {
                let z = [(f.w - w) / h[0], (f.delta - delta) / h[1], (f.omega - omega) / h[2]];
                (-0.5 * (z[0] * z[0] + z[1] * z[1] + z[2] * z[2])).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        Some(raw.into_iter().map(|v| v / total).collect())
    }

    fn nearest(&self, w: f64, delta: f64, omega: f64) -> usize {
        let h = self.bandwidths;
        let d = |f: &TrainingFootprint| {
            ((f.w - w) / h[0]).powi(2) + ((f.delta - delta) / h[1]).powi(2) + ((f.omega - omega) / h[2]).powi(2)
        };
        (0..self.footprints.len()).fold(0, |b, i| if d(&self.footprints[i]) < d(&self.footprints[b]) { i } else { b })
    }

    /// Footprint value distribution given `(W, Δ, Ω)`, with no mass above `W`.
    pub fn distribution(&self, w: f64, delta: f64, omega: f64) -> FootprintDistribution {
        let (weights, fallback) = match self.weights(w, delta, omega) {
            Some(ws) => (ws, false),
            None => {
                let mut ws = vec![0.0; self.footprints.len()];
                ws[self.nearest(w, delta, omega)] = 1.0;
                (ws, true)
            }
        };
        let each: Vec<f64> = self.footprints.iter().zip(&weights).map(|(f, &wt)| wt / f.values.len() as f64).collect();
        let sample = self.pooled.iter().map(|&(v, k)| (v, each[k as usize]));
        let mut dist = FootprintDistribution::from_sorted(sample, w, self.lower_quantile).unwrap_or_else(|_| {
            // Every value exceeds the maximum: degenerate at the maximum.
            FootprintDistribution::from_weighted(vec![(w, 1.0)], w, self.lower_quantile)
                .expect("single finite value always yields a distribution")
        });
        dist.nearest_fallback = fallback;
        dist
    }
}

/// Settings of the footprint field simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub kappa: f64,
    pub order: AnisotropyOrder,
    /// Weighted quantile used as the lower limit of the value distribution.
    pub lower_quantile: f64,
    /// Probability level whose Gaussian quantile conditions the maximum.
    pub upper_quantile: f64,
    /// Largest semi-axes of the secondary minimum ellipse (cells).
    pub min_axes: [f64; 2],
    /// Rate of the exponential perturbations subtracted from `min_axes`.
    pub min_rate: f64,
    pub perimeter_points: usize,
    /// Ellipses with more cells are simulated on a coarsened lattice.
    pub max_exact_cells: usize,
    pub jitter: f64,
    /// Multiplier on the rule-of-thumb bandwidths of the value-distribution kernel.
    pub dist_bandwidth: f64,
    pub alpha_bandwidth: Bandwidth,
    pub variogram: VariogramConfig,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            kappa: KAPPA,
            order: AnisotropyOrder::RotateThenScale,
            lower_quantile: 0.001,
            upper_quantile: 0.999,
            min_axes: [40.0, 35.0],
            min_rate: 0.05,
            perimeter_points: 720,
            max_exact_cells: 20_000,
            jitter: 1e-8,
            dist_bandwidth: 1.0,
            alpha_bandwidth: Bandwidth::default(),
            variogram: VariogramConfig::default(),
        }
    }
}

/// Correlations between integer cell offsets, tabulated once per field.
struct OffsetTable {
    span_x: i64,
    span_y: i64,
    values: Vec<f64>,
}

impl OffsetTable {
    fn new(cells: &[[i64; 2]], gp: &GpParams, order: AnisotropyOrder) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        for c in cells {
            x0 = x0.min(c[0]);
            x1 = x1.max(c[0]);
            y0 = y0.min(c[1]);
            y1 = y1.max(c[1]);
        }
        let (span_x, span_y) = ((x1 - x0).max(0), (y1 - y0).max(0));
        let (w, h) = (2 * span_x + 1, 2 * span_y + 1);
        let mut values = vec![0.0; (w * h) as usize];
        for dy in -span_y..=span_y {
            for dx in -span_x..=span_x {
                values[((dy + span_y) * w + dx + span_x) as usize] = gp.correlation([dx as f64, dy as f64], order);
            }
        }
        Self { span_x, span_y, values }
    }

    #[inline]
    fn get(&self, a: [i64; 2], b: [i64; 2]) -> f64 {
        let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
        self.values[((dy + self.span_y) * (2 * self.span_x + 1) + dx + self.span_x) as usize]
    }
}

fn cholesky_with_jitter(
    n: usize,
    entry: impl Fn(usize, usize) -> f64,
    jitter: f64,
    what: &str,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = DMatrix::from_fn(n, n, &entry).cholesky() {
        return Ok(c);
    }
    DMatrix::from_fn(n, n, |i, j| entry(i, j) + if i == j { jitter } else { 0.0 })
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(String::from(what)))
}

/// Simulate a zero-mean unit-variance Gaussian field with anisotropic Matérn
/// correlation at integer cells, conditioned by kriging on `conditions`
/// (`(cell index, value)`); conditioned cells hold their values exactly.
pub fn simulate_gaussian_field<R: Rng + ?Sized>(
    cells: &[[i64; 2]],
    gp: &GpParams,
    order: AnisotropyOrder,
    conditions: &[(usize, f64)],
    jitter: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = cells.len();
    if n == 0 {
        return Err(invalid("no cells to simulate"));
    }
    if conditions.iter().any(|&(i, v)| i >= n || !v.is_finite()) {
        return Err(invalid("conditioning cell out of range or value not finite"));
    }
    let table = OffsetTable::new(cells, gp, order);
    let chol = cholesky_with_jitter(n, |i, j| table.get(cells[i], cells[j]), jitter, "field covariance")?;
    let eps: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    // z = L·ε, using only the lower triangle of the factor (column-major).
    let l = chol.l_dirty();
    let mut z = vec![0.0; n];
    for (j, &e) in eps.iter().enumerate() {
        let col = &l.as_slice()[j * n..(j + 1) * n];
        for i in j..n {
            z[i] += col[i] * e;
        }
    }
    if conditions.is_empty() {
        return Ok(z);
    }
    let c = conditions.len();
    let chol_cc = cholesky_with_jitter(
        c,
        |a, b| table.get(cells[conditions[a].0], cells[conditions[b].0]),
        jitter,
        "conditioning covariance",
    )?;
    let resid = DVector::from_fn(c, |a, _| conditions[a].1 - z[conditions[a].0]);
    let weights = chol_cc.solve(&resid);
    for (i, zi) in z.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, &(ci, _)) in conditions.iter().enumerate() {
            acc += table.get(cells[i], cells[ci]) * weights[a];
        }
        *zi += acc;
    }
    for &(i, v) in conditions {
        z[i] = v;
    }
    Ok(z)
}

/// Simulated footprint field on its in-ellipse cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintField {
    /// Grid cells `(x, y)` inside the ellipse, in raster order.
    pub cells: Vec<(usize, usize)>,
    /// Exp(1)-scale values.
    pub values: Vec<f64>,
    pub gaussian: Vec<f64>,
    /// Index into `cells` of the maximum.
    pub max_index: usize,
    pub perimeter: Vec<usize>,
    pub minimum: Vec<usize>,
    /// Cells pulled down to the level of the maximum condition.
    pub repinned_high: usize,
    /// Cells raised to the level of the lower-limit condition.
    pub repinned_low: usize,
    pub coarsened: bool,
}

fn nearest_member(p: [f64; 2], index: &dyn Fn(i64, i64) -> Option<usize>) -> Option<usize> {
    let (rx, ry) = (p[0].round() as i64, p[1].round() as i64);
    if let Some(i) = index(rx, ry) {
        return Some(i);
    }
    let mut best: Option<(f64, usize)> = None;
    for dy in -1..=1 {
        for dx in -1..=1 {
            if let Some(i) = index(rx + dx, ry + dy) {
                let d = ((rx + dx) as f64 - p[0]).hypot((ry + dy) as f64 - p[1]);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
    }
    best.map(|(_, i)| i)
}

/// Simulate the Exp(1)-scale wind field inside one footprint.
#[allow(clippy::too_many_arguments)]
pub fn simulate_conditional_field<R: Rng + ?Sized>(
    ellipse: &Ellipse,
    features: &FootprintFeatures,
    gp: &GpParams,
    dist: &FootprintDistribution,
    storm_centre: [f64; 2],
    n_x: usize,
    n_y: usize,
    cfg: &FieldConfig,
    rng: &mut R,
) -> Result<FootprintField> {
    let cells = ellipse.cells(n_x, n_y);
    if cells.is_empty() {
        return Err(invalid("footprint ellipse contains no grid cells"));
    }
    let (x0, y0) = cells.iter().fold((usize::MAX, usize::MAX), |(a, b), &(x, y)| (a.min(x), b.min(y)));
    let (x1, y1) = cells.iter().fold((0, 0), |(a, b), &(x, y)| (a.max(x), b.max(y)));
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut lookup = vec![usize::MAX; bw * bh];
    for (k, &(x, y)) in cells.iter().enumerate() {
        lookup[(y - y0) * bw + (x - x0)] = k;
    }
    let index = |x: i64, y: i64| -> Option<usize> {
        if x < x0 as i64 || y < y0 as i64 || x > x1 as i64 || y > y1 as i64 {
            return None;
        }
        let k = lookup[(y as usize - y0) * bw + (x as usize - x0)];
        (k != usize::MAX).then_some(k)
    };

    let m = features.max_location(storm_centre);
    let max_index = nearest_member(m, &index).unwrap_or_else(|| {
        let d = |k: usize| (cells[k].0 as f64 - m[0]).hypot(cells[k].1 as f64 - m[1]);
        (0..cells.len()).fold(0, |b, k| if d(k) < d(b) { k } else { b })
    });

    let mut role = vec![0u8; cells.len()]; // 1 max, 2 perimeter, 3 minimum
    role[max_index] = 1;
    let mut perimeter = Vec::new();
    for k in 0..cfg.perimeter_points {
        let phi = 2.0 * PI * k as f64 / cfg.perimeter_points as f64;
        if let Some(i) = nearest_member(ellipse.boundary_point(phi), &index) {
            if role[i] == 0 {
                role[i] = 2;
                perimeter.push(i);
            }
        }
    }
    perimeter.sort_unstable();
    let mut minimum = Vec::new();
    if ellipse.contains(storm_centre) {
        let exp = Exp::new(cfg.min_rate).map_err(|_| invalid("minimum-ellipse rate must be positive"))?;
        let a = (cfg.min_axes[0] - exp.sample(rng)).max(1.0);
        let b = (cfg.min_axes[1] - exp.sample(rng)).max(1.0);
        let inner = Ellipse::from_axes(storm_centre, a, b, features.gamma);
        for (k, &(x, y)) in cells.iter().enumerate() {
            if role[k] == 0 && inner.contains([x as f64, y as f64]) {
                role[k] = 3;
                minimum.push(k);
            }
        }
    }

    let z_hi = norm_ppf(cfg.upper_quantile);
    let z_lo = norm_ppf(dist.cdf(dist.lower_limit()).clamp(1e-12, 0.5));
    let mut conditions: Vec<(usize, f64)> = vec![(max_index, z_hi)];
    conditions.extend(perimeter.iter().chain(&minimum).map(|&i| (i, z_lo)));

    let coords: Vec<[i64; 2]> = cells.iter().map(|&(x, y)| [x as i64, y as i64]).collect();
    let coarsened = cells.len() > cfg.max_exact_cells;
    let mut z = if coarsened {
        simulate_coarse(&coords, (x0, y0, bw, bh), gp, &conditions, cfg, rng)?
    } else {
        simulate_gaussian_field(&coords, gp, cfg.order, &conditions, cfg.jitter, rng)?
    };

    let (mut repinned_high, mut repinned_low) = (0, 0);
    for (k, v) in z.iter_mut().enumerate() {
        if k == max_index {
            continue;
        }
        if *v > z_hi {
            *v = z_hi;
            repinned_high += 1;
        } else if *v < z_lo {
            *v = z_lo;
            repinned_low += 1;
        }
    }
    let mut values: Vec<f64> = z.iter().map(|&g| dist.quantile(norm_cdf(g))).collect();
    values[max_index] = features.w;
    Ok(FootprintField {
        cells,
        values,
        gaussian: z,
        max_index,
        perimeter,
        minimum,
        repinned_high,
        repinned_low,
        coarsened,
    })
}

/// Simulate on a lattice of every `f`-th cell covering the bounding box and
/// refine bilinearly; conditioned cells are reset to their values afterwards.
fn simulate_coarse<R: Rng + ?Sized>(
    coords: &[[i64; 2]],
    bbox: (usize, usize, usize, usize),
    gp: &GpParams,
    conditions: &[(usize, f64)],
    cfg: &FieldConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (x0, y0, bw, bh) = bbox;
    let f = (((bw * bh) as f64 / cfg.max_exact_cells.max(1) as f64).sqrt().ceil() as usize).max(2);
    let (lw, lh) = ((bw - 1).div_ceil(f) + 1, (bh - 1).div_ceil(f) + 1);
    let lattice: Vec<[i64; 2]> = (0..lw * lh)
        .map(|k| [(x0 + (k % lw) * f) as i64, (y0 + (k / lw) * f) as i64])
        .collect();
    let mut lat_cond: Vec<(usize, f64)> = Vec::new();
    for &(i, v) in conditions {
        let [x, y] = coords[i];
        let lx = (((x - x0 as i64) as f64) / f as f64).round() as usize;
        let ly = (((y - y0 as i64) as f64) / f as f64).round() as usize;
        let k = ly.min(lh - 1) * lw + lx.min(lw - 1);
        if !lat_cond.iter().any(|&(j, _)| j == k) {
            lat_cond.push((k, v));
        }
    }
    let zl = simulate_gaussian_field(&lattice, gp, cfg.order, &lat_cond, cfg.jitter, rng)?;
    let mut z: Vec<f64> = coords
        .iter()
        .map(|&[x, y]| {
            let gx = (x - x0 as i64) as f64 / f as f64;
            let gy = (y - y0 as i64) as f64 / f as f64;
            let (ix, iy) = ((gx.floor() as usize).min(lw - 1), (gy.floor() as usize).min(lh - 1));
            let (jx, jy) = ((ix + 1).min(lw - 1), (iy + 1).min(lh - 1));
            let (tx, ty) = (gx - ix as f64, gy - iy as f64);
            let at = |a: usize, b: usize| zl[b * lw + a];
            (1.0 - ty) * ((1.0 - tx) * at(ix, iy) + tx * at(jx, iy)) + ty * ((1.0 - tx) * at(ix, jy) + tx * at(jx, jy))
        })
        .collect();
    for &(i, v) in conditions {
        z[i] = v;
    }
    Ok(z)
}

/// Footprint value distributions and the range model fitted to a catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindfieldModel {
    pub cfg: FieldConfig,
    pub alpha: AlphaModel,
    pub distribution: FootprintDistributionModel,
    /// Footprints whose range could not be estimated (too few cells or no
    /// spatial structure).
    pub alpha_failures: usize,
}

/// Fit the windfield model. `exp_stacks[i]` holds the Exp(1)-scale fields of
/// `tracks[i]`, indexed by track step.
pub fn fit_windfield_model(
    records: &[WindstormRecord],
    tracks: &[StormTrack],
    exp_stacks: &[GriddedFieldStack],
    cfg: &FieldConfig,
) -> Result<WindfieldModel> {
    if records.len() != tracks.len() || records.len() != exp_stacks.len() {
        return Err(invalid("records, tracks and field stacks must correspond"));
    }
    let mut footprints = Vec::new();
    let mut pairs = Vec::new();
    let mut alpha_failures = 0;
    for ((rec, track), stack) in records.iter().zip(tracks).zip(exp_stacks) {
        if stack.scale != ScaleTag::Exp1 {
            return Err(invalid("windfield fitting requires Exp(1)-scale stacks"));
        }
        for t in 1..=rec.steps.len().min(track.len()) {
            let Some(fp) = rec.footprint(t) else { continue };
            let Some(k) = stack.time_index(t as i64) else { continue };
            let raster = stack.raster(k);
            let cells: Vec<(usize, usize)> = fp
                .ellipse
                .cells(stack.grid.n_x, stack.grid.n_y)
                .into_iter()
                .filter(|&(x, y)| raster[stack.grid.index(x, y)].is_finite())
                .collect();
            if cells.is_empty() {
                continue;
            }
            let mut values: Vec<f64> = cells.iter().map(|&(x, y)| raster[stack.grid.index(x, y)] as f64).collect();
            let f = &fp.features;
            let coords: Vec<[f64; 2]> = cells.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
            let zeta = if f.b > 0.0 { (f.a / f.b).max(1.0) } else { 1.0 };
            let scores = gaussian_scores(&values);
            match estimate_alpha(&coords, &scores, anisotropy_angle(f.theta_e), zeta, &cfg.variogram) {
                Ok(a) => pairs.push((a, f.delta())),
                Err(_) => alpha_failures += 1,
            }
            values.sort_by(f64::total_cmp);
            footprints.push(TrainingFootprint { w: f.w, delta: f.delta(), omega: track.at(t).vorticity, values });
        }
    }
    let alpha = AlphaModel::fit(&pairs, cfg.alpha_bandwidth)?;
    let distribution = FootprintDistributionModel::new(footprints, cfg.dist_bandwidth, cfg.lower_quantile)?;
    Ok(WindfieldModel { cfg: *cfg, alpha, distribution, alpha_failures })
}

/// Observed-scale winds of one simulated windstorm: one raster per active
/// step, NaN outside the footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct WindstormFields {
    pub track_id: String,
    pub stack: GriddedFieldStack,
    pub repinned: usize,
    pub coarsened: usize,
    pub distribution_fallbacks: usize,
    /// Active steps whose footprint lies entirely off the grid (left NaN).
    pub off_grid: usize,
}

/// Simulate and back-transform the wind fields of every active step of a
/// record. Each step draws from its own stream keyed by `(seed, track, step)`.
pub fn synthesize_windstorm_fields(
    record: &WindstormRecord,
    track: &StormTrack,
    model: &WindfieldModel,
    marginal: &MarginalModel,
    seed: u64,
) -> Result<WindstormFields> {
    let grid: Grid = marginal.grid;
    let active: Vec<usize> = (1..=record.steps.len()).filter(|&t| record.is_active(t)).collect();
    let mut data = vec![f32::NAN; active.len() * grid.len()];
    let (mut repinned, mut coarsened, mut fallbacks, mut off_grid) = (0, 0, 0, 0);
    let track_key = key_str(&record.track_id);
    for (k, &t) in active.iter().enumerate() {
        let fp = record.footprint(t).expect("active step has a footprint");
        let f = &fp.features;
        let mut rng = stream(seed, &[track_key, t as u64, key_str("windfield")]);
        let centre = track.centre_cell(&grid, t);
        let centre = [centre.0, centre.1];
        let ellipse = f.ellipse(centre);
        if ellipse.cells(grid.n_x, grid.n_y).is_empty() {
            off_grid += 1;
            continue;
        }
        let alpha = model.alpha.sample(f.delta(), &mut rng);
        let gp = GpParams::for_footprint(f, alpha, model.cfg.kappa)?;
        let dist = model.distribution.distribution(f.w, f.delta(), track.at(t).vorticity);
        fallbacks += dist.nearest_fallback as usize;
        let field =
            simulate_conditional_field(&ellipse, f, &gp, &dist, centre, grid.n_x, grid.n_y, &model.cfg, &mut rng)?;
        repinned += field.repinned_high;
        coarsened += field.coarsened as usize;
        let raster = &mut data[k * grid.len()..(k + 1) * grid.len()];
        for (&(x, y), &e) in field.cells.iter().zip(&field.values) {
            let idx = grid.index(x, y);
            if let Ok(v) = marginal.from_exp(idx, e.max(0.0)) {
                raster[idx] = v as f32;
            }
        }
    }
    let times = active.iter().map(|&t| t as i64).collect();
    let stack = GriddedFieldStack::new(grid, times, ScaleTag::Observed, data)?;
    Ok(WindstormFields {
        track_id: record.track_id.clone(),
        stack,
        repinned,
        coarsened,
        distribution_fallbacks: fallbacks,
        off_grid,
    })
}
