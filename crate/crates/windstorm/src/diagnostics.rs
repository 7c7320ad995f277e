//! Eulerian diagnostics of a simulated catalog against the training data:
//! site series, tail dependence, return levels, QQ comparisons of footprint
//! features and footprint-centre densities.

use rand::Rng;
use serde::Serialize;
use windstorm_core::analysis::{
    chi_estimate, empirical_return_level, qq_data_grouped, return_level, spatial_density, spearman, ChiEstimate, QqConfig,
    QqData,
};
use windstorm_core::extract::WindstormRecord;
use windstorm_core::margins::MarginalModel;
use windstorm_core::{Grid, GriddedFieldStack, StormTrack};

use crate::error::Result;

/// One simulated windstorm with the track it followed and, when simulated,
/// its observed-scale fields (one raster per active step, NaN outside the
/// footprint).
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedWindstorm {
    pub record: WindstormRecord,
    pub track: StormTrack,
    pub fields: Option<GriddedFieldStack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Site {
    pub x: usize,
    pub y: usize,
}

/// Number of simulated steps with a wind value at each cell.
pub fn coverage(catalog: &[SimulatedWindstorm], grid: &Grid) -> Vec<usize> {
    let mut cover = vec![0usize; grid.len()];
    for f in catalog.iter().filter_map(|s| s.fields.as_ref()) {
        for k in 0..f.n_t() {
            for (c, v) in cover.iter_mut().zip(f.raster(k)) {
                *c += v.is_finite() as usize;
            }
        }
    }
    cover
}

/// The most frequently covered cell and the cell `separation` cells east of
/// it (west when east leaves the grid).
pub fn default_sites(cover: &[usize], grid: &Grid, separation: usize) -> [Site; 2] {
    let best = (0..grid.len()).max_by_key(|&i| (cover[i], std::cmp::Reverse(i))).unwrap_or(0);
    let (x, y) = grid.coords(best);
    let x2 = if x + separation < grid.n_x { x + separation } else { x.saturating_sub(separation) };
    [Site { x, y }, Site { x: x2, y }]
}

/// `k` cells spread evenly by rank over the `pool` most covered cells.
pub fn spread_cells(cover: &[usize], k: usize, pool: usize) -> Vec<usize> {
    let mut cells: Vec<usize> = (0..cover.len()).filter(|&i| cover[i] > 0).collect();
    cells.sort_by_key(|&i| (std::cmp::Reverse(cover[i]), i));
    cells.truncate(pool.max(k));
    let stride = (cells.len() / k.max(1)).max(1);
    cells.into_iter().step_by(stride).take(k).collect()
}

fn site_series(catalog: &[SimulatedWindstorm], cell: usize, missing: f64, map: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for s in catalog {
        let start = out.len();
        out.resize(start + s.track.len(), missing);
        if let Some(f) = &s.fields {
            for (k, &t) in f.times.iter().enumerate() {
                let v = f.raster(k)[cell];
                if v.is_finite() {
                    out[start + t as usize - 1] = map(v as f64);
                }
            }
        }
    }
    out
}

/// Exp(1)-scale series at a cell: every step of every simulated track in
/// catalog order, 0 where the cell is outside the footprint.
pub fn exp_series(catalog: &[SimulatedWindstorm], margins: &MarginalModel, cell: usize) -> Result<Vec<f64>> {
    let m = margins.cell(cell)?;
    Ok(site_series(catalog, cell, 0.0, |v| m.to_exp(v).0))
}

/// Observed-scale series at a cell, −∞ where the cell is outside the footprint.
pub fn observed_series(catalog: &[SimulatedWindstorm], cell: usize) -> Vec<f64> {
    site_series(catalog, cell, f64::NEG_INFINITY, |v| v)
}

pub fn chi_between(
    catalog: &[SimulatedWindstorm],
    margins: &MarginalModel,
    a: Site,
    b: Site,
    q: &[f64],
    run_length: usize,
) -> Result<ChiEstimate> {
    let g = &margins.grid;
    let s1 = exp_series(catalog, margins, g.index(a.x, a.y))?;
    let s2 = exp_series(catalog, margins, g.index(b.x, b.y))?;
    Ok(chi_estimate(&s1, &s2, q, run_length)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnLevelRow {
    pub x: usize,
    pub y: usize,
    /// Level from the marginal model.
    pub model: f64,
    /// Empirical level of the simulated catalog (`None` when the catalog is
    /// too short).
    pub simulated: Option<f64>,
}

impl ReturnLevelRow {
    pub fn relative_error(&self) -> Option<f64> {
        self.simulated.map(|s| (s - self.model).abs() / self.model)
    }
}

/// Compare `period`-period return levels. The catalog spans
/// `entries / storms_per_year` periods, and each period holds
/// `storms_per_year` storms of the catalog's mean track length.
pub fn return_levels(
    catalog: &[SimulatedWindstorm],
    margins: &MarginalModel,
    cells: &[usize],
    period: f64,
    storms_per_year: f64,
) -> Result<Vec<ReturnLevelRow>> {
    let mean_len = catalog.iter().map(|s| s.track.len()).sum::<usize>() as f64 / catalog.len().max(1) as f64;
    let n_periods = catalog.len() as f64 / storms_per_year;
    cells
        .iter()
        .map(|&idx| {
            let fit = margins.cell(idx)?.fit;
            let model = return_level(&fit, period, storms_per_year * mean_len)?;
            let simulated = empirical_return_level(&observed_series(catalog, idx), n_periods, period);
            let (x, y) = margins.grid.coords(idx);
            Ok(ReturnLevelRow { x, y, model, simulated })
        })
        .collect()
}

/// Footprint features compared by QQ plots.
pub const QQ_VARIABLES: [&str; 3] = ["sqrt_delta", "W", "R_E"];

fn feature_groups(records: &[WindstormRecord], k: usize) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            r.steps
                .iter()
                .flatten()
                .map(|fp| match k {
                    0 => fp.features.delta().sqrt(),
                    1 => fp.features.w,
                    _ => fp.features.r_e,
                })
                .collect::<Vec<f64>>()
        })
        .filter(|g| !g.is_empty())
        .collect()
}

/// QQ data of each of [`QQ_VARIABLES`], observed against simulated, with
/// bands from resampling whole storms.
pub fn qq_features<R: Rng + ?Sized>(
    observed: &[WindstormRecord],
    simulated: &[WindstormRecord],
    cfg: &QqConfig,
    rng: &mut R,
) -> Result<Vec<QqData>> {
    (0..QQ_VARIABLES.len())
        .map(|k| Ok(qq_data_grouped(&feature_groups(observed, k), &feature_groups(simulated, k), cfg, rng)?))
        .collect()
}

/// Spearman correlations of (Ω, √Δ) and (√Δ, W) over all active steps.
pub fn rank_correlations(records: &[WindstormRecord], tracks: &[&StormTrack]) -> Result<[f64; 2]> {
    let (mut om, mut sd, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (r, tr) in records.iter().zip(tracks) {
        for (i, fp) in r.steps.iter().enumerate() {
            if let Some(fp) = fp {
                om.push(tr.at(i + 1).vorticity);
                sd.push(fp.features.delta().sqrt());
                w.push(fp.features.w);
            }
        }
    }
    Ok([spearman(&om, &sd)?, spearman(&sd, &w)?])
}

/// Density of footprint centres over the grid.
pub fn centre_density(records: &[WindstormRecord], grid: &Grid, sigma: Option<f64>) -> Result<Vec<f64>> {
    let pts: Vec<[f64; 2]> = records.iter().flat_map(|r| r.steps.iter().flatten().map(|fp| fp.ellipse.c)).collect();
    Ok(spatial_density(&pts, grid.n_x, grid.n_y, sigma)?)
}
