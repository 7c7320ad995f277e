//! Footprint extraction: smooth the relative wind field, threshold it,
//! cluster the exceedances, enclose the largest cluster in its minimum-area
//! ellipse, reject spurious footprints and summarise the rest as features.

pub mod dbscan;
pub mod features;
pub mod filter;
pub mod mvee;

use alloc::string::String;
use alloc::vec::Vec;
use num_traits::Float;
use serde::{Deserialize, Serialize};

pub use dbscan::dbscan_exceedances;
pub use features::{bearing, ellipse_to_features, offset, wrap_half_pi, wrap_pi, FootprintFeatures};
pub use filter::{gaussian_filter_2d, gaussian_filter_st};
pub use mvee::{khachiyan_mvee, Ellipse};

use crate::error::{invalid, Result};
use crate::grid::{CellMask, Grid, GriddedFieldStack, ScaleTag};
use crate::track::StormTrack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Exceedance threshold on the Exp(1) scale.
    pub v: f64,
    pub sigma_space: f64,
    pub sigma_time: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub mvee_tol: f64,
    /// Footprints further than this from the storm centre are rejected (cells).
    pub r_max: f64,
    /// Footprints with `√Δ` below this are rejected (cells).
    pub area_min: f64,
    /// Side of the square search window centred on the storm (km).
    pub window_km: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            v: 2.0,
            sigma_space: 4.0,
            sigma_time: 1.0,
            eps: 1.5,
            min_pts: 5,
            mvee_tol: 1e-4,
            r_max: 100.0,
            area_min: 10.0,
            window_km: 1600.0,
        }
    }
}

/// One extracted footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepFootprint {
    pub ellipse: Ellipse,
    pub features: FootprintFeatures,
}

/// Footprints of one windstorm along its track; `steps[t-1]` holds step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindstormRecord {
    pub track_id: String,
    pub steps: Vec<Option<StepFootprint>>,
}

impl WindstormRecord {
    pub fn empty(track_id: impl Into<String>, len: usize) -> Self {
        Self { track_id: track_id.into(), steps: alloc::vec![None; len] }
    }

    pub fn is_active(&self, t: usize) -> bool {
        self.steps.get(t.wrapping_sub(1)).is_some_and(|s| s.is_some())
    }

    pub fn footprint(&self, t: usize) -> Option<&StepFootprint> {
        self.steps.get(t.wrapping_sub(1)).and_then(|s| s.as_ref())
    }

    /// Maximal runs of active steps as inclusive `(t_S, t_T)` intervals.
    pub fn phases(&self) -> Vec<(usize, usize)> {
        phases_of(|t| self.is_active(t), self.steps.len())
    }

    pub fn n_active(&self) -> usize {
        self.steps.iter().filter(|s| s.is_some()).count()
    }
}

/// Maximal runs of `active` over `1..=len`.
pub fn phases_of(active: impl Fn(usize) -> bool, len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for t in 1..=len + 1 {
        let a = t <= len && active(t);
        match (a, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Full detail of one step's extraction, including the clustered cells.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDetail {
    pub footprint: StepFootprint,
    pub cluster: Vec<usize>,
    pub max_cell: usize,
    /// Whether the step survives the spurious-footprint rejection rules.
    pub accepted: bool,
}

/// Extract the footprint at one step from the raw and filtered Exp(1) rasters.
pub fn extract_step(
    raw: &[f32],
    filtered: &[f32],
    grid: &Grid,
    mask: Option<&CellMask>,
    storm_centre: [f64; 2],
    t: i64,
    cfg: &ExtractConfig,
) -> Result<Option<StepDetail>> {
    let half = 0.5 * cfg.window_km / grid.cell_size;
    let x0 = (storm_centre[0] - half).ceil().max(0.0) as i64;
    let x1 = ((storm_centre[0] + half).floor() as i64).min(grid.n_x as i64 - 1);
    let y0 = (storm_centre[1] - half).ceil().max(0.0) as i64;
    let y1 = ((storm_centre[1] + half).floor() as i64).min(grid.n_y as i64 - 1);
    if x0 > x1 || y0 > y1 {
        return Ok(None);
    }
    let (wx, wy) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
    let to_grid = |i: usize| grid.index(x0 as usize + i % wx, y0 as usize + i / wx);
    let window: Vec<f64> = (0..wx * wy).map(|i| filtered[to_grid(i)] as f64).collect();
    let clusters = dbscan_exceedances(&window, wx, wy, cfg.v, cfg.eps, cfg.min_pts, |i| {
        mask.is_none_or(|m| m.is_included(to_grid(i)))
    });
    if clusters.is_empty() {
        return Ok(None);
    }
    let centroid_dist = |c: &Vec<usize>| {
        let n = c.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for &i in c {
            let (x, y) = grid.coords(to_grid(i));
            sx += x as f64;
            sy += y as f64;
        }
        (sx / n - storm_centre[0]).hypot(sy / n - storm_centre[1])
    };
    let mut best = 0;
    for k in 1..clusters.len() {
        let (a, b) = (clusters[k].len(), clusters[best].len());
        if a > b || (a == b && centroid_dist(&clusters[k]) < centroid_dist(&clusters[best])) {
            best = k;
        }
    }
    let cluster: Vec<usize> = clusters[best].iter().map(|&i| to_grid(i)).collect();
    let points: Vec<[f64; 2]> = cluster
        .iter()
        .map(|&i| {
            let (x, y) = grid.coords(i);
            [x as f64, y as f64]
        })
        .collect();
    let ellipse = khachiyan_mvee(&points, cfg.mvee_tol)?;
    let mut max_cell = None;
    let mut max_val = f64::NEG_INFINITY;
    for (x, y) in ellipse.cells(grid.n_x, grid.n_y) {
        let i = grid.index(x, y);
        let v = raw[i] as f64;
        if v > max_val {
            max_val = v;
            max_cell = Some(i);
        }
    }
    let Some(max_cell) = max_cell else { return Ok(None) };
    if !(max_val > 0.0) {
        return Ok(None);
    }
    let (mx, my) = grid.coords(max_cell);
    let features = ellipse_to_features(&ellipse, storm_centre, [mx as f64, my as f64], max_val, t)?;
    let accepted = features.r_e <= cfg.r_max && features.delta().sqrt() >= cfg.area_min;
    Ok(Some(StepDetail { footprint: StepFootprint { ellipse, features }, cluster, max_cell, accepted }))
}

/// Run the extraction pipeline along a track. The stack must be on the Exp(1)
/// scale and contain the track's time steps; missing steps are inactive.
pub fn extract_windstorm(
    stack: &GriddedFieldStack,
    track: &StormTrack,
    mask: Option<&CellMask>,
    cfg: &ExtractConfig,
) -> Result<WindstormRecord> {
    if stack.scale != ScaleTag::Exp1 {
        return Err(invalid("extraction requires an Exp(1)-scale stack"));
    }
    let filtered = gaussian_filter_st(stack, cfg.sigma_space, cfg.sigma_time);
    let mut record = WindstormRecord::empty(track.id.clone(), track.len());
    for t in 1..=track.len() {
        let Some(k) = stack.time_index(t as i64) else { continue };
        let centre = track.centre_cell(&stack.grid, t);
        let detail = extract_step(stack.raster(k), filtered.raster(k), &stack.grid, mask, [centre.0, centre.1], t as i64, cfg)?;
        if let Some(d) = detail.filter(|d| d.accepted) {
            record.steps[t - 1] = Some(d.footprint);
        }
    }
    Ok(record)
}

/// Values of a raster at the cells inside an ellipse.
pub fn values_in_ellipse(raster: &[f32], grid: &Grid, ellipse: &Ellipse) -> Vec<f64> {
    ellipse.cells(grid.n_x, grid.n_y).into_iter().map(|(x, y)| raster[grid.index(x, y)] as f64).collect()
}
