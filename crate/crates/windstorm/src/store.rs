//! Model files: the marginal model and the fitted model bundle directory.
//!
//! A marginal model is `margins.json` (grid, threshold quantile and one
//! `{u, sigma, xi, lambda, n_exceed, n}` record per cell, `null` for masked
//! cells) plus `margins_below.wsf`, a field stack whose raster `k` holds each
//! cell's `k`-th smallest below-threshold value (NaN past the end of a cell's
//! sample). A bundle directory adds `storm_model.json` and `windfield.json`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use windstorm_core::margins::{CellMarginal, GpdFit, MarginalModel};
use windstorm_core::storm_model::StormModel;
use windstorm_core::windfield::WindfieldModel;
use windstorm_core::{FittedStormModel, Grid, GriddedFieldStack, ScaleTag};

use crate::error::{Error, Result};
use crate::formats::{read_field_stack, write_field_stack};

pub const MARGINS_JSON: &str = "margins.json";
pub const MARGINS_BELOW: &str = "margins_below.wsf";
pub const STORM_JSON: &str = "storm_model.json";
pub const WINDFIELD_JSON: &str = "windfield.json";

#[derive(Serialize, Deserialize)]
struct CellRecord {
    u: f64,
    sigma: f64,
    xi: f64,
    lambda: f64,
    n_exceed: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct MarginsDoc {
    grid: Grid,
    quantile: f64,
    cells: Vec<Option<CellRecord>>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::content(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::content(path, e.to_string()))
}

pub fn write_margins(dir: &Path, m: &MarginalModel) -> Result<()> {
    let cells = m
        .cells
        .iter()
        .map(|c| {
            c.as_ref().map(|c| CellRecord {
                u: c.fit.u,
                sigma: c.fit.sigma,
                xi: c.fit.xi,
                lambda: c.fit.lambda,
                n_exceed: c.fit.n_exceed,
                n: c.n,
            })
        })
        .collect();
    write_json(&dir.join(MARGINS_JSON), &MarginsDoc { grid: m.grid, quantile: m.quantile, cells })?;
    let depth = m.cells.iter().flatten().map(|c| c.below.len()).max().unwrap_or(0);
    let n = m.grid.len();
    let mut data = vec![f32::NAN; depth * n];
    for (idx, c) in m.cells.iter().enumerate() {
        for (k, &v) in c.iter().flat_map(|c| c.below.iter().enumerate()) {
            data[k * n + idx] = v;
        }
    }
    let stack = GriddedFieldStack::new(m.grid, (1..=depth as i64).collect(), ScaleTag::Observed, data)?;
    write_field_stack(&dir.join(MARGINS_BELOW), &stack)
}

pub fn read_margins(dir: &Path) -> Result<MarginalModel> {
    let path = dir.join(MARGINS_JSON);
    let doc: MarginsDoc = read_json(&path)?;
    let below_path = dir.join(MARGINS_BELOW);
    let below = read_field_stack(&below_path)?;
    if below.grid.n_x != doc.grid.n_x || below.grid.n_y != doc.grid.n_y {
        return Err(Error::content(&below_path, "grid does not match margins.json"));
    }
    let n = doc.grid.len();
    if doc.cells.len() != n {
        return Err(Error::content(&path, "cell count does not match the grid"));
    }
    let cells = doc
        .cells
        .into_iter()
        .enumerate()
        .map(|(idx, c)| {
            c.map(|c| {
                let below = (0..below.n_t()).map(|k| below.raster(k)[idx]).take_while(|v| !v.is_nan()).collect();
                let fit = GpdFit { sigma: c.sigma, xi: c.xi, u: c.u, lambda: c.lambda, n_exceed: c.n_exceed };
                CellMarginal { fit, n: c.n, below }
            })
        })
        .collect();
    MarginalModel::new(doc.grid, doc.quantile, cells).map_err(|e| Error::content(&path, e.to_string()))
}

pub fn write_bundle(dir: &Path, model: &FittedStormModel) -> Result<()> {
    write_margins(dir, &model.margins)?;
    write_json(&dir.join(STORM_JSON), &model.storm)?;
    write_json(&dir.join(WINDFIELD_JSON), &model.windfield)
}

pub fn read_bundle(dir: &Path) -> Result<FittedStormModel> {
    let margins = read_margins(dir)?;
    let storm: StormModel = read_json(&dir.join(STORM_JSON))?;
    let windfield: WindfieldModel = read_json(&dir.join(WINDFIELD_JSON))?;
    Ok(FittedStormModel { margins, storm, windfield })
}
