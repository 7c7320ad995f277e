//! Pipeline stages, parallel over cells, tracks or catalog entries. Each
//! unit of work is independent and draws from its own random stream, and
//! results are collected in input order, so output does not depend on the
//! number of threads.

use log::{info, warn};
use rayon::prelude::*;
use windstorm_core::extract::{extract_windstorm, ExtractConfig, WindstormRecord};
use windstorm_core::margins::{fit_cell, gather_cell_samples, MarginalModel};
use windstorm_core::model::{assign_tracks, fit_model, CatalogEntry};
use windstorm_core::{CellMask, FitConfig, FittedStormModel, GriddedFieldStack, StormTrack};

use crate::config::MarginsConfig;
use crate::error::{Error, Result};

/// Run `f` on a pool of `threads` workers (0: rayon's default).
pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

pub fn fit_margins(stacks: &[GriddedFieldStack], mask: &CellMask, cfg: &MarginsConfig) -> Result<MarginalModel> {
    let samples = gather_cell_samples(stacks)?;
    let grid = stacks[0].grid;
    if mask.grid.n_x != grid.n_x || mask.grid.n_y != grid.n_y {
        return Err(windstorm_core::Error::InvalidInput("mask grid does not match the field stacks".into()).into());
    }
    let cells = samples
        .par_iter()
        .enumerate()
        .map(|(idx, s)| fit_cell(grid, mask, idx, s, cfg.quantile, cfg.min_exceedances))
        .collect::<windstorm_core::Result<Vec<_>>>()?;
    Ok(MarginalModel::new(grid, cfg.quantile, cells)?)
}

/// Transform observed stacks to Exp(1) margins.
pub fn to_exp(margins: &MarginalModel, stacks: &[GriddedFieldStack]) -> Result<Vec<GriddedFieldStack>> {
    let out = stacks.par_iter().map(|s| margins.to_exp_margins(s)).collect::<windstorm_core::Result<Vec<_>>>()?;
    let capped: usize = out.iter().map(|(_, r)| r.capped).sum();
    if capped > 0 {
        warn!("{capped} values beyond a finite fitted endpoint were mapped to the Exp(1) cap");
    }
    Ok(out.into_iter().map(|(s, _)| s).collect())
}

pub fn extract(
    exp_stacks: &[GriddedFieldStack],
    tracks: &[StormTrack],
    mask: Option<&CellMask>,
    cfg: &ExtractConfig,
) -> Result<Vec<WindstormRecord>> {
    if exp_stacks.len() != tracks.len() {
        return Err(Error::Usage("one field stack per track is required".into()));
    }
    let records = exp_stacks
        .par_iter()
        .zip(tracks)
        .map(|(s, t)| extract_windstorm(s, t, mask, cfg))
        .collect::<windstorm_core::Result<Vec<_>>>()?;
    let active: usize = records.iter().map(|r| r.n_active()).sum();
    info!("extracted {active} footprints from {} tracks", tracks.len());
    Ok(records)
}

pub fn fit(
    margins: MarginalModel,
    records: &[WindstormRecord],
    tracks: &[StormTrack],
    exp_stacks: &[GriddedFieldStack],
    cfg: &FitConfig,
) -> Result<FittedStormModel> {
    let model = fit_model(margins, records, tracks, exp_stacks, cfg)?;
    if model.windfield.alpha_failures > 0 {
        info!("range estimation failed for {} footprints", model.windfield.alpha_failures);
    }
    Ok(model)
}

/// Simulate `n` catalog entries; entry `i` follows track `i mod tracks.len()`.
pub fn simulate(
    model: &FittedStormModel,
    tracks: &[StormTrack],
    n: usize,
    seed: u64,
    with_fields: bool,
) -> Result<Vec<CatalogEntry>> {
    let plan = assign_tracks(tracks, n)?;
    let entries = plan
        .par_iter()
        .map(|&(i, track)| model.simulate_entry(track, i, seed, with_fields))
        .collect::<windstorm_core::Result<Vec<_>>>()?;
    Ok(entries)
}
