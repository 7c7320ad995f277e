//! The fitted model bundle and catalog simulation on top of it.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::extract::WindstormRecord;
use crate::grid::GriddedFieldStack;
use crate::margins::MarginalModel;
use crate::rng::{key_str, stream};
use crate::storm_model::{fit_storm_model, simulate_storm, SimulatedStorm, StormModel, StormModelConfig};
use crate::track::StormTrack;
use crate::windfield::{fit_windfield_model, synthesize_windstorm_fields, FieldConfig, WindfieldModel, WindstormFields};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub storm: StormModelConfig,
    pub windfield: FieldConfig,
}

/// Everything needed to simulate windstorms along new tracks: the marginal
/// model of the training grid, activity and footprint-evolution models, and
/// the wind-field hyper-models. Immutable after fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedStormModel {
    pub margins: MarginalModel,
    pub storm: StormModel,
    pub windfield: WindfieldModel,
}

/// Fit the storm and wind-field models. `exp_stacks[i]` holds the Exp(1)
/// fields of `tracks[i]`, on the grid of `margins`.
pub fn fit_model(
    margins: MarginalModel,
    records: &[WindstormRecord],
    tracks: &[StormTrack],
    exp_stacks: &[GriddedFieldStack],
    cfg: &FitConfig,
) -> Result<FittedStormModel> {
    if exp_stacks.iter().any(|s| s.grid.n_x != margins.grid.n_x || s.grid.n_y != margins.grid.n_y) {
        return Err(invalid("field stacks do not match the marginal model grid"));
    }
    let storm = fit_storm_model(records, tracks, &cfg.storm)?;
    let windfield = fit_windfield_model(records, tracks, exp_stacks, &cfg.windfield)?;
    Ok(FittedStormModel { margins, storm, windfield })
}

/// Identifier of replicate `replicate` simulated along `track_id`.
pub fn entry_id(track_id: &str, replicate: usize) -> String {
    format!("{track_id}#{replicate}")
}

/// One simulated catalog entry: footprints along a track and, optionally,
/// their wind fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub replicate: usize,
    pub source_track: String,
    pub storm: SimulatedStorm,
    pub fields: Option<WindstormFields>,
}

impl FittedStormModel {
    /// Simulate replicate `replicate` along `track`. Footprints draw from the
    /// stream `(seed, track id, replicate)` and wind fields from per-step
    /// streams keyed by the entry id, so the entry does not depend on which
    /// other entries are simulated or in what order.
    pub fn simulate_entry(&self, track: &StormTrack, replicate: usize, seed: u64, with_fields: bool) -> Result<CatalogEntry> {
        let mut rng = stream(seed, &[key_str(&track.id), replicate as u64]);
        let mut storm = simulate_storm(&self.storm, track, &self.margins.grid, &mut rng);
        storm.record.track_id = entry_id(&track.id, replicate);
        let fields = if with_fields {
            Some(synthesize_windstorm_fields(&storm.record, track, &self.windfield, &self.margins, seed)?)
        } else {
            None
        };
        Ok(CatalogEntry { replicate, source_track: track.id.clone(), storm, fields })
    }
}

/// Tracks assigned to `n` catalog entries: entry `i` follows track
/// `i mod tracks.len()`.
pub fn assign_tracks(tracks: &[StormTrack], n: usize) -> Result<Vec<(usize, &StormTrack)>> {
    if tracks.is_empty() {
        return Err(invalid("no tracks to simulate along"));
    }
    Ok((0..n).map(|i| (i, &tracks[i % tracks.len()])).collect())
}
