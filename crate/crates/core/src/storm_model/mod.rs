//! Windstorm activity and footprint evolution along cyclone tracks.

pub mod activity;
pub mod gam;
pub mod transition;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::extract::{FootprintFeatures, StepFootprint, WindstormRecord};
use crate::grid::Grid;
use crate::track::StormTrack;
use activity::{fit_activation, fit_termination, plan_phases, ActivePhasePlan, PhaseHooks};
use gam::{ActivityModel, GamConfig};
use transition::{fit_transition_model, FeatureSimulator, InitialModel, SimCounters, TransitionConfig, TransitionModel};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StormModelConfig {
    pub gam: GamConfig,
    pub transition: TransitionConfig,
}

/// Activity and footprint-evolution models fitted to a windstorm catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StormModel {
    pub activation: ActivityModel,
    pub termination: ActivityModel,
    pub transition: TransitionModel,
    pub initial: InitialModel,
}

pub fn fit_storm_model(records: &[WindstormRecord], tracks: &[StormTrack], cfg: &StormModelConfig) -> Result<StormModel> {
    let activation = fit_activation(records, tracks, &cfg.gam)?;
    let termination = fit_termination(records, tracks, &cfg.gam)?;
    let (transition, initial) = fit_transition_model(records, tracks, &cfg.transition)?;
    Ok(StormModel { activation, termination, transition, initial })
}

/// One simulated windstorm: its phase plan, footprint features and the
/// fallbacks taken.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStorm {
    pub plan: ActivePhasePlan,
    pub record: WindstormRecord,
    pub counters: SimCounters,
}

struct StormHooks<'a, R: Rng + ?Sized> {
    model: &'a StormModel,
    track: &'a StormTrack,
    sim: FeatureSimulator<'a>,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> PhaseHooks for StormHooks<'_, R> {
    fn p_active(&mut self, t: usize) -> f64 {
        let p = self.track.at(t);
        self.model.activation.probability(&[p.vorticity, p.lon, p.lat])
    }

    fn p_terminate(&mut self, from: usize, _to: usize) -> f64 {
        let f = self.sim.features[from - 1].expect("phase steps are simulated on entry");
        self.model.termination.probability(&[f.delta().sqrt(), f.w])
    }

    fn enter(&mut self, t: usize, prev: Option<usize>) -> bool {
        let kept = self.sim.enter(t, prev, self.rng);
        if !kept {
            self.sim.counters.screened += 1;
            self.sim.discard(t);
        }
        kept
    }

    fn draw(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }
}

fn to_record(track: &StormTrack, grid: &Grid, features: &[Option<FootprintFeatures>]) -> WindstormRecord {
    let mut rec = WindstormRecord::empty(track.id.clone(), track.len());
    for (t, f) in features.iter().enumerate() {
        if let Some(f) = f {
            let (cx, cy) = track.centre_cell(grid, t + 1);
            rec.steps[t] = Some(StepFootprint { ellipse: f.ellipse([cx, cy]), features: *f });
        }
    }
    rec
}

/// Plan the active phases of a track and simulate footprint features along
/// them. Phase termination depends on the simulated features, so both are
/// drawn together from one random stream. A simulated footprint that extraction
/// would discard as spurious leaves its step inactive.
pub fn simulate_storm<R: Rng + ?Sized>(model: &StormModel, track: &StormTrack, grid: &Grid, rng: &mut R) -> SimulatedStorm {
    let sim = FeatureSimulator::new(&model.transition, &model.initial, track);
    let mut hooks = StormHooks { model, track, sim, rng };
    let plan = plan_phases(track.len(), track.t_max_vorticity(), &mut hooks);
    let record = to_record(track, grid, &hooks.sim.features);
    SimulatedStorm { plan, record, counters: hooks.sim.counters }
}

/// Simulate footprint features for a given phase plan. The initial phase is
/// propagated forwards then backwards from `t_A`; phases before it are
/// propagated backwards from their end, phases after it forwards from their
/// start. Every planned step keeps its features, screened or not.
pub fn simulate_footprints<R: Rng + ?Sized>(
    track: &StormTrack,
    plan: &ActivePhasePlan,
    transition: &TransitionModel,
    initial: &InitialModel,
    grid: &Grid,
    rng: &mut R,
) -> Result<(WindstormRecord, SimCounters)> {
    let mut sim = FeatureSimulator::new(transition, initial, track);
    if let Some(t_a) = plan.t_a {
        let home = plan
            .phases
            .iter()
            .position(|&(s, e)| s <= t_a && t_a <= e)
            .ok_or_else(|| invalid("initialisation step lies outside every phase"))?;
        for (i, &(s, e)) in plan.phases.iter().enumerate() {
            if s < 1 || e < s || e > track.len() {
                return Err(invalid("phase outside the track"));
            }
            if i > 0 && s <= plan.phases[i - 1].1 {
                return Err(invalid("phases must be disjoint and ordered"));
            }
        }
        let (s, e) = plan.phases[home];
        sim.enter(t_a, None, rng);
        for t in t_a + 1..=e {
            sim.enter(t, Some(t - 1), rng);
        }
        for t in (s..t_a).rev() {
            sim.enter(t, Some(t + 1), rng);
        }
        for &(s, e) in plan.phases[..home].iter().rev() {
            sim.enter(e, None, rng);
            for t in (s..e).rev() {
                sim.enter(t, Some(t + 1), rng);
            }
        }
        for &(s, e) in &plan.phases[home + 1..] {
            sim.enter(s, None, rng);
            for t in s + 1..=e {
                sim.enter(t, Some(t - 1), rng);
            }
        }
    }
    let counters = sim.counters;
    Ok((to_record(track, grid, &sim.features), counters))
}
