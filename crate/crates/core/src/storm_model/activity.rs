//! Activation and termination of windstorm phases along a track.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::gam::{fit_logistic_gam, ActivityModel, GamConfig};
use crate::error::{invalid, Result};
use crate::extract::{phases_of, WindstormRecord};
use crate::track::StormTrack;

/// Result of the phase search along one track.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivePhasePlan {
    /// Initialisation step, if any phase exists.
    pub t_a: Option<usize>,
    /// Step of maximum vorticity.
    pub t_omega: usize,
    /// Disjoint, ordered, inclusive `(t_S, t_T)` intervals.
    pub phases: Vec<(usize, usize)>,
}

/// Callbacks driving [`plan_phases`].
pub trait PhaseHooks {
    /// Probability that a phase starts at `t`.
    fn p_active(&mut self, t: usize) -> f64;
    /// Probability that a phase reaching `from` ends before stepping to `to`.
    fn p_terminate(&mut self, from: usize, to: usize) -> f64;
    /// Step `t` joins a phase; `prev` is the neighbouring step it was reached
    /// from, or `None` when `t` starts a phase. Returning `false` vetoes the
    /// step, which then stays inactive: a phase being extended ends, and a
    /// phase being started is not.
    fn enter(&mut self, t: usize, prev: Option<usize>) -> bool;
    /// Bernoulli draw with success probability `p`.
    fn draw(&mut self, p: f64) -> bool;
}

/// Search a track of length `len` for active phases.
///
/// The initial phase is sought at `t_omega`, then successively forwards and
/// then backwards. A phase initialised at `t_omega` extends both ways; one
/// found on the forward (backward) search extends forwards (backwards) only.
/// Each extension step draws from the termination probability. Afterwards the
/// unexamined parts of the track are swept, moving away from the initial
/// phase, for reactivations, each of which extends away from it in turn.
pub fn plan_phases<H: PhaseHooks>(len: usize, t_omega: usize, hooks: &mut H) -> ActivePhasePlan {
    let mut plan = ActivePhasePlan { t_a: None, t_omega, phases: Vec::new() };
    if len == 0 {
        return plan;
    }
    let mut examined = vec![false; len + 2];
    let mut active = vec![false; len + 2];
    let order = core::iter::once(t_omega).chain(t_omega + 1..=len).chain((1..t_omega).rev());
    for t in order {
        examined[t] = true;
        let p = hooks.p_active(t);
        if hooks.draw(p) && hooks.enter(t, None) {
            plan.t_a = Some(t);
            break;
        }
    }
    let Some(t_a) = plan.t_a else { return plan };
    active[t_a] = true;

    let extend = |from: usize, dir: i64, hooks: &mut H, examined: &mut [bool], active: &mut [bool]| -> usize {
        let mut t = from;
        loop {
            let next = t as i64 + dir;
            if next < 1 || next > len as i64 {
                return t;
            }
            let next = next as usize;
            if examined[next] {
                return t;
            }
            examined[next] = true;
            let p = hooks.p_terminate(t, next);
            if hooks.draw(p) || !hooks.enter(next, Some(t)) {
                return t;
            }
            active[next] = true;
            t = next;
        }
    };
    let sweep = |start: i64, dir: i64, hooks: &mut H, examined: &mut [bool], active: &mut [bool]| {
        let mut t = start;
        while t >= 1 && t <= len as i64 {
            let s = t as usize;
            if !examined[s] {
                examined[s] = true;
                let p = hooks.p_active(s);
                if hooks.draw(p) && hooks.enter(s, None) {
                    active[s] = true;
                    let end = extend(s, dir, hooks, examined, active);
                    t = end as i64;
                }
            }
            t += dir;
        }
    };

    let forward = t_a >= t_omega;
    let backward = t_a <= t_omega;
    let mut hi = t_a;
    let mut lo = t_a;
    if forward {
        hi = extend(t_a, 1, hooks, &mut examined, &mut active);
    }
    if backward {
        lo = extend(t_a, -1, hooks, &mut examined, &mut active);
    }
    sweep(lo as i64 - 1, -1, hooks, &mut examined, &mut active);
    sweep(hi as i64 + 1, 1, hooks, &mut examined, &mut active);
    plan.phases = phases_of(|t| active[t], len);
    plan
}

/// Activation covariates: vorticity, longitude and latitude at each step.
pub const ACTIVATION_COVARIATES: [&str; 3] = ["vorticity", "lon", "lat"];
/// Termination covariates: `√Δ` and `W` of the step a phase is leaving.
pub const TERMINATION_COVARIATES: [&str; 2] = ["sqrt_delta", "W"];

fn check_pairs(records: &[WindstormRecord], tracks: &[StormTrack]) -> Result<()> {
    if records.len() != tracks.len() {
        return Err(invalid("records and tracks must pair up"));
    }
    for (r, t) in records.iter().zip(tracks) {
        if r.steps.len() != t.len() || r.track_id != t.id {
            return Err(invalid("record does not match its track"));
        }
    }
    Ok(())
}

/// Fit the activation model: activity at every track step on
/// (vorticity, lon, lat).
pub fn fit_activation(records: &[WindstormRecord], tracks: &[StormTrack], cfg: &GamConfig) -> Result<ActivityModel> {
    check_pairs(records, tracks)?;
    let mut cols = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut y = Vec::new();
    for (r, tr) in records.iter().zip(tracks) {
        for t in 1..=tr.len() {
            let p = tr.at(t);
            cols[0].push(p.vorticity);
            cols[1].push(p.lon);
            cols[2].push(p.lat);
            y.push(r.is_active(t));
        }
    }
    fit_logistic_gam(&ACTIVATION_COVARIATES, &cols, &y, cfg)
}

/// Fit the termination model: for every active step with a neighbour on the
/// track, whether that neighbour is inactive, on the step's (√Δ, W). Both
/// directions contribute since phases are extended both ways.
pub fn fit_termination(records: &[WindstormRecord], tracks: &[StormTrack], cfg: &GamConfig) -> Result<ActivityModel> {
    check_pairs(records, tracks)?;
    let mut cols = vec![Vec::new(), Vec::new()];
    let mut y = Vec::new();
    for (r, tr) in records.iter().zip(tracks) {
        for t in 1..=tr.len() {
            let Some(f) = r.footprint(t) else { continue };
            for next in [t.wrapping_sub(1), t + 1] {
                if next >= 1 && next <= tr.len() {
                    cols[0].push(f.features.delta().sqrt());
                    cols[1].push(f.features.w);
                    y.push(!r.is_active(next));
                }
            }
        }
    }
    fit_logistic_gam(&TERMINATION_COVARIATES, &cols, &y, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        pa: f64,
        pt: f64,
        script: Vec<bool>,
        entered: Vec<(usize, Option<usize>)>,
        veto: Vec<usize>,
    }

    impl PhaseHooks for Scripted {
        fn p_active(&mut self, _: usize) -> f64 {
            self.pa
        }
        fn p_terminate(&mut self, _: usize, _: usize) -> f64 {
            self.pt
        }
        fn enter(&mut self, t: usize, prev: Option<usize>) -> bool {
            self.entered.push((t, prev));
            !self.veto.contains(&t)
        }
        fn draw(&mut self, p: f64) -> bool {
            if self.script.is_empty() {
                p >= 1.0
            } else {
                self.script.remove(0)
            }
        }
    }

    fn hooks(pa: f64, pt: f64, script: &[u8]) -> Scripted {
        Scripted { pa, pt, script: script.iter().map(|&b| b == 1).collect(), entered: Vec::new(), veto: Vec::new() }
    }

    #[test]
    fn always_active_never_terminating() {
        let mut h = hooks(1.0, 0.0, &[]);
        let plan = plan_phases(8, 5, &mut h);
        assert_eq!(plan.t_a, Some(5));
        assert_eq!(plan.phases, vec![(1, 8)]);
        assert_eq!(h.entered[0], (5, None));
        assert_eq!(h.entered.len(), 8);
    }

    #[test]
    fn never_active() {
        let plan = plan_phases(8, 5, &mut hooks(0.0, 0.0, &[]));
        assert_eq!(plan.t_a, None);
        assert!(plan.phases.is_empty());
    }

    #[test]
    fn forward_then_backward_search_order() {
        // draws at t = 5, 6, 7 are 0, 0, 1
        let mut h = hooks(0.5, 1.0, &[0, 0, 1]);
        let plan = plan_phases(8, 5, &mut h);
        assert_eq!(plan.t_a, Some(7));
        assert_eq!(h.entered[0], (7, None));
    }

    #[test]
    fn backward_initialisation_extends_backwards() {
        // t = 5..8 inactive, t = 4 active, then never terminate
        let mut h = hooks(0.5, 0.0, &[0, 0, 0, 0, 1, 0, 0, 0]);
        let plan = plan_phases(8, 5, &mut h);
        assert_eq!(plan.t_a, Some(4));
        assert_eq!(plan.phases, vec![(1, 4)]);
        assert!(h.entered.iter().skip(1).all(|&(t, p)| p == Some(t + 1)));
    }

    #[test]
    fn reactivation_sweep() {
        // start at 5; terminate immediately both ways (consuming 4 and 6);
        // backward sweep: 3 inactive, 2 active then terminated towards 1;
        // forward sweep: 7 active, extends to 8.
        let mut h = hooks(0.5, 0.5, &[1, 1, 1, 0, 1, 1, 1, 0]);
        let plan = plan_phases(8, 5, &mut h);
        assert_eq!(plan.phases, vec![(2, 2), (5, 5), (7, 8)]);
    }

    #[test]
    fn vetoed_steps_stay_inactive() {
        // start vetoed at 5, accepted at 6; extension vetoed at 8 and 5 is
        // already examined, so the sweeps only reach 4..1
        let mut h = hooks(1.0, 0.0, &[]);
        h.veto = vec![5, 8];
        let plan = plan_phases(10, 5, &mut h);
        assert_eq!(plan.t_a, Some(6));
        assert_eq!(plan.phases, vec![(1, 4), (6, 7), (9, 10)]);
    }
}
