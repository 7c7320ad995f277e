use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use windstorm_core::extract::{FootprintFeatures, StepFootprint, WindstormRecord};
use windstorm_core::kde::Bandwidth;
use windstorm_core::storm_model::activity::ActivePhasePlan;
use windstorm_core::storm_model::simulate_footprints;
use windstorm_core::storm_model::transition::{
    component_dims, fit_transition_model, max_inside, Component, TransitionConfig, COMPONENTS,
};
use windstorm_core::{Grid, StormTrack, TrackPoint};

fn grid() -> Grid {
    Grid::new(128, 128, 16.0, -30.0, 45.0).unwrap()
}

fn track(len: usize) -> StormTrack {
    let pts = (1..=len)
        .map(|i| {
            let x = i as f64;
            TrackPoint { t: i as i64, lon: -20.0 + 1.3 * x, lat: 50.0 + 0.4 * x + 0.02 * x * x, vorticity: 1.0 + 0.3 * x - 0.01 * x * x }
        })
        .collect();
    StormTrack::new("S1", pts).unwrap()
}

fn smooth_features(t: usize) -> FootprintFeatures {
    let x = t as f64;
    FootprintFeatures {
        t: t as i64,
        a: 10.0 + x,
        b: 6.0 + 0.3 * x,
        w: 3.0 + 0.2 * x,
        r_e: 5.0 + x,
        theta_e: 0.5 + 0.05 * x,
        r_w: 2.0 + 0.1 * x,
        theta_w: 0.3 + 0.02 * x,
        gamma: 0.2 + 0.045 * x,
    }
}

fn record(track: &StormTrack, active: impl Fn(usize) -> bool) -> WindstormRecord {
    let g = grid();
    let mut rec = WindstormRecord::empty(track.id.clone(), track.len());
    for t in 1..=track.len() {
        if active(t) {
            let f = smooth_features(t);
            let (cx, cy) = track.centre_cell(&g, t);
            rec.steps[t - 1] = Some(StepFootprint { ellipse: f.ellipse([cx, cy]), features: f });
        }
    }
    rec
}

fn degenerate_cfg(refit_backward: bool) -> TransitionConfig {
    let bw = Bandwidth { factor: 1e-3, diagonal: false };
    TransitionConfig { bandwidth: bw, initial_bandwidth: bw, refit_backward, ..TransitionConfig::default() }
}

fn assert_reproduces(rec: &WindstormRecord, sim: &WindstormRecord) {
    for t in 1..=rec.steps.len() {
        let want = rec.footprint(t).unwrap().features;
        let got = sim.footprint(t).unwrap().features;
        for c in COMPONENTS {
            let (w, g) = (c.get(&want), c.get(&got));
            assert!((g - w).abs() <= 0.01 * w.abs(), "step {t} {}: {g} vs {w}", c.name());
        }
    }
}

#[test]
fn w_density_follows_recipe() {
    let tr = track(10);
    let rec = record(&tr, |_| true);
    let (model, initial) = fit_transition_model(&[rec], &[tr], &TransitionConfig::default()).unwrap();
    let w = &model.models[Component::W as usize];
    assert_eq!(w[1].as_ref().unwrap().names, ["W", "W[-1]", "W[-2]", "R_E", "Theta_E", "A", "B", "lon", "lat"]);
    assert_eq!(w[0].as_ref().unwrap().kde.n(), 9);
    assert_eq!(w[1].as_ref().unwrap().kde.n(), 8);
    for c in COMPONENTS {
        for l in 1..=2 {
            assert_eq!(model.models[c as usize][l - 1].as_ref().unwrap().names, component_dims(c, l));
        }
    }
    assert_eq!(initial.model.n_free, 8);
    assert_eq!(initial.model.kde.n(), 10);
}

#[test]
fn tuples_do_not_span_phase_gaps() {
    let tr = track(12);
    // phases [1, 5] and [8, 12]
    let rec = record(&tr, |t| !(6..=7).contains(&t));
    let (model, _) = fit_transition_model(&[rec], &[tr], &TransitionConfig::default()).unwrap();
    for c in COMPONENTS {
        assert_eq!(model.models[c as usize][0].as_ref().unwrap().kde.n(), 4 + 4);
        assert_eq!(model.models[c as usize][1].as_ref().unwrap().kde.n(), 3 + 3);
    }
    // every one-lag tuple pairs consecutive steps of a phase
    let a = model.models[Component::A as usize][0].as_ref().unwrap();
    for i in 0..a.kde.n() {
        let row = a.kde.row(i);
        assert!((row[0] - row[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn degenerate_bandwidth_reproduces_forward_trajectory() {
    let tr = track(10);
    let rec = record(&tr, |_| true);
    let (model, initial) = fit_transition_model(&[rec.clone()], &[tr.clone()], &degenerate_cfg(false)).unwrap();
    let plan = ActivePhasePlan { t_a: Some(1), t_omega: 1, phases: vec![(1, 10)] };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (sim, counters) = simulate_footprints(&tr, &plan, &model, &initial, &grid(), &mut rng).unwrap();
    assert_eq!(counters.max_location_fallbacks + counters.component_repairs + counters.initial_repairs, 0);
    assert_reproduces(&rec, &sim);
}

#[test]
fn degenerate_bandwidth_reproduces_both_directions() {
    let tr = track(10);
    let rec = record(&tr, |_| true);
    let (model, initial) = fit_transition_model(&[rec.clone()], &[tr.clone()], &degenerate_cfg(true)).unwrap();
    let plan = ActivePhasePlan { t_a: Some(6), t_omega: 6, phases: vec![(1, 10)] };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (sim, _) = simulate_footprints(&tr, &plan, &model, &initial, &grid(), &mut rng).unwrap();
    assert_reproduces(&rec, &sim);
}

#[test]
fn simulation_is_deterministic_and_keeps_maximum_inside() {
    let tr = track(12);
    let rec = record(&tr, |t| !(6..=7).contains(&t));
    let (model, initial) = fit_transition_model(&[rec], &[tr.clone()], &TransitionConfig::default()).unwrap();
    let plan = ActivePhasePlan { t_a: Some(9), t_omega: 9, phases: vec![(2, 4), (8, 12)] };
    let run = |seed| simulate_footprints(&tr, &plan, &model, &initial, &grid(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let (a, _) = run(11);
    let (b, _) = run(11);
    assert_eq!(a, b);
    assert_eq!(a.phases(), vec![(2, 4), (8, 12)]);
    for seed in 0..20 {
        let (s, _) = run(seed);
        for t in 1..=12 {
            if let Some(fp) = s.footprint(t) {
                assert!(max_inside(&fp.features));
                assert!(fp.features.b <= fp.features.a && fp.features.b > 0.0);
            }
        }
    }
}
