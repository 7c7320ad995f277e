//! Markov model of footprint features built from conditional kernel densities.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{offset, Ellipse, FootprintFeatures, WindstormRecord};
use crate::kde::{Bandwidth, ConditionalKde, KdeModel};
use crate::track::StormTrack;

/// Footprint feature components in propagation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    RE,
    ThetaE,
    A,
    B,
    W,
    Gamma,
    RW,
    ThetaW,
}

pub const COMPONENTS: [Component; 8] =
    [Component::RE, Component::ThetaE, Component::A, Component::B, Component::W, Component::Gamma, Component::RW, Component::ThetaW];

/// Conditioning variables of a component's density besides its own lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Comp(Component),
    Vorticity,
    Lon,
    Lat,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::RE => "R_E",
            Component::ThetaE => "Theta_E",
            Component::A => "A",
            Component::B => "B",
            Component::W => "W",
            Component::Gamma => "Gamma",
            Component::RW => "R_W",
            Component::ThetaW => "Theta_W",
        }
    }

    /// Period of circular components, zero otherwise.
    pub fn period(self) -> f64 {
        match self {
            Component::ThetaE | Component::ThetaW => 2.0 * PI,
            Component::Gamma => PI,
            _ => 0.0,
        }
    }

    pub fn get(self, f: &FootprintFeatures) -> f64 {
        match self {
            Component::RE => f.r_e,
            Component::ThetaE => f.theta_e,
            Component::A => f.a,
            Component::B => f.b,
            Component::W => f.w,
            Component::Gamma => f.gamma,
            Component::RW => f.r_w,
            Component::ThetaW => f.theta_w,
        }
    }

    pub fn set(self, f: &mut FootprintFeatures, v: f64) {
        match self {
            Component::RE => f.r_e = v,
            Component::ThetaE => f.theta_e = v,
            Component::A => f.a = v,
            Component::B => f.b = v,
            Component::W => f.w = v,
            Component::Gamma => f.gamma = v,
            Component::RW => f.r_w = v,
            Component::ThetaW => f.theta_w = v,
        }
    }

    /// Same-step components (and vorticity) the component is conditioned on.
    pub fn concurrent(self) -> &'static [Var] {
        use Component::*;
        match self {
            RE => &[Var::Vorticity],
            ThetaE => &[Var::Comp(RE)],
            A | B => &[Var::Vorticity, Var::Comp(RE), Var::Comp(ThetaE)],
            W => &[Var::Comp(RE), Var::Comp(ThetaE), Var::Comp(A), Var::Comp(B)],
            Gamma => &[Var::Comp(ThetaE)],
            RW => &[Var::Comp(A)],
            ThetaW => &[],
        }
    }
}

fn var_name(v: Var) -> String {
    match v {
        Var::Comp(c) => c.name().into(),
        Var::Vorticity => "vorticity".into(),
        Var::Lon => "lon".into(),
        Var::Lat => "lat".into(),
    }
}

fn var_period(v: Var) -> f64 {
    match v {
        Var::Comp(c) => c.period(),
        _ => 0.0,
    }
}

/// Dimension names of the density for `comp` with `lags` lags:
/// target, own lags, concurrent conditioners, lon, lat.
pub fn component_dims(comp: Component, lags: usize) -> Vec<String> {
    let mut names = vec![String::from(comp.name())];
    names.extend((1..=lags).map(|l| format!("{}[-{l}]", comp.name())));
    names.extend(comp.concurrent().iter().map(|&v| var_name(v)));
    names.push("lon".into());
    names.push("lat".into());
    names
}

/// Dimension names of the initial-state density.
pub fn initial_dims() -> Vec<String> {
    let mut names: Vec<String> = COMPONENTS.iter().map(|c| String::from(c.name())).collect();
    names.extend(["lon", "lat", "vorticity"].iter().map(|s| String::from(*s)));
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionConfig {
    /// Markov order.
    pub k: usize,
    /// Bandwidth of the transition densities. Kernel noise accumulates along
    /// a simulated chain, so the default halves the rule-of-thumb bandwidth.
    pub bandwidth: Bandwidth,
    pub initial_bandwidth: Bandwidth,
    /// Conditioning window (degrees of longitude, latitude).
    pub window_lon: f64,
    pub window_lat: f64,
    pub min_window_rows: usize,
    pub max_tries: usize,
    /// Simulated footprints with `√Δ` below this are spurious, mirroring
    /// extraction.
    pub area_min: f64,
    /// Simulated footprints with `R_E` above this are spurious.
    pub r_max: f64,
    /// Fit separate densities on time-reversed tuples for backward
    /// propagation instead of reusing the forward ones.
    pub refit_backward: bool,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            k: 2,
            bandwidth: Bandwidth { factor: 0.5, diagonal: false },
            initial_bandwidth: Bandwidth { factor: 0.5, diagonal: false },
            window_lon: 20.0,
            window_lat: 14.0,
            min_window_rows: 30,
            max_tries: 100,
            area_min: 10.0,
            r_max: 100.0,
            refit_backward: false,
        }
    }
}

/// A conditional density over one set of named dimensions; the first
/// dimensions are free and the rest condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NamedKdeParts", into = "NamedKdeParts")]
pub struct NamedKde {
    pub names: Vec<String>,
    pub kde: KdeModel,
    pub n_free: usize,
    cond: ConditionalKde,
}

#[derive(Serialize, Deserialize)]
struct NamedKdeParts {
    names: Vec<String>,
    n_free: usize,
    kde: KdeModel,
}

impl From<NamedKde> for NamedKdeParts {
    fn from(m: NamedKde) -> Self {
        Self { names: m.names, n_free: m.n_free, kde: m.kde }
    }
}

impl TryFrom<NamedKdeParts> for NamedKde {
    type Error = Error;
    fn try_from(p: NamedKdeParts) -> Result<Self> {
        NamedKde::new(p.names, p.kde, p.n_free)
    }
}

impl NamedKde {
    pub fn new(names: Vec<String>, kde: KdeModel, n_free: usize) -> Result<Self> {
        if names.len() != kde.dim() || n_free == 0 || n_free >= names.len() {
            return Err(Error::InvalidInput("dimension names do not match the density".into()));
        }
        let cond_dims: Vec<usize> = (n_free..kde.dim()).collect();
        let cond = kde.conditional(&cond_dims)?;
        Ok(Self { names, kde, n_free, cond })
    }

    pub fn conditional(&self) -> &ConditionalKde {
        &self.cond
    }

    /// Observations whose (lon, lat) fall in the window around the given
    /// location, widened by doubling until at least `min_rows` qualify.
    fn window_rows(&self, lon: f64, lat: f64, cfg: &TransitionConfig, lonlat_at: usize) -> Option<Vec<usize>> {
        let n = self.cond.n();
        if n <= cfg.min_window_rows {
            return None;
        }
        let mut scale = 1.0;
        loop {
            let (hw, hh) = (0.5 * cfg.window_lon * scale, 0.5 * cfg.window_lat * scale);
            let rows: Vec<usize> = (0..n)
                .filter(|&i| {
                    let r = self.cond.cond_row(i);
                    (r[lonlat_at] - lon).abs() <= hw && (r[lonlat_at + 1] - lat).abs() <= hh
                })
                .collect();
            if rows.len() >= cfg.min_window_rows {
                return if rows.len() == n { None } else { Some(rows) };
            }
            scale *= 2.0;
            if scale > 1e6 {
                return None;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub cfg: TransitionConfig,
    /// `models[c][l - 1]`: density of component `c` given `l` lags.
    pub models: Vec<Vec<Option<NamedKde>>>,
    /// Densities for backward propagation, when refitted separately.
    pub backward: Option<Vec<Vec<Option<NamedKde>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialModel {
    pub model: NamedKde,
}

/// Storm-level context at one track step.
#[derive(Debug, Clone, Copy)]
struct StepContext {
    lon: f64,
    lat: f64,
    vorticity: f64,
}

fn var_value(v: Var, f: &FootprintFeatures, ctx: &StepContext) -> f64 {
    match v {
        Var::Comp(c) => c.get(f),
        Var::Vorticity => ctx.vorticity,
        Var::Lon => ctx.lon,
        Var::Lat => ctx.lat,
    }
}

/// Fit the transition densities and the initial-state density.
///
/// Training tuples never span two phases: each phase contributes tuples with
/// as many lags as are available since its start, and the density for `l`
/// lags is fitted to all tuples with at least `l` lags available.
pub fn fit_transition_model(
    records: &[WindstormRecord],
    tracks: &[StormTrack],
    cfg: &TransitionConfig,
) -> Result<(TransitionModel, InitialModel)> {
    if cfg.k == 0 {
        return Err(Error::InvalidInput("Markov order must be at least one".into()));
    }
    if records.len() != tracks.len() {
        return Err(Error::InvalidInput("records and tracks must pair up".into()));
    }
    let models = fit_direction(records, tracks, cfg, 1)?;
    let backward = if cfg.refit_backward { Some(fit_direction(records, tracks, cfg, -1)?) } else { None };

    let names = initial_dims();
    let mut data = Vec::new();
    for (rec, tr) in records.iter().zip(tracks) {
        for t in 1..=tr.len() {
            if let Some(fp) = rec.footprint(t) {
                let p = tr.at(t);
                data.extend(COMPONENTS.iter().map(|c| c.get(&fp.features)));
                data.extend([p.lon, p.lat, p.vorticity]);
            }
        }
    }
    if data.len() / names.len() < 2 {
        return Err(Error::InsufficientData("too few active steps for the initial-state model".into()));
    }
    let mut periods: Vec<f64> = COMPONENTS.iter().map(|c| c.period()).collect();
    periods.extend([0.0, 0.0, 0.0]);
    let kde = KdeModel::fit(data, names.len(), periods, cfg.initial_bandwidth)?;
    let initial = InitialModel { model: NamedKde::new(names, kde, 8)? };
    Ok((TransitionModel { cfg: cfg.clone(), models, backward }, initial))
}

/// Per-component densities for propagation in direction `dir` (±1).
fn fit_direction(
    records: &[WindstormRecord],
    tracks: &[StormTrack],
    cfg: &TransitionConfig,
    dir: i64,
) -> Result<Vec<Vec<Option<NamedKde>>>> {
    let mut models = Vec::with_capacity(8);
    for comp in COMPONENTS {
        let mut per_lag = Vec::with_capacity(cfg.k);
        for lags in 1..=cfg.k {
            let names = component_dims(comp, lags);
            let d = names.len();
            let mut data = Vec::new();
            for (rec, tr) in records.iter().zip(tracks) {
                for (ts, tt) in rec.phases() {
                    let targets: Vec<usize> =
                        if dir > 0 { (ts + lags..=tt).collect() } else { (ts..=tt.saturating_sub(lags)).collect() };
                    for j in targets {
                        let f = &rec.footprint(j).unwrap().features;
                        let p = tr.at(j);
                        let ctx = StepContext { lon: p.lon, lat: p.lat, vorticity: p.vorticity };
                        data.push(comp.get(f));
                        for l in 1..=lags as i64 {
                            let s = (j as i64 - dir * l) as usize;
                            data.push(comp.get(&rec.footprint(s).unwrap().features));
                        }
                        for &v in comp.concurrent() {
                            data.push(var_value(v, f, &ctx));
                        }
                        data.push(ctx.lon);
                        data.push(ctx.lat);
                    }
                }
            }
            let n = data.len() / d;
            if n < 2 {
                if lags == 1 {
                    return Err(Error::InsufficientData(format!("too few transitions to model {}", comp.name())));
                }
                per_lag.push(None);
                continue;
            }
            let mut periods = vec![comp.period(); lags + 1];
            periods.extend(comp.concurrent().iter().map(|&v| var_period(v)));
            periods.extend([0.0, 0.0]);
            let kde = KdeModel::fit(data, d, periods, cfg.bandwidth)?;
            per_lag.push(Some(NamedKde::new(names, kde, 1)?));
        }
        models.push(per_lag);
    }
    Ok(models)
}

/// Counts of fallbacks taken while simulating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimCounters {
    /// Maximum locations placed uniformly in the ellipse after rejection failed.
    pub max_location_fallbacks: usize,
    /// Components repaired after rejection failed (positivity, `B ≤ A`).
    pub component_repairs: usize,
    /// Initial states repaired after rejection failed.
    pub initial_repairs: usize,
    /// Conditional draws whose kernel weights underflowed.
    pub weight_underflows: usize,
    /// Simulated footprints discarded as spurious.
    pub screened: usize,
}

impl SimCounters {
    pub fn add(&mut self, o: &SimCounters) {
        self.max_location_fallbacks += o.max_location_fallbacks;
        self.component_repairs += o.component_repairs;
        self.initial_repairs += o.initial_repairs;
        self.weight_underflows += o.weight_underflows;
        self.screened += o.screened;
    }
}

fn blank(t: i64) -> FootprintFeatures {
    FootprintFeatures { t, a: 0.0, b: 0.0, w: 0.0, r_e: 0.0, theta_e: 0.0, r_w: 0.0, theta_w: 0.0, gamma: 0.0 }
}

fn component_valid(c: Component, f: &FootprintFeatures) -> bool {
    let v = c.get(f);
    if !v.is_finite() {
        return false;
    }
    match c {
        Component::RE | Component::RW => v >= 0.0,
        Component::A | Component::W => v > 0.0,
        Component::B => v > 0.0 && v <= f.a,
        _ => true,
    }
}

/// Whether the maximum implied by `(R_W, Θ_W)` lies inside the ellipse.
pub fn max_inside(f: &FootprintFeatures) -> bool {
    let e = Ellipse::from_axes([0.0, 0.0], f.a, f.b, f.gamma);
    e.quad_form(offset([0.0, 0.0], f.r_w, f.theta_w)) <= 1.0
}

/// Place the maximum uniformly at random inside the ellipse.
pub fn uniform_max_location<R: Rng + ?Sized>(f: &mut FootprintFeatures, rng: &mut R) {
    let e = Ellipse::from_axes([0.0, 0.0], f.a, f.b, f.gamma);
    let (_, _, u) = e.axes();
    let v = [-u[1], u[0]];
    let r = rng.random::<f64>().sqrt() * (1.0 - 1e-9);
    let phi = rng.random_range(-PI..PI);
    let (s, c) = phi.sin_cos();
    let p = [f.a * r * c * u[0] + f.b * r * s * v[0], f.a * r * c * u[1] + f.b * r * s * v[1]];
    f.r_w = p[0].hypot(p[1]);
    f.theta_w = crate::extract::bearing(p[0], p[1]);
}

/// Clamp components into their valid ranges.
fn repair(f: &mut FootprintFeatures) {
    f.a = f.a.abs().max(1.0);
    f.b = f.b.abs().clamp(0.5_f64.min(f.a), f.a);
    f.r_e = f.r_e.abs();
    f.r_w = f.r_w.abs();
    f.w = f.w.abs().max(1e-6);
}

/// Whether a footprint would survive the spurious-footprint screen applied
/// during extraction.
pub fn passes_screen(f: &FootprintFeatures, cfg: &TransitionConfig) -> bool {
    f.delta().sqrt() >= cfg.area_min && f.r_e <= cfg.r_max
}

impl TransitionModel {
    fn model_for(&self, c: Component, lags: usize, dir: i64) -> &NamedKde {
        let set = match (&self.backward, dir < 0) {
            (Some(b), true) => b,
            _ => &self.models,
        };
        let row = &set[c as usize];
        let mut l = lags.min(row.len());
        while l > 1 && row[l - 1].is_none() {
            l -= 1;
        }
        row[l - 1].as_ref().expect("single-lag density always present")
    }

    /// Draw the features at a step from their lagged values (most recent first).
    fn step<R: Rng + ?Sized>(
        &self,
        t: i64,
        ctx: &StepContext,
        lags: &[FootprintFeatures],
        dir: i64,
        rng: &mut R,
        counters: &mut SimCounters,
    ) -> FootprintFeatures {
        let mut f = blank(t);
        let tries = self.cfg.max_tries.max(1);
        for comp in COMPONENTS {
            if comp == Component::ThetaW {
                continue;
            }
            let m = self.model_for(comp, lags.len(), dir);
            let nl = m.names.len() - comp.concurrent().len() - 3;
            let mut cond: Vec<f64> = lags[..nl].iter().map(|l| comp.get(l)).collect();
            cond.extend(comp.concurrent().iter().map(|&v| var_value(v, &f, ctx)));
            cond.extend([ctx.lon, ctx.lat]);
            let rows = m.window_rows(ctx.lon, ctx.lat, &self.cfg, cond.len() - 2);
            let mix = m.conditional().mixture(&cond, rows.as_deref());
            counters.weight_underflows += mix.underflow as usize;
            if comp == Component::RW {
                // R_W and Θ_W are drawn jointly under the inside-ellipse constraint
                let tw = self.model_for(Component::ThetaW, lags.len(), dir);
                let ntw = tw.names.len() - 3;
                let mut cond_tw: Vec<f64> = lags[..ntw].iter().map(|l| l.theta_w).collect();
                cond_tw.extend([ctx.lon, ctx.lat]);
                let rows_tw = tw.window_rows(ctx.lon, ctx.lat, &self.cfg, cond_tw.len() - 2);
                let mix_tw = tw.conditional().mixture(&cond_tw, rows_tw.as_deref());
                let mut ok = false;
                for _ in 0..tries {
                    f.r_w = m.conditional().sample_mixture(&mix, &cond, rng)[0];
                    f.theta_w = tw.conditional().sample_mixture(&mix_tw, &cond_tw, rng)[0];
                    if f.r_w >= 0.0 && max_inside(&f) {
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    counters.max_location_fallbacks += 1;
                    uniform_max_location(&mut f, rng);
                }
                continue;
            }
            let mut ok = false;
            for _ in 0..tries {
                let v = m.conditional().sample_mixture(&mix, &cond, rng)[0];
                comp.set(&mut f, v);
                if component_valid(comp, &f) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                counters.component_repairs += 1;
                repair(&mut f);
            }
        }
        f
    }
}

impl InitialModel {
    fn draw<R: Rng + ?Sized>(
        &self,
        t: i64,
        ctx: &StepContext,
        cfg: &TransitionConfig,
        rng: &mut R,
        counters: &mut SimCounters,
    ) -> FootprintFeatures {
        let cond = [ctx.lon, ctx.lat, ctx.vorticity];
        let rows = self.model.window_rows(ctx.lon, ctx.lat, cfg, 0);
        let mix = self.model.conditional().mixture(&cond, rows.as_deref());
        counters.weight_underflows += mix.underflow as usize;
        let mut f = blank(t);
        for _ in 0..cfg.max_tries.max(1) {
            let z = self.model.conditional().sample_mixture(&mix, &cond, rng);
            for (c, v) in COMPONENTS.iter().zip(z) {
                c.set(&mut f, v);
            }
            if COMPONENTS.iter().all(|c| component_valid(*c, &f)) && max_inside(&f) {
                return f;
            }
        }
        counters.initial_repairs += 1;
        repair(&mut f);
        if !max_inside(&f) {
            uniform_max_location(&mut f, rng);
        }
        f
    }
}

/// Simulates feature trajectories along a track, step by step, as phases are
/// planned. Lags are taken along the direction of propagation and never reach
/// past the step at which the current phase was initialised.
pub struct FeatureSimulator<'a> {
    transition: &'a TransitionModel,
    initial: &'a InitialModel,
    track: &'a StormTrack,
    pub features: Vec<Option<FootprintFeatures>>,
    anchor: usize,
    pub counters: SimCounters,
}

impl<'a> FeatureSimulator<'a> {
    pub fn new(transition: &'a TransitionModel, initial: &'a InitialModel, track: &'a StormTrack) -> Self {
        Self { transition, initial, track, features: vec![None; track.len()], anchor: 0, counters: SimCounters::default() }
    }

    fn ctx(&self, t: usize) -> StepContext {
        let p = self.track.at(t);
        StepContext { lon: p.lon, lat: p.lat, vorticity: p.vorticity }
    }

    /// Simulate step `t`, reached from `prev` (or starting a phase). Returns
    /// whether the footprint passes the spurious-footprint screen; it is
    /// stored either way.
    pub fn enter<R: Rng + ?Sized>(&mut self, t: usize, prev: Option<usize>, rng: &mut R) -> bool {
        let ctx = self.ctx(t);
        let f = match prev {
            None => {
                self.anchor = t;
                self.initial.draw(t as i64, &ctx, &self.transition.cfg, rng, &mut self.counters)
            }
            Some(p) => {
                let dir = t as i64 - p as i64;
                let mut lags = Vec::with_capacity(self.transition.cfg.k);
                for m in 1..=self.transition.cfg.k as i64 {
                    let s = t as i64 - m * dir;
                    let past_anchor = if dir > 0 { s < self.anchor as i64 } else { s > self.anchor as i64 };
                    if past_anchor {
                        break;
                    }
                    match self.features[s as usize - 1] {
                        Some(f) => lags.push(f),
                        None => break,
                    }
                }
                self.transition.step(t as i64, &ctx, &lags, dir, rng, &mut self.counters)
            }
        };
        self.features[t - 1] = Some(f);
        passes_screen(&f, &self.transition.cfg)
    }

    /// Forget the features at step `t`.
    pub fn discard(&mut self, t: usize) {
        self.features[t - 1] = None;
    }
}
