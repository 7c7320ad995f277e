//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use windstorm_core::extract::WindstormRecord;
use windstorm_core::rng::{key_str, stream};
use windstorm_core::synth::generate_synthetic_corpus;
use windstorm_core::{CellMask, GriddedFieldStack, StormTrack};

use crate::config::RunConfig;
use crate::diagnostics::{
    centre_density, chi_between, coverage, default_sites, qq_features, rank_correlations, return_levels, SimulatedWindstorm,
    Site, QQ_VARIABLES,
};
use crate::error::{Error, Result};
use crate::formats::{
    check_id, read_catalog, read_field_stack, read_mask, read_tracks, write_catalog, write_field_stack, write_tracks,
};
use crate::manifest::Manifest;
use crate::pipeline;
use crate::store::{read_bundle, read_margins, write_bundle, write_json, write_margins};

pub const ENTRIES_CSV: &str = "entries.csv";
pub const INDEX_CSV: &str = "index.csv";
pub const CATALOG_CSV: &str = "catalog.csv";
pub const FRAGMENTS: &str = "fragments";

#[derive(Debug, Parser)]
#[command(name = "windstorm", version, about = "Fit and simulate Lagrangian windstorm models")]
pub struct Cli {
    /// TOML run configuration; `WINDSTORM_<SECTION>__<KEY>` variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed of every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0: one per core). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus of tracks and co-registered wind fields.
    SynthCorpus,
    /// Fit per-cell marginal models to every field stack in a directory.
    FitMargins {
        /// Directory of `.wsf` field stacks.
        #[arg(long)]
        fields: PathBuf,
        /// Cell mask (a one-raster `.wsf` with tag 255); default: every cell.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Extract footprint catalogs along tracks.
    Extract {
        #[command(flatten)]
        inputs: TrackFields,
        /// Output directory of `fit-margins`.
        #[arg(long)]
        margins: PathBuf,
        /// Cell mask (a one-raster `.wsf` with tag 255); default: every cell.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Fit the storm and wind-field models into a model bundle.
    Fit {
        #[command(flatten)]
        inputs: TrackFields,
        /// Output directory of `fit-margins`.
        #[arg(long)]
        margins: PathBuf,
        /// Footprint catalog written by `extract`.
        #[arg(long)]
        catalog: PathBuf,
    },
    /// Simulate a windstorm catalog along tracks.
    Simulate {
        /// Model bundle written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Track CSV.
        #[arg(long)]
        tracks: PathBuf,
        /// Catalog entries (default from the configuration).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Compare a simulated catalog with the observed one.
    Analyze {
        /// Model bundle written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Track CSV.
        #[arg(long)]
        tracks: PathBuf,
        /// Observed footprint catalog.
        #[arg(long)]
        catalog: PathBuf,
        /// Output directory of `simulate`.
        #[arg(long)]
        simulated: PathBuf,
        /// CSV `site,x,y`; default: the busiest cell and one to its east.
        #[arg(long)]
        sites: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrackFields {
    /// Track CSV.
    #[arg(long)]
    pub tracks: PathBuf,
    /// Directory holding `<track_id>.wsf` per track.
    #[arg(long)]
    pub fields: PathBuf,
}

/// Parse arguments and run; errors carry their exit code.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.to_string().trim_start_matches("error: ").trim_end().to_string())),
    };
    let cfg = RunConfig::from_env(cli.config.as_deref())?;
    let out = cli.out.clone().ok_or_else(|| Error::Usage("--out is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    pipeline::in_pool(cli.threads, || execute(&cli, &cfg, &out))?
}

fn execute(cli: &Cli, cfg: &RunConfig, out: &Path) -> Result<()> {
    match &cli.command {
        Command::SynthCorpus => synth_corpus(cfg, cli.seed, out),
        Command::FitMargins { fields, mask } => fit_margins(cfg, cli.seed, fields, mask.as_deref(), out),
        Command::Extract { inputs, margins, mask } => extract(cfg, cli.seed, inputs, margins, mask.as_deref(), out),
        Command::Fit { inputs, margins, catalog } => fit(cfg, cli.seed, inputs, margins, catalog, out),
        Command::Simulate { model, tracks, n } => simulate(cfg, cli.seed, model, tracks, n.unwrap_or(cfg.simulate.n), out),
        Command::Analyze { model, tracks, catalog, simulated, sites } => {
            analyze(cfg, cli.seed, model, tracks, catalog, simulated, sites.as_deref(), out)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::content(path, e.to_string()))
}

fn write_rows<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::content(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn track_file(dir: &Path, id: &str) -> Result<PathBuf> {
    if !check_id(id) {
        return Err(Error::Usage(format!("track id `{id}` cannot be used as a file name")));
    }
    Ok(dir.join(format!("{id}.wsf")))
}

fn read_track_fields(tracks: &[StormTrack], dir: &Path) -> Result<Vec<GriddedFieldStack>> {
    tracks.iter().map(|t| read_field_stack(&track_file(dir, &t.id)?)).collect()
}

/// Every `.wsf` file of a directory, in name order.
fn read_field_dir(dir: &Path) -> Result<Vec<GriddedFieldStack>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "wsf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::content(dir, "no .wsf field stacks found"));
    }
    paths.iter().map(|p| read_field_stack(p)).collect()
}

fn synth_corpus(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let corpus = generate_synthetic_corpus(&cfg.corpus, seed)?;
    let fields = out.join("fields");
    create_dir(&fields)?;
    write_tracks(&out.join("tracks.csv"), &corpus.tracks)?;
    for (t, s) in corpus.tracks.iter().zip(&corpus.stacks) {
        write_field_stack(&track_file(&fields, &t.id)?, s)?;
    }
    #[derive(Serialize)]
    struct Truth {
        track_id: String,
        t: usize,
        cx: f64,
        cy: f64,
        exx: f64,
        exy: f64,
        eyy: f64,
        peak_x: f64,
        peak_y: f64,
        amplitude: f64,
    }
    let rows = corpus.tracks.iter().zip(&corpus.truth).flat_map(|(tr, bands)| {
        bands.iter().enumerate().filter_map(move |(i, b)| {
            b.map(|b| Truth {
                track_id: tr.id.clone(),
                t: i + 1,
                cx: b.ellipse.c[0],
                cy: b.ellipse.c[1],
                exx: b.ellipse.exx,
                exy: b.ellipse.exy,
                eyy: b.ellipse.eyy,
                peak_x: b.peak[0],
                peak_y: b.peak[1],
                amplitude: b.amplitude,
            })
        })
    });
    write_rows(&out.join("truth.csv"), rows)?;
    info!("wrote {} tracks", corpus.tracks.len());
    Manifest::new("synth-corpus", Some(seed), cfg).finish(out, cfg)
}

fn load_mask(mask: Option<&Path>, m: &mut Manifest) -> Result<Option<CellMask>> {
    mask.map(|p| {
        m.input("mask", p)?;
        read_mask(p)
    })
    .transpose()
}

fn fit_margins(cfg: &RunConfig, seed: u64, fields: &Path, mask: Option<&Path>, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("fit-margins", Some(seed), cfg);
    let stacks = read_field_dir(fields)?;
    manifest.input("fields", fields)?;
    let mask = load_mask(mask, &mut manifest)?.unwrap_or_else(|| CellMask::all(stacks[0].grid));
    let model = pipeline::fit_margins(&stacks, &mask, &cfg.margins)?;
    write_margins(out, &model)?;
    manifest.finish(out, cfg)
}

fn extract(
    cfg: &RunConfig,
    seed: u64,
    inputs: &TrackFields,
    margins: &Path,
    mask: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut manifest = Manifest::new("extract", Some(seed), cfg);
    let tracks = read_tracks(&inputs.tracks)?;
    let stacks = read_track_fields(&tracks, &inputs.fields)?;
    let m = read_margins(margins)?;
    manifest.input("tracks", &inputs.tracks)?;
    manifest.input("fields", &inputs.fields)?;
    manifest.input("margins", margins)?;
    let mask = load_mask(mask, &mut manifest)?;
    let exp = pipeline::to_exp(&m, &stacks)?;
    let records = pipeline::extract(&exp, &tracks, mask.as_ref(), &cfg.extract)?;
    write_catalog(&out.join(CATALOG_CSV), &records)?;
    manifest.finish(out, cfg)
}

fn fit(cfg: &RunConfig, seed: u64, inputs: &TrackFields, margins: &Path, catalog: &Path, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("fit", Some(seed), cfg);
    let tracks = read_tracks(&inputs.tracks)?;
    let stacks = read_track_fields(&tracks, &inputs.fields)?;
    let m = read_margins(margins)?;
    let records = read_catalog(catalog)?;
    for (k, a) in ["tracks", "fields", "margins", "catalog"].iter().zip([&inputs.tracks, &inputs.fields, margins, catalog]) {
        manifest.input(k, a)?;
    }
    let records = align_records(records, &tracks, catalog)?;
    let exp = pipeline::to_exp(&m, &stacks)?;
    let model = pipeline::fit(m, &records, &tracks, &exp, &cfg.fit())?;
    write_bundle(out, &model)?;
    manifest.finish(out, cfg)
}

/// Order catalog records like the tracks, checking that they correspond.
fn align_records(records: Vec<WindstormRecord>, tracks: &[StormTrack], path: &Path) -> Result<Vec<WindstormRecord>> {
    let mut by_id: std::collections::HashMap<String, WindstormRecord> =
        records.into_iter().map(|r| (r.track_id.clone(), r)).collect();
    tracks
        .iter()
        .map(|t| {
            let r = by_id.remove(&t.id).ok_or_else(|| Error::content(path, format!("no catalog rows for track {}", t.id)))?;
            if r.steps.len() != t.len() {
                return Err(Error::content(path, format!("track {}: catalog length differs from the track", t.id)));
            }
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EntryRow {
    pub entry_id: String,
    pub track_id: String,
    pub replicate: usize,
    pub active_steps: usize,
    pub fragment: String,
    pub screened: usize,
    pub max_location_fallbacks: usize,
    pub repinned: usize,
    pub coarsened: usize,
    pub distribution_fallbacks: usize,
    pub off_grid: usize,
}

fn simulate(cfg: &RunConfig, seed: u64, model_dir: &Path, tracks_path: &Path, n: usize, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("simulate", Some(seed), cfg);
    let model = read_bundle(model_dir)?;
    let tracks = read_tracks(tracks_path)?;
    manifest.input("model", model_dir)?;
    manifest.input("tracks", tracks_path)?;
    let entries = pipeline::simulate(&model, &tracks, n, seed, cfg.simulate.fields)?;
    let frag_dir = out.join(FRAGMENTS);
    if cfg.simulate.fields {
        create_dir(&frag_dir)?;
    }
    #[derive(Serialize)]
    struct IndexRow<'a> {
        track_id: &'a str,
        t: usize,
        file: &'a str,
        raster: usize,
        cx: f64,
        cy: f64,
        #[serde(rename = "A")]
        a: f64,
        #[serde(rename = "B")]
        b: f64,
        #[serde(rename = "Gamma")]
        gamma: f64,
    }
    let mut rows = Vec::new();
    let mut index = csv_writer(&out.join(INDEX_CSV))?;
    for e in &entries {
        let rec = &e.storm.record;
        let mut row = EntryRow {
            entry_id: rec.track_id.clone(),
            track_id: e.source_track.clone(),
            replicate: e.replicate,
            active_steps: rec.n_active(),
            fragment: String::new(),
            screened: e.storm.counters.screened,
            max_location_fallbacks: e.storm.counters.max_location_fallbacks,
            repinned: 0,
            coarsened: 0,
            distribution_fallbacks: 0,
            off_grid: 0,
        };
        if let Some(f) = &e.fields {
            let name = format!("{}_{:06}.wsf", e.source_track, e.replicate);
            let mut stack = f.stack.clone();
            stack.times = (1..=stack.n_t() as i64).collect();
            if !check_id(&e.source_track) {
                return Err(Error::Usage(format!("track id `{}` cannot be used as a file name", e.source_track)));
            }
            write_field_stack(&frag_dir.join(&name), &stack)?;
            let file = format!("{FRAGMENTS}/{name}");
            for (k, &t) in f.stack.times.iter().enumerate() {
                let fp = rec.footprint(t as usize).expect("fragment steps are active");
                let ir = IndexRow {
                    track_id: &rec.track_id,
                    t: t as usize,
                    file: &file,
                    raster: k,
                    cx: fp.ellipse.c[0],
                    cy: fp.ellipse.c[1],
                    a: fp.features.a,
                    b: fp.features.b,
                    gamma: fp.features.gamma,
                };
                index.serialize(ir).map_err(|e| Error::content(&out.join(INDEX_CSV), e.to_string()))?;
            }
            row.fragment = file;
            row.repinned = f.repinned;
            row.coarsened = f.coarsened;
            row.distribution_fallbacks = f.distribution_fallbacks;
            row.off_grid = f.off_grid;
        }
        rows.push(row);
    }
    index.flush().map_err(|e| Error::io(&out.join(INDEX_CSV), e))?;
    let records: Vec<WindstormRecord> = entries.iter().map(|e| e.storm.record.clone()).collect();
    write_catalog(&out.join(CATALOG_CSV), &records)?;
    write_rows(&out.join(ENTRIES_CSV), rows)?;
    info!("simulated {} catalog entries", entries.len());
    manifest.finish(out, cfg)
}

/// Read the output of `simulate` back.
pub fn read_simulated(dir: &Path, tracks: &[StormTrack]) -> Result<Vec<SimulatedWindstorm>> {
    let entries_path = dir.join(ENTRIES_CSV);
    let mut rdr = csv::Reader::from_path(&entries_path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(err) => Error::io(&entries_path, err),
        k => Error::content(&entries_path, format!("{k:?}")),
    })?;
    let rows: Vec<EntryRow> =
        rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| Error::content(&entries_path, e.to_string()))?;
    let catalog_path = dir.join(CATALOG_CSV);
    let records = read_catalog(&catalog_path)?;
    let mut by_id: std::collections::HashMap<String, WindstormRecord> =
        records.into_iter().map(|r| (r.track_id.clone(), r)).collect();
    let track_by_id: std::collections::HashMap<&str, &StormTrack> = tracks.iter().map(|t| (t.id.as_str(), t)).collect();
    rows.into_iter()
        .map(|row| {
            let record = by_id
                .remove(&row.entry_id)
                .ok_or_else(|| Error::content(&catalog_path, format!("no rows for entry {}", row.entry_id)))?;
            let track = *track_by_id
                .get(row.track_id.as_str())
                .ok_or_else(|| Error::content(&entries_path, format!("unknown track {}", row.track_id)))?;
            let fields = if row.fragment.is_empty() {
                None
            } else {
                let path = dir.join(&row.fragment);
                let mut stack = read_field_stack(&path)?;
                let times: Vec<i64> = (1..=record.steps.len()).filter(|&t| record.is_active(t)).map(|t| t as i64).collect();
                if times.len() != stack.n_t() {
                    return Err(Error::content(&path, "raster count differs from the entry's active steps"));
                }
                stack.times = times;
                Some(stack)
            };
            Ok(SimulatedWindstorm { record, track: track.clone(), fields })
        })
        .collect()
}

fn read_sites(path: &Path) -> Result<Vec<(String, Site)>> {
    #[derive(serde::Deserialize)]
    struct Row {
        site: String,
        x: usize,
        y: usize,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(err) => Error::io(path, err),
        k => Error::content(path, format!("{k:?}")),
    })?;
    rdr.deserialize::<Row>()
        .map(|r| r.map(|r| (r.site, Site { x: r.x, y: r.y })).map_err(|e| Error::content(path, e.to_string())))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    cfg: &RunConfig,
    seed: u64,
    model_dir: &Path,
    tracks_path: &Path,
    catalog: &Path,
    simulated: &Path,
    sites: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut manifest = Manifest::new("analyze", Some(seed), cfg);
    let model = read_bundle(model_dir)?;
    let tracks = read_tracks(tracks_path)?;
    let observed = align_records(read_catalog(catalog)?, &tracks, catalog)?;
    let sim = read_simulated(simulated, &tracks)?;
    for (k, p) in ["model", "tracks", "catalog", "simulated"].iter().zip([model_dir, tracks_path, catalog, simulated]) {
        manifest.input(k, p)?;
    }
    let grid = model.margins.grid;
    let a = &cfg.analysis;
    let cover = coverage(&sim, &grid);
    let sites: Vec<(String, Site)> = match sites {
        Some(p) => {
            manifest.input("sites", p)?;
            read_sites(p)?
        }
        None => default_sites(&cover, &grid, a.site_separation).iter().enumerate().map(|(i, s)| (format!("s{i}"), *s)).collect(),
    };
    if let Some((name, _)) = sites.iter().find(|(_, s)| s.x >= grid.n_x || s.y >= grid.n_y) {
        return Err(Error::Usage(format!("site {name} lies outside the grid")));
    }
    #[derive(Serialize)]
    struct SiteRow<'a> {
        site: &'a str,
        x: usize,
        y: usize,
    }
    write_rows(&out.join("sites.csv"), sites.iter().map(|(n, s)| SiteRow { site: n, x: s.x, y: s.y }))?;

    #[derive(Serialize)]
    struct ChiRow {
        q: f64,
        chi: Option<f64>,
        lo: Option<f64>,
        hi: Option<f64>,
        neff: f64,
    }
    let have_fields = sim.iter().any(|s| s.fields.is_some());
    if have_fields {
        for i in 0..sites.len() {
            for j in i + 1..sites.len() {
                let c = chi_between(&sim, &model.margins, sites[i].1, sites[j].1, &a.chi_quantiles, a.run_length)?;
                let rows = (0..c.q.len()).map(|k| ChiRow { q: c.q[k], chi: c.chi[k], lo: c.lower[k], hi: c.upper[k], neff: c.n_eff[k] });
                write_rows(&out.join(format!("chi_{}_{}.csv", sites[i].0, sites[j].0)), rows)?;
            }
        }
        let cells: Vec<usize> = sites.iter().map(|(_, s)| grid.index(s.x, s.y)).collect();
        let rl = return_levels(&sim, &model.margins, &cells, a.return_period, a.storms_per_year)?;
        #[derive(Serialize)]
        struct RlRow<'a> {
            site: &'a str,
            x: usize,
            y: usize,
            model: f64,
            simulated: Option<f64>,
            rel_error: Option<f64>,
        }
        let rows = sites.iter().zip(&rl).map(|((n, _), r)| RlRow {
            site: n,
            x: r.x,
            y: r.y,
            model: r.model,
            simulated: r.simulated,
            rel_error: r.relative_error(),
        });
        write_rows(&out.join("return_levels.csv"), rows)?;
    }

    let sim_records: Vec<WindstormRecord> = sim.iter().map(|s| s.record.clone()).collect();
    let mut rng = stream(seed, &[key_str("analyze"), key_str("qq")]);
    let qq = qq_features(&observed, &sim_records, &a.qq, &mut rng)?;
    #[derive(Serialize)]
    struct QqRow {
        variable: &'static str,
        p: f64,
        observed: f64,
        simulated: f64,
        lo: f64,
        hi: f64,
    }
    let rows = QQ_VARIABLES.iter().zip(&qq).flat_map(|(v, d)| {
        (0..d.probs.len()).map(move |k| QqRow {
            variable: v,
            p: d.probs[k],
            observed: d.qa[k],
            simulated: d.qb[k],
            lo: d.lower[k],
            hi: d.upper[k],
        })
    });
    write_rows(&out.join("qq.csv"), rows)?;

    let obs_density = centre_density(&observed, &grid, a.density_sigma)?;
    let sim_density = centre_density(&sim_records, &grid, a.density_sigma)?;
    let data: Vec<f32> = obs_density.iter().chain(&sim_density).map(|&v| v as f32).collect();
    let stack = GriddedFieldStack::new(grid, vec![1, 2], windstorm_core::ScaleTag::Observed, data)?;
    write_field_stack(&out.join("density.wsf"), &stack)?;

    let obs_tracks: Vec<&StormTrack> = tracks.iter().collect();
    let sim_tracks: Vec<&StormTrack> = sim.iter().map(|s| &s.track).collect();
    #[derive(Serialize)]
    struct Summary {
        entries: usize,
        periods: f64,
        qq_inside: Vec<(String, usize, usize)>,
        rank_correlation_observed: [f64; 2],
        rank_correlation_simulated: [f64; 2],
        extremal_index: &'static str,
    }
    let summary = Summary {
        entries: sim.len(),
        periods: sim.len() as f64 / a.storms_per_year,
        qq_inside: QQ_VARIABLES.iter().zip(&qq).map(|(v, d)| (v.to_string(), d.n_inside(), d.probs.len())).collect(),
        rank_correlation_observed: rank_correlations(&observed, &obs_tracks)?,
        rank_correlation_simulated: rank_correlations(&sim_records, &sim_tracks)?,
        extremal_index: "runs estimator (run length from the configuration); chi intervals are binomial on an \
                         extremal-index-adjusted sample size and exclude model-parameter uncertainty",
    };
    write_json(&out.join("analysis.json"), &summary)?;
    manifest.finish(out, cfg)
}
