//! Run configuration: one TOML document with a section per pipeline stage.
//!
//! Every key has a default; a config file and `WINDSTORM_*` environment
//! variables override them, in that order. Unknown keys are rejected.
//! Environment keys name the section and the (possibly nested) key joined by
//! double underscores, e.g. `WINDSTORM_EXTRACT__V=2.5` or
//! `WINDSTORM_STORM_MODEL__TRANSITION__BANDWIDTH__FACTOR=0.5`; values are
//! parsed as TOML literals and fall back to plain strings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use windstorm_core::analysis::{QqConfig, DEFAULT_RUN_LENGTH};
use windstorm_core::extract::ExtractConfig;
use windstorm_core::margins::{DEFAULT_MIN_EXCEEDANCES, DEFAULT_QUANTILE};
use windstorm_core::storm_model::StormModelConfig;
use windstorm_core::synth::CorpusConfig;
use windstorm_core::windfield::FieldConfig;
use windstorm_core::FitConfig;

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "WINDSTORM_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginsConfig {
    /// Threshold quantile of each cell's sample.
    pub quantile: f64,
    pub min_exceedances: usize,
}

impl Default for MarginsConfig {
    fn default() -> Self {
        Self { quantile: DEFAULT_QUANTILE, min_exceedances: DEFAULT_MIN_EXCEEDANCES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    /// Catalog entries simulated when `--n` is not given.
    pub n: usize,
    /// Simulate wind fields as well as footprints.
    pub fields: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { n: 200, fields: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Storms per period (year) when converting catalog size to periods.
    pub storms_per_year: f64,
    pub return_period: f64,
    pub chi_quantiles: Vec<f64>,
    pub run_length: usize,
    pub qq: QqConfig,
    /// Separation of the default second site from the busiest cell (cells).
    pub site_separation: usize,
    /// Kernel width of footprint-centre densities (cells); Scott's rule when absent.
    pub density_sigma: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            storms_per_year: 1.0,
            return_period: 100.0,
            chi_quantiles: vec![0.9, 0.95, 0.99],
            run_length: DEFAULT_RUN_LENGTH,
            qq: QqConfig::default(),
            site_separation: 15,
            density_sigma: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub margins: MarginsConfig,
    pub extract: ExtractConfig,
    pub storm_model: StormModelConfig,
    pub windfield: FieldConfig,
    pub simulate: SimulateConfig,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    /// Resolve defaults, then `path` (if any), then environment overrides.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: toml::Table = toml::from_str(&text).map_err(|e| Error::content(path, e.to_string()))?;
            let file = serde_json::to_value(table).map_err(|e| Error::Config(e.to_string()))?;
            merge(&mut doc, file, "").map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        env.sort();
        for (key, raw) in env {
            let parts: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_ascii_lowercase).collect();
            let value = parse_literal(&raw);
            let patch = parts.iter().rev().fold(value, |acc, k| {
                let mut m = serde_json::Map::new();
                m.insert(k.clone(), acc);
                Value::Object(m)
            });
            merge(&mut doc, patch, "").map_err(|e| Error::Config(format!("{key}: {e}")))?;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_env(path: Option<&Path>) -> Result<Self> {
        Self::load(path, std::env::vars())
    }

    pub fn fit(&self) -> FitConfig {
        FitConfig { storm: self.storm_model.clone(), windfield: self.windfield }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn parse_literal(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).unwrap_or(Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Overlay `patch` on `base`, refusing keys that `base` does not have.
fn merge(base: &mut Value, patch: Value, at: &str) -> std::result::Result<(), String> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| format!("unknown key `{path}`"))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (Value::Object(_), _) => Err(format!("`{at}` is a section and needs a table")),
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}
