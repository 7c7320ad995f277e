//! Output manifests: what produced a directory and from which inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::store::write_json;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_TOML: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub core_version: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by its role and name.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written next to the manifest.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes of the files under `path` (a file or a directory, recursively),
/// keyed by `label` joined with the relative path.
pub fn hash_tree(label: &str, path: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        out.insert(label.to_string(), sha256_file(path)?);
        return Ok(());
    }
    let mut names: Vec<_> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.file_name()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    names.sort();
    for name in names {
        let name = name.to_string_lossy().into_owned();
        if name == MANIFEST {
            continue;
        }
        hash_tree(&format!("{label}/{name}"), &path.join(&name), out)?;
    }
    Ok(())
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: windstorm_core::VERSION.to_string(),
            seed,
            config_sha256: cfg.hash(),
            config: cfg.to_json(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        hash_tree(role, path, &mut self.inputs)
    }

    /// Write `config.toml` and the manifest into `dir`, hashing every other
    /// file already there.
    pub fn finish(mut self, dir: &Path, cfg: &RunConfig) -> Result<()> {
        let cfg_path = dir.join(CONFIG_TOML);
        fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        let mut outputs = BTreeMap::new();
        hash_tree(".", dir, &mut outputs)?;
        self.outputs = outputs.into_iter().map(|(k, v)| (k.trim_start_matches("./").to_string(), v)).collect();
        write_json(&dir.join(MANIFEST), &self)
    }
}
