#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub const BIN: &str = env!("CARGO_BIN_EXE_windstorm");

/// Run the binary with `args`, failing loudly if it cannot start.
pub fn windstorm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("run windstorm binary")
}

pub fn ok(args: &[&str]) {
    let out = windstorm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("UTF-8 path")
}

/// Output directories of one pipeline run.
pub struct Run {
    pub root: PathBuf,
}

impl Run {
    pub fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// synth-corpus → fit-margins → extract → fit → simulate → analyze under
/// `root`, with `config` written to `root/run.toml`.
pub fn pipeline(root: &Path, config: &str, seed: u64, threads: usize, n: usize) -> Run {
    fs::create_dir_all(root).unwrap();
    let cfg = root.join("run.toml");
    fs::write(&cfg, config).unwrap();
    let run = Run { root: root.to_path_buf() };
    let (seed, threads, n) = (seed.to_string(), threads.to_string(), n.to_string());
    let common = ["--config", p(&cfg), "--seed", &seed, "--threads", &threads];
    let d = |name: &str| run.dir(name);
    let (corpus, margins, extract, model, sim, analysis) =
        (d("corpus"), d("margins"), d("extract"), d("model"), d("sim"), d("analysis"));
    let tracks = corpus.join("tracks.csv");
    let fields = corpus.join("fields");
    let catalog = extract.join("catalog.csv");
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth-corpus", "--out", p(&corpus)],
        vec!["fit-margins", "--fields", p(&fields), "--out", p(&margins)],
        vec!["extract", "--tracks", p(&tracks), "--fields", p(&fields), "--margins", p(&margins), "--out", p(&extract)],
        vec![
            "fit", "--tracks", p(&tracks), "--fields", p(&fields), "--margins", p(&margins), "--catalog", p(&catalog), "--out",
            p(&model),
        ],
        vec!["simulate", "--model", p(&model), "--tracks", p(&tracks), "--n", &n, "--out", p(&sim)],
        vec![
            "analyze", "--model", p(&model), "--tracks", p(&tracks), "--catalog", p(&catalog), "--simulated", p(&sim),
            "--out", p(&analysis),
        ],
    ];
    for step in steps {
        let mut args = step.clone();
        args.extend_from_slice(&common);
        ok(&args);
    }
    run
}

/// SHA-256 of every file below `root`, keyed by relative path.
pub fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(fs::read(&path).unwrap());
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// A small corpus that keeps the full pipeline fast.
pub const SMALL: &str = "[corpus]\nn_tracks = 20\nlen_min = 20\nlen_max = 28\n\n[margins]\nquantile = 0.95\nmin_exceedances = 10\n";
