//! Batch commands over directories of scene, label and prediction files.
//!
//! Scenes are `scene_<seed>.json`; the labels of a scene are written as
//! `labels_<scene file>`. Every command that writes files also writes
//! `manifest_<command>.json` next to them.

mod losscheck;
mod predict;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labeling::{label_scene, LabelConfig};
use crate::scene::{generate_scene, GenerationConfig};
use crate::schema::{labels_to_json, scene_from_json, scene_to_json, to_json_bytes, write_json, RunManifest, MANIFEST_SCHEMA};

pub use losscheck::{cmd_losscheck, scene_losses, LossReport, LossValues};
pub use predict::{cmd_graph, cmd_predict, scorer_prediction, write_predictions, PredictOptions, Predictor};
pub use report::{cmd_eval, cmd_verify, metric_inputs, EvalReport, SceneAgreement, VerifyOptions, VerifyReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "OCCLUGRAPH_WORKERS";
pub const SPLIT_SCHEMA: &str = "occlugraph.split.v1";
pub const SPLIT_FILE: &str = "split.json";

/// `$OCCLUGRAPH_WORKERS` if set to a positive integer, else the number of
/// available cores.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|w| *w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn scene_file_name(seed: u64) -> String {
    format!("scene_{seed:06}.json")
}

pub fn label_file_name(scene_file: &str) -> String {
    format!("labels_{scene_file}")
}

/// Scene name used as the key in prediction bundles: the file name without
/// its extension.
pub fn scene_key(scene_file: &str) -> &str {
    scene_file.strip_suffix(".json").unwrap_or(scene_file)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Files in `dir` named `<prefix>*.json`, sorted by name.
pub fn list_files(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = file_name(&path);
        if name.starts_with(prefix) && name.ends_with(".json") && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    list_files(dir, "scene_")
}

pub fn label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    list_files(dir, "labels_")
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::InvalidConfig("worker count must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Digest of a command's output-affecting inputs: its parameters plus the
/// content hash of every input file.
fn run_digest(command: &str, params: &Value, input_hashes: &[(String, String)]) -> Result<String> {
    let canonical = json!({
        "command": command,
        "tool_version": TOOL_VERSION,
        "params": params,
        "inputs": input_hashes,
    });
    Ok(sha256_hex(&to_json_bytes(&canonical)?))
}

struct ManifestDraft {
    command: &'static str,
    digest: String,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    workers: usize,
    started: Instant,
    details: Value,
}

impl ManifestDraft {
    fn finish(self) -> RunManifest {
        RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            command: self.command.into(),
            tool_version: TOOL_VERSION.into(),
            config_digest: self.digest,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            workers: self.workers,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            details: self.details,
        }
    }
}

pub fn manifest_file_name(command: &str) -> String {
    format!("manifest_{command}.json")
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let path = dir.join(manifest_file_name(&manifest.command));
    write_json(&path, manifest)?;
    Ok(path)
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub schema: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// First `⌊4n/5⌋` files train, the rest validate.
pub fn split_80_20(files: &[String]) -> Split {
    let cut = files.len() * 4 / 5;
    Split {
        schema: SPLIT_SCHEMA.into(),
        train: files[..cut].to_vec(),
        val: files[cut..].to_vec(),
    }
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub manifest: RunManifest,
    pub scenes: Vec<PathBuf>,
    pub rejected: Vec<Rejection>,
}

/// Generates scenes for seeds `seed..seed + count`. Seeds whose generation
/// fails are skipped and reported.
pub fn cmd_generate(config: &GenerationConfig, count: usize, seed: u64, out: &Path) -> Result<GenerateOutcome> {
    let started = Instant::now();
    config.validate()?;
    let seeds: Vec<u64> = (0..count as u64)
        .map(|i| seed.checked_add(i).ok_or_else(|| Error::InvalidConfig("seed range overflows u64".into())))
        .collect::<Result<_>>()?;
    create_dir(out)?;
    let results: Vec<(u64, Result<Vec<u8>>)> = seeds
        .par_iter()
        .map(|&s| (s, generate_scene(config, s).and_then(|scene| scene_to_json(&scene))))
        .collect();

    let mut names = Vec::new();
    let mut scenes = Vec::new();
    let mut rejected = Vec::new();
    for (s, result) in results {
        match result {
            Ok(bytes) => {
                let name = scene_file_name(s);
                let path = out.join(&name);
                write_bytes(&path, &bytes)?;
                names.push(name);
                scenes.push(path);
            }
            Err(e) => rejected.push(Rejection {
                seed: s,
                reason: e.to_string(),
            }),
        }
    }
    let split = split_80_20(&names);
    write_json(&out.join(SPLIT_FILE), &split)?;

    let params = json!({"config": config, "count": count, "seed": seed});
    let mut outputs = names.clone();
    outputs.push(SPLIT_FILE.into());
    let manifest = ManifestDraft {
        command: "generate",
        digest: run_digest("generate", &params, &[])?,
        seeds,
        inputs: vec![],
        outputs,
        workers: rayon::current_num_threads(),
        started,
        details: json!({
            "requested": count,
            "generated": names.len(),
            "rejected": rejected,
            "train": split.train.len(),
            "val": split.val.len(),
        }),
    }
    .finish();
    write_manifest(out, &manifest)?;
    Ok(GenerateOutcome {
        manifest,
        scenes,
        rejected,
    })
}

// ---------------------------------------------------------------- label

#[derive(Debug, Clone)]
pub struct LabelOutcome {
    pub manifest: RunManifest,
    pub labels: Vec<PathBuf>,
}

/// Labels every scene file in `scenes`, writing label files into `out`
/// (default: next to the scenes). Output bytes do not depend on `workers`.
pub fn cmd_label(scenes: &Path, config: &LabelConfig, workers: usize, out: Option<&Path>) -> Result<LabelOutcome> {
    let started = Instant::now();
    config.validate()?;
    let pool = thread_pool(workers)?;
    let out = out.unwrap_or(scenes);
    let files = scene_files(scenes)?;
    if !files.is_empty() {
        create_dir(out)?;
    }

    let results: Vec<(String, String, Vec<u8>)> = pool.install(|| {
        files
            .par_iter()
            .map(|path| {
                let bytes = read_bytes(path)?;
                let name = file_name(path);
                let scene = scene_from_json(&bytes, path)?;
                let labels = label_scene(&scene, config).map_err(|e| e.in_file(path))?;
                Ok((name.clone(), sha256_hex(&bytes), labels_to_json(&labels, &name)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut written = Vec::new();
    let mut outputs = Vec::new();
    let mut hashes = Vec::new();
    for (name, hash, bytes) in &results {
        let label_name = label_file_name(name);
        let path = out.join(&label_name);
        write_bytes(&path, bytes)?;
        written.push(path);
        outputs.push(label_name);
        hashes.push((name.clone(), hash.clone()));
    }
    let params = json!({ "config": config });
    let manifest = ManifestDraft {
        command: "label",
        digest: run_digest("label", &params, &hashes)?,
        seeds: vec![],
        inputs: hashes.iter().map(|(n, _)| n.clone()).collect(),
        outputs,
        workers,
        started,
        details: json!({ "scenes": results.len() }),
    }
    .finish();
    if !results.is_empty() {
        write_manifest(out, &manifest)?;
    }
    Ok(LabelOutcome {
        manifest,
        labels: written,
    })
}
