use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{file_name, label_file_name, label_files, read_bytes, run_digest, scene_files, scene_key, sha256_hex, thread_pool, ManifestDraft};
use crate::bundle::{geometry_targets, PredictionBundle, ScenePrediction};
use crate::error::{Error, Result};
use crate::labeling::{mass_at_k, OcclusionLabels};
use crate::metrics::{evaluate, rank_order, MetricInputs, MetricReport, RankingQuery};
use crate::objectives::OcclusionBatch;
use crate::raycast::{cast_scene, compare_labels, AgreementReport, CameraSpec};
use crate::schema::{labels_from_json, read_predictions, read_scene, scene_from_json, RunManifest};
use crate::scene::Scene;

pub const VERIFY_SCHEMA: &str = "occlugraph.verify.v1";
pub const EVAL_SCHEMA: &str = "occlugraph.eval.v1";

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub camera: CameraSpec,
    pub seed: u64,
    pub workers: usize,
    /// Largest accepted overall union MAE.
    pub max_union_mae: f64,
    /// Directory holding the label files; defaults to the scene directory.
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAgreement {
    pub scene: String,
    pub report: AgreementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema: String,
    pub camera: CameraSpec,
    pub seed: u64,
    pub scenes: Vec<SceneAgreement>,
    pub queries: usize,
    /// Query-weighted means over all scenes.
    pub union_mae: f64,
    pub jaccard_top3: f64,
    pub max_union_mae: f64,
    pub passed: bool,
}

/// Ray-casts every labelled scene and compares against the stored z-buffer
/// labels.
pub fn cmd_verify(dir: &Path, opts: &VerifyOptions) -> Result<(VerifyReport, RunManifest)> {
    let started = Instant::now();
    opts.camera.validate()?;
    let pool = thread_pool(opts.workers)?;
    let label_dir = opts.labels.as_deref().unwrap_or(dir);
    let files = scene_files(dir)?;
    let results: Vec<(SceneAgreement, Vec<(String, String)>)> = pool.install(|| {
        files
            .par_iter()
            .map(|scene_path| {
                let name = file_name(scene_path);
                let label_path = label_dir.join(label_file_name(&name));
                let scene_bytes = read_bytes(scene_path)?;
                let label_bytes = read_bytes(&label_path)?;
                let scene = scene_from_json(&scene_bytes, scene_path)?;
                let doc = labels_from_json(&label_bytes, &label_path)?;
                let cast = cast_scene(&scene, &opts.camera, &doc.labels.config, opts.seed)
                    .map_err(|e| e.in_file(scene_path))?;
                let report = compare_labels(&doc.labels, &cast).map_err(|e| e.in_file(&label_path))?;
                let hashes = vec![
                    (name.clone(), sha256_hex(&scene_bytes)),
                    (file_name(&label_path), sha256_hex(&label_bytes)),
                ];
                Ok((SceneAgreement { scene: name, report }, hashes))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let queries: usize = results.iter().map(|(s, _)| s.report.queries).sum();
    let weighted = |f: fn(&AgreementReport) -> f64| {
        if queries == 0 {
            return 0.0;
        }
        results.iter().map(|(s, _)| f(&s.report) * s.report.queries as f64).sum::<f64>() / queries as f64
    };
    let union_mae = weighted(|r| r.union_mae);
    let jaccard_top3 = if queries == 0 { 1.0 } else { weighted(|r| r.jaccard_top3) };
    let hashes: Vec<(String, String)> = results.iter().flat_map(|(_, h)| h.clone()).collect();
    let report = VerifyReport {
        schema: VERIFY_SCHEMA.into(),
        camera: opts.camera.clone(),
        seed: opts.seed,
        scenes: results.into_iter().map(|(s, _)| s).collect(),
        queries,
        union_mae,
        jaccard_top3,
        max_union_mae: opts.max_union_mae,
        passed: union_mae <= opts.max_union_mae,
    };
    let params = json!({"camera": opts.camera, "seed": opts.seed, "max_union_mae": opts.max_union_mae});
    let manifest = ManifestDraft {
        command: "verify",
        digest: run_digest("verify", &params, &hashes)?,
        seeds: vec![opts.seed],
        inputs: hashes.into_iter().map(|(n, _)| n).collect(),
        outputs: vec![],
        workers: opts.workers,
        started,
        details: json!({"scenes": report.scenes.len(), "passed": report.passed}),
    }
    .finish();
    Ok((report, manifest))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub scenes: usize,
    pub points_per_instance: usize,
    pub metrics: MetricReport,
}

/// Appends one scene's labels and predictions to the metric inputs.
///
/// Ranking relevance is the graded mass; predicted scores are rank logits.
/// Edges are scored over the predicted edge set. Mass@K uses the top
/// `labels.config.layers` leaves by rank logit.
pub fn metric_inputs(
    inputs: &mut MetricInputs,
    scene: &Scene,
    labels: &OcclusionLabels,
    pred: &ScenePrediction,
    points_per_instance: usize,
) -> Result<()> {
    let batch = OcclusionBatch::new(labels, &pred.fruits)?;
    let mut tops: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for q in &batch.queries {
        let leaves = &batch.leaves[q.leaves.clone()];
        let scores: Vec<f64> = leaves.iter().map(|l| l.rank_logit).collect();
        let top = rank_order(&scores)
            .into_iter()
            .take(labels.config.layers)
            .map(|i| leaves[i].leaf)
            .collect();
        tops.entry(q.fruit).or_default().push(top);
        inputs.union_targets.push(q.union_target);
        inputs.union_preds.push(q.union_pred);
        if !leaves.is_empty() {
            inputs.ranking.push(RankingQuery {
                relevance: leaves.iter().map(|l| l.mass).collect(),
                scores,
            });
        }
    }
    for f in &labels.fruits {
        let top = tops.remove(&f.fruit).unwrap_or_default();
        inputs.mass_at_k.push(mass_at_k(f, &top, labels.config.epsilon)?);
    }

    for e in &pred.edges {
        scene.instance(e.src)?;
        scene.instance(e.dst)?;
        inputs.edge_labels.push(scene.is_attachment(e.src, e.dst));
        inputs.edge_scores.push(e.exist);
    }

    let targets = geometry_targets(scene, points_per_instance)?;
    let mut missing = Vec::new();
    for (inst, t) in scene.instances.iter().zip(&targets) {
        match pred.nodes.iter().find(|n| n.id == inst.id) {
            Some(n) => {
                inputs.pred_delta_c.extend(n.delta_c);
                inputs.delta_c.extend(t.delta_c.iter());
                inputs.pred_extents.extend(n.extents);
                inputs.extents.extend(t.extents.iter());
            }
            None => missing.push(format!("node/{}", inst.id)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(missing));
    }
    Ok(())
}

/// Label files in `labels_dir` with their scenes (from `scenes_dir`, default
/// `labels_dir`) and the matching prediction entries.
pub(super) fn load_evaluation_set<'a>(
    labels_dir: &Path,
    scenes_dir: Option<&Path>,
    bundle: &'a PredictionBundle,
) -> Result<Vec<(Scene, OcclusionLabels, &'a ScenePrediction)>> {
    let scenes_dir = scenes_dir.unwrap_or(labels_dir);
    label_files(labels_dir)?
        .iter()
        .map(|path| {
            let doc = labels_from_json(&read_bytes(path)?, path)?;
            let scene = read_scene(&scenes_dir.join(&doc.scene_file))?;
            let key = scene_key(&doc.scene_file);
            let pred = bundle
                .scene(key)
                .ok_or_else(|| Error::KeyMismatch(vec![key.to_string()]).in_file(path))?;
            Ok((scene, doc.labels, pred))
        })
        .collect()
}

pub fn cmd_eval(labels_dir: &Path, preds: &Path, scenes_dir: Option<&Path>, points_per_instance: usize) -> Result<EvalReport> {
    let bundle = read_predictions(preds)?;
    let set = load_evaluation_set(labels_dir, scenes_dir, &bundle)?;
    let mut inputs = MetricInputs::default();
    let mut tau = None;
    for (scene, labels, pred) in &set {
        metric_inputs(&mut inputs, scene, labels, pred, points_per_instance)
            .map_err(|e| e.in_file(labels_dir.join(label_file_name(&format!("{}.json", pred.scene)))))?;
        tau.get_or_insert(labels.config.tau_union);
    }
    let metrics = evaluate(&inputs, tau.unwrap_or(crate::labeling::LabelConfig::default().tau_union))?;
    Ok(EvalReport {
        schema: EVAL_SCHEMA.into(),
        scenes: set.len(),
        points_per_instance,
        metrics,
    })
}
