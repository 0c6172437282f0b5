use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde_json::{json, Value};

use super::{create_dir, file_name, label_files, read_bytes, scene_files, scene_key, write_bytes};
use crate::bundle::{
    oracle_prediction, DirectionPrediction, EdgePrediction, FruitPrediction, LeafPrediction, NodePrediction,
    PredictionBundle, ScenePrediction, NODE_CLASSES, RELATION_CLASSES,
};
use crate::error::Result;
use crate::geometry::Aabb;
use crate::graph::{
    candidate_occluders, direction_features, pair_geometry, scene_candidate_graph, GraphConfig, PAIR_GEOMETRY_DIM,
};
use crate::labeling::{canonical_directions, scene_fruit_frame, LabelConfig, OcclusionLabels, DIRECTION_LABELS};
use crate::schema::{labels_from_json, predictions_to_json, read_scene, to_json_bytes, GraphFile, PairFeatureEntry};
use crate::scene::{sample_instance_points, OrganKind, Scene};
use crate::scorer::{descriptor_embedding, ScorerWeights, DIRECTION_FEATURE_DIM};

pub enum Predictor {
    /// Ground truth echoed back as predictions.
    Oracle,
    /// Fixed scorer weights over geometric descriptors.
    Scorer(Box<ScorerWeights>),
}

pub struct PredictOptions {
    pub predictor: Predictor,
    pub graph: GraphConfig,
    pub points_per_instance: usize,
    pub scenes: Option<PathBuf>,
}

/// Scorer predictions for one scene. Occlusion outputs come from the scorer;
/// node and edge outputs are uninformative placeholders (uniform class and
/// relation probabilities, existence 0.5, zero centroid offset, extents of
/// the sampled points).
pub fn scorer_prediction(
    name: &str,
    scene: &Scene,
    labels: &OcclusionLabels,
    weights: &ScorerWeights,
    edges: &[(usize, usize)],
    points_per_instance: usize,
) -> Result<ScenePrediction> {
    let scale = scene.scale();
    let mut fruits = Vec::new();
    for f in &labels.fruits {
        let fruit = scene.instance(f.fruit)?;
        let fruit_emb = descriptor_embedding(fruit, scale);
        let dirs = canonical_directions(&scene_fruit_frame(scene, f.fruit)?);
        let mut encoded: Option<(Vec<usize>, Vec<Vec<f64>>, Vec<[f64; PAIR_GEOMETRY_DIM]>)> = None;
        let mut directions = Vec::new();
        for d in &f.directions {
            let ids: Vec<usize> = d.leaves.iter().map(|l| l.leaf).collect();
            if encoded.as_ref().map_or(true, |(prev, _, _)| *prev != ids) {
                let mut tokens = Vec::with_capacity(ids.len());
                let mut geometry = Vec::with_capacity(ids.len());
                for &id in &ids {
                    let leaf = scene.instance(id)?;
                    let g = pair_geometry(fruit, leaf, scale)?.0;
                    let mut t = descriptor_embedding(leaf, scale);
                    t.extend(g);
                    tokens.push(t);
                    geometry.push(g);
                }
                let ctx = weights.encode_leaf_set(&tokens)?;
                encoded = Some((ids.clone(), ctx, geometry));
            }
            let (_, ctx, geometry) = encoded.as_ref().expect("encoded above");
            let feats: Vec<[f64; DIRECTION_FEATURE_DIM]> = ids
                .iter()
                .map(|&id| {
                    let r = direction_features(&fruit.centroid, &scene.instances[id].centroid, &dirs.vectors[d.direction]);
                    [r.depth, r.lateral]
                })
                .collect();
            let s = weights.score_direction(&fruit_emb, ctx, geometry, &feats, d.direction)?;
            directions.push(DirectionPrediction {
                direction: d.direction,
                union: s.union,
                leaves: ids
                    .iter()
                    .enumerate()
                    .map(|(j, &leaf)| LeafPrediction {
                        leaf,
                        potential: s.potentials[j],
                        rank_logit: s.rank_logits[j],
                    })
                    .collect(),
            });
        }
        fruits.push(FruitPrediction {
            fruit: f.fruit,
            directions,
        });
    }

    let nodes = scene
        .instances
        .iter()
        .map(|inst| {
            let pts = sample_instance_points(inst, points_per_instance, scene.seed)?;
            let extents = Aabb::from_points(&pts).map_or(inst.extents, |b| b.extents());
            Ok(NodePrediction {
                id: inst.id,
                class_probs: [1.0 / NODE_CLASSES as f64; NODE_CLASSES],
                delta_c: [0.0; 3],
                extents: extents.into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let edges = edges
        .iter()
        .map(|&(src, dst)| EdgePrediction {
            src,
            dst,
            exist: 0.5,
            relation: [1.0 / RELATION_CLASSES as f64; RELATION_CLASSES],
        })
        .collect();
    Ok(ScenePrediction {
        scene: name.to_string(),
        nodes,
        edges,
        fruits,
    })
}

/// Predictions for every labelled scene in `labels_dir`, in label-file order.
pub fn cmd_predict(labels_dir: &Path, opts: &PredictOptions) -> Result<(PredictionBundle, Value)> {
    opts.graph.validate()?;
    let scenes_dir = opts.scenes.as_deref().unwrap_or(labels_dir);
    let mut scenes = Vec::new();
    for path in label_files(labels_dir)? {
        let doc = labels_from_json(&read_bytes(&path)?, &path)?;
        let scene = read_scene(&scenes_dir.join(&doc.scene_file))?;
        let graph = scene_candidate_graph(&scene, &opts.graph).map_err(|e| e.in_file(&path))?;
        let edges: Vec<(usize, usize)> = graph.edges.iter().map(|e| (e.src, e.dst)).collect();
        let name = scene_key(&doc.scene_file);
        let pred = match &opts.predictor {
            Predictor::Oracle => oracle_prediction(name, &scene, &doc.labels, &edges, opts.points_per_instance),
            Predictor::Scorer(w) => scorer_prediction(name, &scene, &doc.labels, w, &edges, opts.points_per_instance),
        }
        .map_err(|e| e.in_file(&path))?;
        scenes.push(pred);
    }
    let provenance = json!({
        "predictor": match opts.predictor { Predictor::Oracle => "oracle", Predictor::Scorer(_) => "scorer" },
        "scorer_config": match &opts.predictor { Predictor::Scorer(w) => json!(w.config), Predictor::Oracle => Value::Null },
        "graph": opts.graph,
        "points_per_instance": opts.points_per_instance,
    });
    Ok((PredictionBundle { scenes }, provenance))
}

/// Writes a prediction bundle file.
pub fn write_predictions(path: &Path, bundle: &PredictionBundle, provenance: Value) -> Result<()> {
    write_bytes(path, &predictions_to_json(bundle, provenance)?)
}

/// Candidate graph and per (fruit, candidate leaf) pair features for every
/// scene in `scenes_dir`, written as `graph_<scene file>` into `out`.
pub fn cmd_graph(scenes_dir: &Path, graph: &GraphConfig, labels: &LabelConfig, out: &Path) -> Result<Vec<PathBuf>> {
    graph.validate()?;
    labels.validate()?;
    let files = scene_files(scenes_dir)?;
    if !files.is_empty() {
        create_dir(out)?;
    }
    let mut written = Vec::new();
    for path in files {
        let name = file_name(&path);
        let scene = read_scene(&path)?;
        let g = scene_candidate_graph(&scene, graph).map_err(|e| e.in_file(&path))?;
        let scale = scene.scale();
        let mut pairs = Vec::new();
        for fid in scene.ids_of(OrganKind::Fruit) {
            let fruit = &scene.instances[fid];
            let dirs = canonical_directions(&scene_fruit_frame(&scene, fid)?);
            let leaves = scene
                .ids_of(OrganKind::Leaf)
                .map(|id| (id, scene.instances[id].centroid));
            let candidates = match labels.occluder_radius {
                Some(r) => candidate_occluders(&fruit.centroid, leaves, r),
                None => leaves.map(|(id, _)| id).collect(),
            };
            for id in candidates {
                let leaf = &scene.instances[id];
                let r: IndexMap<String, [f64; 2]> = dirs
                    .vectors
                    .iter()
                    .zip(DIRECTION_LABELS)
                    .map(|(d, label)| {
                        let f = direction_features(&fruit.centroid, &leaf.centroid, d);
                        (label.to_string(), [f.depth, f.lateral])
                    })
                    .collect();
                pairs.push(PairFeatureEntry {
                    fruit: fid,
                    leaf: id,
                    g: pair_geometry(fruit, leaf, scale).map_err(|e| e.in_file(&path))?.0.to_vec(),
                    r,
                });
            }
        }
        let file = GraphFile::new(&name, &scene, &g, graph, pairs);
        let target = out.join(format!("graph_{name}"));
        write_bytes(&target, &to_json_bytes(&file)?)?;
        written.push(target);
    }
    Ok(written)
}

