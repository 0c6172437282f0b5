//! Versioned JSON file formats. Every float is written at 9 significant digits.

use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{Quaternion, UnitQuaternion};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bundle::PredictionBundle;
use crate::error::{Error, Result};
use crate::geometry::{sig9, Vec3};
use crate::graph::{CandidateGraph, GraphConfig, SourceRule};
use crate::labeling::{
    direction_index, DirectionLabels, FruitLabels, LabelConfig, LeafTargets, OcclusionLabels, DIRECTION_LABELS,
};
use crate::scene::{AttachmentEdge, OrganInstance, OrganKind, Pose, Relation, Scene};

pub const SCENE_SCHEMA: &str = "occlugraph.scene.v1";
pub const LABEL_SCHEMA: &str = "occlugraph.labels.v1";
pub const PREDICTION_SCHEMA: &str = "occlugraph.predictions.v1";
pub const GRAPH_SCHEMA: &str = "occlugraph.graph.v1";
pub const MANIFEST_SCHEMA: &str = "occlugraph.manifest.v1";

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            *v = serde_json::Number::from_f64(sig9(x)).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Compact JSON with floats rounded to 9 significant digits and a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    let mut out = serde_json::to_vec(&v)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = to_json_bytes(value)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| malformed(path, e.to_string()))
}

fn malformed(path: &Path, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn check_schema(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(malformed(path, format!("schema {found:?}, expected {expected:?}")));
    }
    Ok(())
}

// ---------------------------------------------------------------- scenes

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    schema: String,
    seed: u64,
    config_digest: String,
    instances: Vec<InstanceEntry>,
    attachments: Vec<AttachmentEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceEntry {
    id: usize,
    kind: OrganKind,
    centroid: [f64; 3],
    extents: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`.
    rotation: [f64; 4],
    translation: [f64; 3],
    scale: f64,
    points: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttachmentEntry {
    parent: usize,
    child: usize,
    relation: Relation,
    anchor: [f64; 3],
}

pub fn scene_to_json(scene: &Scene) -> Result<Vec<u8>> {
    let file = SceneFile {
        schema: SCENE_SCHEMA.into(),
        seed: scene.seed,
        config_digest: hex::encode(&scene.config_digest),
        instances: scene
            .instances
            .iter()
            .map(|i| {
                let q = i.pose.rotation.quaternion();
                InstanceEntry {
                    id: i.id,
                    kind: i.kind,
                    centroid: i.centroid.into(),
                    extents: i.extents.into(),
                    rotation: [q.w, q.i, q.j, q.k],
                    translation: i.pose.translation.into(),
                    scale: i.scale,
                    points: i.surface_points.iter().map(|p| (*p).into()).collect(),
                }
            })
            .collect(),
        attachments: scene
            .attachments
            .iter()
            .map(|a| AttachmentEntry {
                parent: a.parent,
                child: a.child,
                relation: a.relation,
                anchor: a.anchor.into(),
            })
            .collect(),
    };
    to_json_bytes(&file)
}

/// Parses a scene file. Centroids and extents are recomputed from the stored
/// points so the instance invariants hold exactly on the loaded data.
pub fn scene_from_json(bytes: &[u8], path: &Path) -> Result<Scene> {
    let file: SceneFile = serde_json::from_slice(bytes).map_err(|e| malformed(path, e.to_string()))?;
    check_schema(path, &file.schema, SCENE_SCHEMA)?;
    let instances = file
        .instances
        .into_iter()
        .map(|e| {
            let [w, x, y, z] = e.rotation;
            let pose = Pose {
                rotation: UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
                translation: Vec3::from(e.translation),
            };
            let points = e.points.into_iter().map(Vec3::from).collect();
            OrganInstance::new(e.id, e.kind, pose, e.scale, points).map_err(|err| malformed(path, err.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let scene = Scene {
        instances,
        attachments: file
            .attachments
            .into_iter()
            .map(|a| AttachmentEdge {
                parent: a.parent,
                child: a.child,
                relation: a.relation,
                anchor: Vec3::from(a.anchor),
            })
            .collect(),
        seed: file.seed,
        config_digest: hex::decode(&file.config_digest).map_err(|e| malformed(path, e.to_string()))?,
    };
    scene.validate().map_err(|m| malformed(path, m))?;
    Ok(scene)
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    scene_from_json(&bytes, path)
}

// ---------------------------------------------------------------- labels

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelProvenance {
    pub config: LabelConfig,
    pub occluder_universe: String,
    pub layer: String,
    pub exclusive: String,
    pub degenerate_frames: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelFile {
    schema: String,
    scene_file: String,
    provenance: LabelProvenance,
    fruits: IndexMap<String, IndexMap<String, DirectionEntry>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DirectionEntry {
    union: f64,
    fruit_voxels: usize,
    leaves: IndexMap<String, LeafEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LeafEntry {
    pot: f64,
    excl: f64,
    raw_mass: f64,
    mass: f64,
    rank_t: f64,
}

pub fn labels_to_json(labels: &OcclusionLabels, scene_file: &str) -> Result<Vec<u8>> {
    let fruits = labels
        .fruits
        .iter()
        .map(|f| {
            let dirs = f
                .directions
                .iter()
                .map(|d| {
                    let leaves = d
                        .leaves
                        .iter()
                        .map(|l| {
                            let entry = LeafEntry {
                                pot: l.potential,
                                excl: l.exclusive,
                                raw_mass: l.raw_mass,
                                mass: l.mass,
                                rank_t: l.rank_target,
                            };
                            (l.leaf.to_string(), entry)
                        })
                        .collect();
                    let entry = DirectionEntry {
                        union: d.union,
                        fruit_voxels: d.fruit_voxels,
                        leaves,
                    };
                    (DIRECTION_LABELS[d.direction].to_string(), entry)
                })
                .collect();
            (f.fruit.to_string(), dirs)
        })
        .collect();
    let file = LabelFile {
        schema: LABEL_SCHEMA.into(),
        scene_file: scene_file.into(),
        provenance: LabelProvenance {
            config: labels.config.clone(),
            occluder_universe: "leaf instances".into(),
            layer: "distinct occluding instance, nearest to the fruit first".into(),
            exclusive: "fraction of fruit voxels whose sole occluder is the leaf".into(),
            degenerate_frames: labels.fruits.iter().filter(|f| f.degenerate_frame).map(|f| f.fruit).collect(),
        },
        fruits,
    };
    to_json_bytes(&file)
}

/// Parsed label file: labels plus the scene file name they were computed from.
#[derive(Debug, Clone)]
pub struct LabelDocument {
    pub scene_file: String,
    pub labels: OcclusionLabels,
}

pub fn labels_from_json(bytes: &[u8], path: &Path) -> Result<LabelDocument> {
    let file: LabelFile = serde_json::from_slice(bytes).map_err(|e| malformed(path, e.to_string()))?;
    check_schema(path, &file.schema, LABEL_SCHEMA)?;
    let parse_id = |s: &str| s.parse::<usize>().map_err(|_| malformed(path, format!("bad id {s:?}")));
    let mut fruits = Vec::new();
    for (fid, dirs) in file.fruits {
        let fruit = parse_id(&fid)?;
        let mut directions = Vec::new();
        for (label, d) in dirs {
            let direction = direction_index(&label).ok_or_else(|| malformed(path, format!("bad direction {label:?}")))?;
            let leaves = d
                .leaves
                .into_iter()
                .map(|(lid, l)| {
                    Ok(LeafTargets {
                        leaf: parse_id(&lid)?,
                        potential: l.pot,
                        exclusive: l.excl,
                        raw_mass: l.raw_mass,
                        mass: l.mass,
                        rank_target: l.rank_t,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            directions.push(DirectionLabels {
                direction,
                union: d.union,
                fruit_voxels: d.fruit_voxels,
                leaves,
            });
        }
        fruits.push(FruitLabels {
            fruit,
            degenerate_frame: file.provenance.degenerate_frames.contains(&fruit),
            directions,
        });
    }
    Ok(LabelDocument {
        scene_file: file.scene_file,
        labels: OcclusionLabels {
            config: file.provenance.config,
            fruits,
        },
    })
}

pub fn read_labels(path: &Path) -> Result<LabelDocument> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    labels_from_json(&bytes, path)
}

// ---------------------------------------------------------------- predictions

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionFile {
    schema: String,
    provenance: Value,
    #[serde(flatten)]
    bundle: PredictionBundle,
}

pub fn predictions_to_json(bundle: &PredictionBundle, provenance: Value) -> Result<Vec<u8>> {
    to_json_bytes(&PredictionFile {
        schema: PREDICTION_SCHEMA.into(),
        provenance,
        bundle: bundle.clone(),
    })
}

pub fn read_predictions(path: &Path) -> Result<PredictionBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: PredictionFile = serde_json::from_slice(&bytes).map_err(|e| malformed(path, e.to_string()))?;
    check_schema(path, &file.schema, PREDICTION_SCHEMA)?;
    Ok(file.bundle)
}

// ---------------------------------------------------------------- graphs

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphEdgeEntry {
    pub src: usize,
    pub dst: usize,
    pub source_rule: Vec<SourceRule>,
    pub delta_c: [f64; 3],
    pub d: f64,
    /// Whether the edge is a ground-truth attachment.
    pub attachment: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairFeatureEntry {
    pub fruit: usize,
    pub leaf: usize,
    pub g: Vec<f64>,
    /// Direction label → `[depth, lateral]`.
    pub r: IndexMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub schema: String,
    pub scene_file: String,
    pub config: GraphConfig,
    pub pair_geometry_layout: String,
    pub no_stems: bool,
    pub edges: Vec<GraphEdgeEntry>,
    pub pair_features: Vec<PairFeatureEntry>,
}

impl GraphFile {
    pub fn new(
        scene_file: &str,
        scene: &Scene,
        graph: &CandidateGraph,
        config: &GraphConfig,
        pair_features: Vec<PairFeatureEntry>,
    ) -> Self {
        Self {
            schema: GRAPH_SCHEMA.into(),
            scene_file: scene_file.into(),
            config: config.clone(),
            pair_geometry_layout: "unit_delta_c[3], distance[1], extent_ratio_leaf_over_fruit[3], leaf_extent_over_scene_scale[3], volume_ratio[1]".into(),
            no_stems: graph.no_stems,
            edges: graph
                .edges
                .iter()
                .map(|e| GraphEdgeEntry {
                    src: e.src,
                    dst: e.dst,
                    source_rule: e.source_rules.clone(),
                    delta_c: e.delta_c.into(),
                    d: e.dist,
                    attachment: scene.is_attachment(e.src, e.dst),
                })
                .collect(),
            pair_features,
        }
    }
}

// ---------------------------------------------------------------- manifests

/// Record of one command run. `wall_time_s` is the only field that varies
/// between identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub tool_version: String,
    /// SHA-256 over every configuration value that affects output bytes.
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub workers: usize,
    pub wall_time_s: f64,
    #[serde(default)]
    pub details: Value,
}
