//! Model outputs consumed by the objectives and metrics, plus the
//! ground-truth geometry targets they are compared against.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{arithmetic_mean, Vec3};
use crate::labeling::{FruitLabels, OcclusionLabels};
use crate::scene::{sample_instance_points, OrganKind, Relation, Scene};

pub const NODE_CLASSES: usize = 4;
pub const RELATION_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafPrediction {
    pub leaf: usize,
    pub potential: f64,
    /// Pre-softmax rank score.
    pub rank_logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionPrediction {
    pub direction: usize,
    pub union: f64,
    pub leaves: Vec<LeafPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FruitPrediction {
    pub fruit: usize,
    pub directions: Vec<DirectionPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePrediction {
    pub src: usize,
    pub dst: usize,
    pub exist: f64,
    /// Probabilities over stem_leaf, stem_peduncle, peduncle_fruit.
    pub relation: [f64; RELATION_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePrediction {
    pub id: usize,
    /// Probabilities over stem, leaf, peduncle, fruit.
    pub class_probs: [f64; NODE_CLASSES],
    pub delta_c: [f64; 3],
    pub extents: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub scene: String,
    pub nodes: Vec<NodePrediction>,
    pub edges: Vec<EdgePrediction>,
    pub fruits: Vec<FruitPrediction>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub scenes: Vec<ScenePrediction>,
}

impl PredictionBundle {
    pub fn scene(&self, name: &str) -> Option<&ScenePrediction> {
        self.scenes.iter().find(|s| s.scene == name)
    }
}

/// Per-instance regression targets: offset of the true centroid from the mean
/// of the `n` sampled observation points, and the true extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryTarget {
    pub delta_c: Vec3,
    pub extents: Vec3,
}

pub fn geometry_targets(scene: &Scene, points_per_instance: usize) -> Result<Vec<GeometryTarget>> {
    scene
        .instances
        .iter()
        .map(|inst| {
            let pts = sample_instance_points(inst, points_per_instance, scene.seed)?;
            let mean = arithmetic_mean(&pts).unwrap_or(inst.centroid);
            Ok(GeometryTarget {
                delta_c: inst.centroid - mean,
                extents: inst.extents,
            })
        })
        .collect()
}

fn one_hot<const N: usize>(hot: usize) -> [f64; N] {
    std::array::from_fn(|c| if c == hot { 1.0 } else { 0.0 })
}

/// Predictions equal to the ground truth: one-hot classes and relations,
/// exact geometry, `û = o`, `ŝ = p` and rank logits `ln t` (floored).
pub fn oracle_prediction(
    name: &str,
    scene: &Scene,
    labels: &OcclusionLabels,
    edges: &[(usize, usize)],
    points_per_instance: usize,
) -> Result<ScenePrediction> {
    let geometry = geometry_targets(scene, points_per_instance)?;
    let nodes = scene
        .instances
        .iter()
        .zip(&geometry)
        .map(|(inst, g)| NodePrediction {
            id: inst.id,
            class_probs: one_hot(inst.kind.index()),
            delta_c: g.delta_c.into(),
            extents: g.extents.into(),
        })
        .collect();
    let edges = edges
        .iter()
        .map(|&(src, dst)| {
            let rel = Relation::between(scene.instances[src].kind, scene.instances[dst].kind);
            let exist = scene.is_attachment(src, dst);
            EdgePrediction {
                src,
                dst,
                exist: if exist { 1.0 } else { 0.0 },
                relation: match (exist, rel) {
                    (true, Some(r)) => one_hot(r.index()),
                    _ => [1.0 / RELATION_CLASSES as f64; RELATION_CLASSES],
                },
            }
        })
        .collect();
    Ok(ScenePrediction {
        scene: name.to_string(),
        nodes,
        edges,
        fruits: labels.fruits.iter().map(oracle_fruit).collect(),
    })
}

fn oracle_fruit(f: &FruitLabels) -> FruitPrediction {
    FruitPrediction {
        fruit: f.fruit,
        directions: f
            .directions
            .iter()
            .map(|d| DirectionPrediction {
                direction: d.direction,
                union: d.union,
                leaves: d
                    .leaves
                    .iter()
                    .map(|l| LeafPrediction {
                        leaf: l.leaf,
                        potential: l.potential,
                        rank_logit: l.rank_target.max(1e-12).ln(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Ground-truth one-hot class vector of an instance kind.
pub fn class_target(kind: OrganKind) -> [f64; NODE_CLASSES] {
    one_hot(kind.index())
}
