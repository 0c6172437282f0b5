//! Over-complete directed candidate edges (kNN ∪ radius ∪ stem rules) and the
//! geometric features attached to edges and fruit–leaf pairs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::{OrganInstance, OrganKind, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceRule {
    Knn,
    Radius,
    Stem,
}

/// Directed `(src, dst)` pair.
pub type DirectedEdge = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEdge {
    pub src: usize,
    pub dst: usize,
    /// Every rule that proposed this edge, in rule order.
    pub source_rules: Vec<SourceRule>,
    pub delta_c: Vec3,
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGraph {
    /// Sorted by `(src, dst)`.
    pub edges: Vec<CandidateEdge>,
    /// Set when the stem rule ran but found no stem.
    pub no_stems: bool,
}

impl CandidateGraph {
    pub fn contains(&self, src: usize, dst: usize) -> bool {
        self.edges
            .binary_search_by(|e| (e.src, e.dst).cmp(&(src, dst)))
            .is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub k: usize,
    pub radius: f64,
    pub stem_rule: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 8,
            radius: 0.15,
            stem_rule: true,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidConfig("radius must be positive".into()));
        }
        Ok(())
    }
}

/// `Δc = c_j − c_i` and its Euclidean length.
pub fn edge_attributes(c_i: &Vec3, c_j: &Vec3) -> (Vec3, f64) {
    let delta = c_j - c_i;
    (delta, delta.norm())
}

fn by_distance(here: &Vec3, others: impl Iterator<Item = (usize, Vec3)>) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = others.map(|(id, c)| ((c - here).norm(), id)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

/// For each node, edges from its `k` nearest other nodes into it (ties by id).
/// With fewer than `k + 1` nodes every other node is used.
pub fn knn_edges(centroids: &[Vec3], k: usize) -> Vec<DirectedEdge> {
    let mut out = Vec::new();
    for (i, c) in centroids.iter().enumerate() {
        let others = centroids
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, c)| (j, *c));
        for (_, j) in by_distance(c, others).into_iter().take(k) {
            out.push((j, i));
        }
    }
    out
}

/// Both directed edges for every pair within distance `r` (closed ball).
pub fn radius_edges(centroids: &[Vec3], r: f64) -> Vec<DirectedEdge> {
    let mut out = Vec::new();
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            if (centroids[j] - centroids[i]).norm() <= r {
                out.push((i, j));
                out.push((j, i));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StemEdges {
    pub edges: Vec<DirectedEdge>,
    pub no_stems: bool,
}

/// Connects each leaf and peduncle with its two nearest stems in the xy-plane,
/// in both directions.
pub fn stem_edges(kinds: &[OrganKind], centroids: &[Vec3]) -> Result<StemEdges> {
    if kinds.len() != centroids.len() {
        return Err(Error::Dimension {
            expected: centroids.len(),
            got: kinds.len(),
            context: "node kinds".into(),
        });
    }
    let stems: Vec<usize> = (0..kinds.len())
        .filter(|&i| kinds[i] == OrganKind::Stem)
        .collect();
    let mut edges = Vec::new();
    for (i, kind) in kinds.iter().enumerate() {
        if !matches!(kind, OrganKind::Leaf | OrganKind::Peduncle) {
            continue;
        }
        let mut near: Vec<(f64, usize)> = stems
            .iter()
            .map(|&s| ((centroids[s] - centroids[i]).xy().norm(), s))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, s) in near.into_iter().take(2) {
            edges.push((s, i));
            edges.push((i, s));
        }
    }
    Ok(StemEdges {
        edges,
        no_stems: stems.is_empty(),
    })
}

/// Union of the three rules with edge attributes. `kinds` may be ground truth
/// or externally predicted node classes.
pub fn build_candidate_graph(
    centroids: &[Vec3],
    kinds: &[OrganKind],
    config: &GraphConfig,
) -> Result<CandidateGraph> {
    config.validate()?;
    let mut rules: BTreeMap<DirectedEdge, Vec<SourceRule>> = BTreeMap::new();
    let mut add = |edges: Vec<DirectedEdge>, rule: SourceRule| {
        for e in edges {
            let entry = rules.entry(e).or_default();
            if !entry.contains(&rule) {
                entry.push(rule);
            }
        }
    };
    add(knn_edges(centroids, config.k), SourceRule::Knn);
    add(radius_edges(centroids, config.radius), SourceRule::Radius);
    let mut no_stems = false;
    if config.stem_rule {
        let s = stem_edges(kinds, centroids)?;
        no_stems = s.no_stems;
        add(s.edges, SourceRule::Stem);
    }
    let edges = rules
        .into_iter()
        .map(|((src, dst), source_rules)| {
            let (delta_c, dist) = edge_attributes(&centroids[src], &centroids[dst]);
            CandidateEdge {
                src,
                dst,
                source_rules,
                delta_c,
                dist,
            }
        })
        .collect();
    Ok(CandidateGraph { edges, no_stems })
}

pub fn scene_candidate_graph(scene: &Scene, config: &GraphConfig) -> Result<CandidateGraph> {
    let centroids: Vec<Vec3> = scene.instances.iter().map(|i| i.centroid).collect();
    let kinds: Vec<OrganKind> = scene.instances.iter().map(|i| i.kind).collect();
    build_candidate_graph(&centroids, &kinds, config)
}

/// `(found, total)` ground-truth attachment edges present in the graph.
pub fn attachment_recall(scene: &Scene, graph: &CandidateGraph) -> (usize, usize) {
    let found = scene
        .attachments
        .iter()
        .filter(|a| graph.contains(a.parent, a.child))
        .count();
    (found, scene.attachments.len())
}

/// Leaves whose centroid lies within `radius` of `centroid` (closed ball),
/// nearest first with id tie-break.
pub fn candidate_occluders(
    centroid: &Vec3,
    leaves: impl Iterator<Item = (usize, Vec3)>,
    radius: f64,
) -> Vec<usize> {
    by_distance(centroid, leaves)
        .into_iter()
        .filter(|(d, _)| *d <= radius)
        .map(|(_, id)| id)
        .collect()
}

pub const PAIR_GEOMETRY_DIM: usize = 11;

/// `[Δc/‖Δc‖ (3), ‖Δc‖ (1), s_leaf/s_fruit (3), s_leaf/scale (3), vol_leaf/vol_fruit (1)]`
/// with `Δc = c_leaf − c_fruit`; the unit displacement is zero when the
/// centroids coincide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry(pub [f64; PAIR_GEOMETRY_DIM]);

pub fn pair_geometry(fruit: &OrganInstance, leaf: &OrganInstance, scene_scale: f64) -> Result<PairGeometry> {
    for inst in [fruit, leaf] {
        if inst.extents.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::DegenerateInstance(inst.id));
        }
    }
    if !(scene_scale > 0.0) {
        return Err(Error::InvalidConfig("scene scale must be positive".into()));
    }
    let (delta, dist) = edge_attributes(&fruit.centroid, &leaf.centroid);
    let unit = if dist > 0.0 { delta / dist } else { Vec3::zeros() };
    let ratio = leaf.extents.component_div(&fruit.extents);
    let rel = leaf.extents / scene_scale;
    let volume = leaf.extents.product() / fruit.extents.product();
    Ok(PairGeometry([
        unit.x, unit.y, unit.z, dist, ratio.x, ratio.y, ratio.z, rel.x, rel.y, rel.z, volume,
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionFeatures {
    /// Signed offset of the leaf centroid along `d` from the fruit centroid.
    pub depth: f64,
    /// Distance of the leaf centroid from the line through the fruit along `d`.
    pub lateral: f64,
}

pub fn direction_features(fruit_centroid: &Vec3, leaf_centroid: &Vec3, d: &Vec3) -> DirectionFeatures {
    let delta = leaf_centroid - fruit_centroid;
    let depth = delta.dot(d);
    DirectionFeatures {
        depth,
        lateral: (delta - d * depth).norm(),
    }
}
