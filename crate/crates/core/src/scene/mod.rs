//! Procedurally generated multi-plant scenes with exact attachment topology.

mod collision;
mod config;
mod generate;
mod prototype;

pub use collision::{collision_broad, collision_narrow, overlap_count};
pub use config::GenerationConfig;
pub use generate::{generate_scene, sample_instance_points};
pub use prototype::{OrganPrototype, Primitive, Socket};

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{arithmetic_mean, Aabb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrganKind {
    Stem,
    Leaf,
    Peduncle,
    Fruit,
}

impl OrganKind {
    pub const ALL: [OrganKind; 4] = [
        OrganKind::Stem,
        OrganKind::Leaf,
        OrganKind::Peduncle,
        OrganKind::Fruit,
    ];

    /// Class index used by node-classification outputs.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OrganKind::Stem => "stem",
            OrganKind::Leaf => "leaf",
            OrganKind::Peduncle => "peduncle",
            OrganKind::Fruit => "fruit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    StemLeaf,
    StemPeduncle,
    PeduncleFruit,
}

impl Relation {
    pub const ALL: [Relation; 3] = [
        Relation::StemLeaf,
        Relation::StemPeduncle,
        Relation::PeduncleFruit,
    ];

    /// The only legal parent/child pairings.
    pub fn between(parent: OrganKind, child: OrganKind) -> Option<Relation> {
        match (parent, child) {
            (OrganKind::Stem, OrganKind::Leaf) => Some(Relation::StemLeaf),
            (OrganKind::Stem, OrganKind::Peduncle) => Some(Relation::StemPeduncle),
            (OrganKind::Peduncle, OrganKind::Fruit) => Some(Relation::PeduncleFruit),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Rigid placement of a prototype's local frame in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, local: &Vec3) -> Vec3 {
        self.rotation * local + self.translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrganInstance {
    pub id: usize,
    pub kind: OrganKind,
    pub pose: Pose,
    pub scale: f64,
    pub surface_points: Vec<Vec3>,
    pub centroid: Vec3,
    /// Side lengths of the axis-aligned bounding box of `surface_points`.
    pub extents: Vec3,
}

impl OrganInstance {
    /// Builds an instance, deriving centroid and extents from the points.
    pub fn new(
        id: usize,
        kind: OrganKind,
        pose: Pose,
        scale: f64,
        surface_points: Vec<Vec3>,
    ) -> Result<Self> {
        let centroid = arithmetic_mean(&surface_points).ok_or(Error::EmptyInstance(id))?;
        let extents = Aabb::from_points(&surface_points)
            .ok_or(Error::EmptyInstance(id))?
            .extents();
        Ok(Self {
            id,
            kind,
            pose,
            scale,
            surface_points,
            centroid,
            extents,
        })
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.surface_points).expect("instances are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttachmentEdge {
    pub parent: usize,
    pub child: usize,
    pub relation: Relation,
    pub anchor: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub instances: Vec<OrganInstance>,
    pub attachments: Vec<AttachmentEdge>,
    pub seed: u64,
    pub config_digest: Vec<u8>,
}

impl Scene {
    pub fn instance(&self, id: usize) -> Result<&OrganInstance> {
        self.instances.get(id).ok_or(Error::UnknownInstance(id))
    }

    pub fn ids_of(&self, kind: OrganKind) -> impl Iterator<Item = usize> + '_ {
        self.instances
            .iter()
            .filter(move |i| i.kind == kind)
            .map(|i| i.id)
    }

    pub fn parent_of(&self, child: usize) -> Option<usize> {
        self.attachments
            .iter()
            .find(|e| e.child == child)
            .map(|e| e.parent)
    }

    /// Stem carrying this organ: walks parent edges, falling back to the stem
    /// nearest in the xy-plane when the organ is unattached.
    pub fn stem_of(&self, id: usize) -> Option<usize> {
        let mut cur = id;
        for _ in 0..self.instances.len() {
            match self.instances.get(cur)?.kind {
                OrganKind::Stem => return Some(cur),
                _ => match self.parent_of(cur) {
                    Some(p) => cur = p,
                    None => break,
                },
            }
        }
        let here = self.instances.get(id)?.centroid;
        self.ids_of(OrganKind::Stem).min_by(|&a, &b| {
            let da = (self.instances[a].centroid - here).xy().norm();
            let db = (self.instances[b].centroid - here).xy().norm();
            da.total_cmp(&db).then(a.cmp(&b))
        })
    }

    pub fn is_attachment(&self, parent: usize, child: usize) -> bool {
        self.attachments
            .iter()
            .any(|e| e.parent == parent && e.child == child)
    }

    /// Diagonal of the box enclosing every instance; the length unit used to
    /// normalise pair geometry.
    pub fn scale(&self) -> f64 {
        self.instances
            .iter()
            .map(|i| i.aabb())
            .reduce(|a, b| a.union(&b))
            .map(|b| b.extents().norm())
            .unwrap_or(0.0)
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (idx, inst) in self.instances.iter().enumerate() {
            if inst.id != idx {
                return Err(format!("instance at position {idx} has id {}", inst.id));
            }
            if inst.surface_points.is_empty() {
                return Err(format!("instance {idx} has no points"));
            }
        }
        let n = self.instances.len();
        let mut parents = vec![0usize; n];
        for e in &self.attachments {
            if e.parent >= n || e.child >= n {
                return Err(format!("edge {}->{} out of range", e.parent, e.child));
            }
            let (pk, ck) = (self.instances[e.parent].kind, self.instances[e.child].kind);
            if Relation::between(pk, ck) != Some(e.relation) {
                return Err(format!(
                    "edge {}->{} relation {:?} does not match kinds {}->{}",
                    e.parent,
                    e.child,
                    e.relation,
                    pk.as_str(),
                    ck.as_str()
                ));
            }
            parents[e.child] += 1;
        }
        for inst in &self.instances {
            let expected = usize::from(inst.kind != OrganKind::Stem);
            if parents[inst.id] != expected {
                return Err(format!(
                    "{} {} has {} parents",
                    inst.kind.as_str(),
                    inst.id,
                    parents[inst.id]
                ));
            }
        }
        // One parent per non-stem node plus kind-legal edges already rules out
        // cycles: every edge strictly descends stem -> peduncle -> fruit.
        Ok(())
    }
}
