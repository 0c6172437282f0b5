//! Direction-conditioned occlusion labels in fruit-local frames.
//!
//! For every fruit and each of the 18 canonical approach directions the labeler
//! rasterises nearby leaves into a layered z-buffer and derives:
//!
//! * `union`: fraction of fruit voxels hidden by at least one leaf,
//! * per leaf `potential`: fraction hidden by that leaf at any depth,
//! * per leaf `exclusive`: fraction whose only occluder is that leaf,
//! * per leaf `mass`: fraction where the leaf is among the first `Z` layers,
//!   raised to `gamma` and zeroed below the potential gate,
//! * per leaf `rank_target`: masses normalised over the leaf set.

mod directions;
mod frame;
mod zbuffer;

pub use directions::{canonical_directions, direction_index, DirectionSet, DIRECTION_COUNT, DIRECTION_LABELS};
pub use frame::{fruit_local_frame, FruitFrame};
pub use zbuffer::{
    pixel_basis, zbuffer_occlusion, InstanceVoxels, Occluder, Projector, SceneVoxels, ZBuffer,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::{OrganKind, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Number of z-buffer layers `Z`.
    pub layers: usize,
    pub voxel_resolution: f64,
    /// Denominator guard in rank normalisation and Mass@K.
    pub epsilon: f64,
    /// Exponent applied to layered occlusion mass.
    pub gamma: f64,
    /// Potential gate: masses of leaves with potential below this are zeroed.
    pub eps_pot: f64,
    pub tau_union: f64,
    /// Only leaves whose centroid lies within this distance of the fruit
    /// centroid are occluders; `None` admits every leaf.
    pub occluder_radius: Option<f64>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            voxel_resolution: 0.004,
            epsilon: 1e-8,
            gamma: 1.0,
            eps_pot: 0.02,
            tau_union: 0.5,
            occluder_radius: Some(0.2),
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.layers < 1 {
            return bad("layers must be at least 1");
        }
        if !(self.voxel_resolution > 0.0) {
            return bad("voxel_resolution must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(0.0..1.0).contains(&self.eps_pot) {
            return bad("eps_pot must lie in [0, 1)");
        }
        if !(self.tau_union > 0.0 && self.tau_union < 1.0) {
            return bad("tau_union must lie in (0, 1)");
        }
        if let Some(r) = self.occluder_radius {
            if !(r > 0.0) {
                return bad("occluder_radius must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafTargets {
    pub leaf: usize,
    pub potential: f64,
    pub exclusive: f64,
    /// Layered occlusion fraction before gating and exponentiation.
    pub raw_mass: f64,
    pub mass: f64,
    pub rank_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionLabels {
    pub direction: usize,
    pub union: f64,
    pub fruit_voxels: usize,
    /// Every leaf of the occluder universe, ascending id.
    pub leaves: Vec<LeafTargets>,
}

impl DirectionLabels {
    pub fn label(&self) -> &'static str {
        DIRECTION_LABELS[self.direction]
    }

    pub fn total_mass(&self) -> f64 {
        self.leaves.iter().map(|l| l.mass).sum()
    }

    pub fn leaf(&self, id: usize) -> Option<&LeafTargets> {
        self.leaves.iter().find(|l| l.leaf == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FruitLabels {
    pub fruit: usize,
    pub degenerate_frame: bool,
    pub directions: Vec<DirectionLabels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionLabels {
    pub config: LabelConfig,
    pub fruits: Vec<FruitLabels>,
}

impl OcclusionLabels {
    pub fn fruit(&self, id: usize) -> Option<&FruitLabels> {
        self.fruits.iter().find(|f| f.fruit == id)
    }

    pub fn queries(&self) -> impl Iterator<Item = (usize, &DirectionLabels)> {
        self.fruits
            .iter()
            .flat_map(|f| f.directions.iter().map(move |d| (f.fruit, d)))
    }
}

/// Per-voxel occluder lists → union, potential, exclusive, mass and rank targets.
/// `leaves` is the occluder universe; the output lists them in ascending id.
pub fn compute_targets(
    zbuf: &ZBuffer,
    direction: usize,
    leaves: &[usize],
    config: &LabelConfig,
) -> DirectionLabels {
    let n = zbuf.fruit_voxel_count();
    let mut ids = leaves.to_vec();
    ids.sort_unstable();
    let slot = |id: usize| ids.binary_search(&id).ok();

    let mut any = vec![0usize; ids.len()];
    let mut sole = vec![0usize; ids.len()];
    let mut layered = vec![0usize; ids.len()];
    let mut covered = 0usize;
    for (v, list) in zbuf.occluders.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        covered += 1;
        for o in list {
            if let Some(s) = slot(o.instance) {
                any[s] += 1;
            }
        }
        if let [only] = list.as_slice() {
            if let Some(s) = slot(only.instance) {
                sole[s] += 1;
            }
        }
        for o in zbuf.layers(v, config.layers) {
            if let Some(s) = slot(o.instance) {
                layered[s] += 1;
            }
        }
    }

    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let mut out: Vec<LeafTargets> = ids
        .iter()
        .enumerate()
        .map(|(s, &leaf)| {
            let potential = frac(any[s]);
            let raw_mass = frac(layered[s]);
            let mass = if potential >= config.eps_pot && raw_mass > 0.0 {
                raw_mass.powf(config.gamma)
            } else {
                0.0
            };
            LeafTargets {
                leaf,
                potential,
                exclusive: frac(sole[s]),
                raw_mass,
                mass,
                rank_target: 0.0,
            }
        })
        .collect();
    let total: f64 = out.iter().map(|l| l.mass).sum();
    for l in &mut out {
        l.rank_target = l.mass / (total + config.epsilon);
    }
    DirectionLabels {
        direction,
        union: frac(covered),
        fruit_voxels: n,
        leaves: out,
    }
}

/// Frame of a fruit in a scene: `x_hat` toward the axis of the stem carrying it.
pub fn scene_fruit_frame(scene: &Scene, fruit: usize) -> Result<FruitFrame> {
    let inst = scene.instance(fruit)?;
    if inst.kind != OrganKind::Fruit {
        return Err(Error::NotAFruit(fruit));
    }
    let reference = match scene.stem_of(fruit) {
        Some(stem) => scene.instances[stem].centroid,
        None => inst.centroid,
    };
    Ok(fruit_local_frame(&inst.centroid, &reference, &Vec3::z()))
}

/// Labels one fruit along all 18 directions from precomputed voxels.
pub fn label_fruit(
    voxels: &SceneVoxels,
    fruit: usize,
    frame: &FruitFrame,
    config: &LabelConfig,
) -> Result<FruitLabels> {
    let dirs = canonical_directions(frame);
    let leaves = voxels.occluder_universe(fruit, config.occluder_radius)?;
    let directions = dirs
        .vectors
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let zbuf = zbuffer_occlusion(voxels, fruit, frame, d, config)?;
            Ok(compute_targets(&zbuf, k, &leaves, config))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FruitLabels {
        fruit,
        degenerate_frame: frame.degenerate,
        directions,
    })
}

/// Labels every fruit of the scene. (fruit, direction) pairs run in parallel on
/// the current rayon pool; the result does not depend on the pool size.
pub fn label_scene(scene: &Scene, config: &LabelConfig) -> Result<OcclusionLabels> {
    config.validate()?;
    let voxels = SceneVoxels::from_scene(scene, config.voxel_resolution);
    let fruits: Vec<usize> = scene.ids_of(OrganKind::Fruit).collect();
    let frames = fruits
        .iter()
        .map(|&f| scene_fruit_frame(scene, f))
        .collect::<Result<Vec<_>>>()?;
    let universes = fruits
        .iter()
        .map(|&f| voxels.occluder_universe(f, config.occluder_radius))
        .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(usize, usize)> = (0..fruits.len())
        .flat_map(|i| (0..DIRECTION_COUNT).map(move |k| (i, k)))
        .collect();
    let per_pair = pairs
        .par_iter()
        .map(|&(i, k)| {
            let d = canonical_directions(&frames[i]).vectors[k];
            let zbuf = zbuffer_occlusion(&voxels, fruits[i], &frames[i], &d, config)?;
            Ok(compute_targets(&zbuf, k, &universes[i], config))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut chunks = per_pair.into_iter();
    let fruits = fruits
        .iter()
        .zip(frames.iter())
        .map(|(&fruit, frame)| FruitLabels {
            fruit,
            degenerate_frame: frame.degenerate,
            directions: chunks.by_ref().take(DIRECTION_COUNT).collect(),
        })
        .collect();
    Ok(OcclusionLabels {
        config: config.clone(),
        fruits,
    })
}

/// Mean over directions of the share of graded mass captured by the predicted
/// top-`Z` leaves: `(1/|K|) Σ_k Σ_{j∈top(k)} m_jk / (Σ_j m_jk + ε)`.
///
/// `top` holds one predicted leaf list per entry of `fruit.directions`, already
/// truncated to `Z`.
pub fn mass_at_k(fruit: &FruitLabels, top: &[Vec<usize>], epsilon: f64) -> Result<f64> {
    if top.len() != fruit.directions.len() {
        return Err(Error::Dimension {
            expected: fruit.directions.len(),
            got: top.len(),
            context: "top-Z lists per direction".into(),
        });
    }
    if fruit.directions.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = fruit
        .directions
        .iter()
        .zip(top)
        .map(|(d, picks)| {
            let mut seen = Vec::new();
            let captured: f64 = picks
                .iter()
                .filter(|j| {
                    let fresh = !seen.contains(*j);
                    seen.push(**j);
                    fresh
                })
                .filter_map(|j| d.leaf(*j))
                .map(|l| l.mass)
                .sum();
            captured / (d.total_mass() + epsilon)
        })
        .sum();
    Ok(sum / fruit.directions.len() as f64)
}
