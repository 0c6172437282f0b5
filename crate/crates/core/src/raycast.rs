//! Ray-cast occlusion oracle: orthographic or perspective rays from fruit
//! voxels against closed leaf-voxel cubes, with optional angular jitter.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{stream_rng, voxel_center, Vec3, VoxelIndex};
use crate::labeling::{
    canonical_directions, compute_targets, pixel_basis, scene_fruit_frame, DirectionLabels,
    FruitFrame, FruitLabels, LabelConfig, OcclusionLabels, Occluder, SceneVoxels, ZBuffer,
    DIRECTION_COUNT, DIRECTION_LABELS,
};
use crate::scene::{OrganKind, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Orthographic,
    Perspective,
}

/// Camera placed along each canonical direction of a fruit; the viewer looks
/// along `-d` toward the fruit centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub projection: Projection,
    /// Distance from the fruit centroid to the camera centre, meters.
    pub standoff: f64,
    /// Full field of view, radians. Perspective only: the eye is pulled back to
    /// `fruit_radius / tan(fov / 2)` when that exceeds the standoff.
    pub fov: f64,
    pub jitter_deg: f64,
    pub rays_per_fruit_voxel: usize,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            projection: Projection::Orthographic,
            standoff: 1.0,
            fov: 60f64.to_radians(),
            jitter_deg: 0.0,
            rays_per_fruit_voxel: 1,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.standoff > 0.0) {
            return bad("standoff must be positive");
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return bad("fov must lie in (0, pi)");
        }
        if !(self.jitter_deg >= 0.0) {
            return bad("jitter_deg must be non-negative");
        }
        if self.rays_per_fruit_voxel < 1 {
            return bad("rays_per_fruit_voxel must be at least 1");
        }
        Ok(())
    }
}

/// Rotates `d` by `jitter_deg` about an axis orthogonal to `d`, the axis angle
/// drawn from `rng`.
pub fn jitter_direction(frame: &FruitFrame, d: &Vec3, jitter_deg: f64, rng: &mut impl Rng) -> Vec3 {
    let phi: f64 = rng.gen_range(0.0..TAU);
    if jitter_deg == 0.0 {
        return *d;
    }
    let (u, v) = pixel_basis(frame, d);
    let axis = u * phi.cos() + v * phi.sin();
    let a = jitter_deg.to_radians();
    // Rodrigues with axis ⟂ d: d cos a + (axis × d) sin a.
    (d * a.cos() + axis.cross(d) * a.sin()).normalize()
}

/// Leaf voxels registered in a coarse grid (cell = 2 voxels) so that a voxel is
/// listed in every cell its closed cube touches. Coordinates are in voxel units.
struct VoxelGrid {
    cells: HashMap<[i64; 3], Vec<usize>>,
    voxels: Vec<(VoxelIndex, usize)>,
    lo: [i64; 3],
    hi: [i64; 3],
}

const CELL: f64 = 2.0;

impl VoxelGrid {
    fn new(voxels: Vec<(VoxelIndex, usize)>) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (n, (v, _)) in voxels.iter().enumerate() {
            // Closed cube [v, v+1] meets closed cell [2c, 2c+2] iff c in this range.
            let r: [(i64, i64); 3] =
                std::array::from_fn(|a| ((v[a] - 1).div_euclid(2), (v[a] + 1).div_euclid(2)));
            for (a, (l, h)) in r.iter().enumerate() {
                lo[a] = lo[a].min(*l);
                hi[a] = hi[a].max(*h);
            }
            for x in r[0].0..=r[0].1 {
                for y in r[1].0..=r[1].1 {
                    for z in r[2].0..=r[2].1 {
                        cells.entry([x, y, z]).or_default().push(n);
                    }
                }
            }
        }
        Self { cells, voxels, lo, hi }
    }

    /// Distinct instances hit with `0 < t_entry < t_max`, each at its first entry,
    /// ordered by entry parameter then id. `t` is in voxel units.
    fn trace(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Vec<(f64, usize)> {
        let mut hits: Vec<(f64, usize)> = Vec::new();
        if self.voxels.is_empty() {
            return hits;
        }
        let o = origin / CELL;
        let mut cell = [o.x.floor() as i64, o.y.floor() as i64, o.z.floor() as i64];
        let mut step = [0i64; 3];
        let mut t_next = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            if dir[a] > 0.0 {
                step[a] = 1;
                t_next[a] = ((cell[a] + 1) as f64 - o[a]) * CELL / dir[a];
                t_delta[a] = CELL / dir[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                t_next[a] = (cell[a] as f64 - o[a]) * CELL / dir[a];
                t_delta[a] = -CELL / dir[a];
            }
        }
        let mut seen = vec![false; self.voxels.len()];
        let mut t_cell = 0.0;
        loop {
            if let Some(list) = self.cells.get(&cell) {
                for &n in list {
                    if std::mem::replace(&mut seen[n], true) {
                        continue;
                    }
                    let (v, id) = self.voxels[n];
                    if let Some(t) = slab_entry(origin, dir, &v) {
                        if t > 0.0 && t < t_max {
                            match hits.iter_mut().find(|h| h.1 == id) {
                                Some(h) => h.0 = h.0.min(t),
                                None => hits.push((t, id)),
                            }
                        }
                    }
                }
            }
            let a = (0..3).min_by(|&i, &j| t_next[i].total_cmp(&t_next[j])).unwrap();
            if t_cell > t_max || !t_next[a].is_finite() {
                break;
            }
            t_cell = t_next[a];
            cell[a] += step[a];
            t_next[a] += t_delta[a];
            if (step[a] > 0 && cell[a] > self.hi[a]) || (step[a] < 0 && cell[a] < self.lo[a]) {
                break;
            }
        }
        hits.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        hits
    }
}

/// Entry parameter of the ray into the closed unit cube at `v`, if it hits.
fn slab_entry(o: &Vec3, d: &Vec3, v: &VoxelIndex) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let (lo, hi) = (v[a] as f64, v[a] as f64 + 1.0);
        if d[a] == 0.0 {
            if o[a] < lo || o[a] > hi {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some(t0)
}

fn sub_ray_origins(voxel: &VoxelIndex, count: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let base = Vec3::new(voxel[0] as f64, voxel[1] as f64, voxel[2] as f64);
    let mut out = vec![base.add_scalar(0.5)];
    for _ in 1..count {
        out.push(base + Vec3::new(rng.gen(), rng.gen(), rng.gen()));
    }
    out
}

fn cast_direction(
    voxels: &SceneVoxels,
    fruit: usize,
    leaves: &[usize],
    frame: &FruitFrame,
    k: usize,
    camera: &CameraSpec,
    eye_distance: f64,
    config: &LabelConfig,
    seed: u64,
) -> Result<DirectionLabels> {
    let res = voxels.resolution;
    let fruit_vox = &voxels.fruit(fruit)?.voxels;
    if fruit_vox.is_empty() {
        return Err(Error::EmptyInstance(fruit));
    }
    let mut rng = stream_rng(seed, (fruit * DIRECTION_COUNT + k) as u64);
    let d = canonical_directions(frame).vectors[k];
    let d = jitter_direction(frame, &d, camera.jitter_deg, &mut rng);
    let grid = VoxelGrid::new(
        leaves
            .iter()
            .flat_map(|&id| voxels.instances[id].voxels.iter().map(move |v| (*v, id)))
            .collect(),
    );
    let eye = (frame.origin + d * eye_distance) / res;

    let mut occluders = Vec::with_capacity(fruit_vox.len() * camera.rays_per_fruit_voxel);
    for v in fruit_vox {
        for o in sub_ray_origins(v, camera.rays_per_fruit_voxel, &mut rng) {
            let (dir, t_max) = match camera.projection {
                Projection::Orthographic => (d, f64::INFINITY),
                Projection::Perspective => {
                    let to_eye = eye - o;
                    (to_eye.normalize(), to_eye.norm())
                }
            };
            let hits = grid.trace(&o, &dir, t_max);
            occluders.push(
                hits.into_iter()
                    .map(|(t, instance)| Occluder { instance, gap: t * res })
                    .collect(),
            );
        }
    }
    Ok(compute_targets(&ZBuffer { occluders }, k, leaves, config))
}

/// Radius of the sphere about the fruit centroid enclosing the fruit and its
/// candidate leaves.
fn enclosing_radius(voxels: &SceneVoxels, fruit: usize, leaves: &[usize]) -> Result<f64> {
    let c = voxels.fruit(fruit)?.centroid;
    let half_diag = voxels.resolution * 3f64.sqrt() / 2.0;
    let r = std::iter::once(fruit)
        .chain(leaves.iter().copied())
        .flat_map(|id| voxels.instances[id].voxels.iter())
        .map(|v| (voxel_center(v, voxels.resolution) - c).norm() + half_diag)
        .fold(0.0, f64::max);
    Ok(r)
}

struct FruitSetup {
    fruit: usize,
    frame: FruitFrame,
    leaves: Vec<usize>,
    eye_distance: f64,
}

fn setup(voxels: &SceneVoxels, scene: &Scene, fruit: usize, camera: &CameraSpec, config: &LabelConfig) -> Result<FruitSetup> {
    let frame = scene_fruit_frame(scene, fruit)?;
    let leaves = voxels.occluder_universe(fruit, config.occluder_radius)?;
    let radius = enclosing_radius(voxels, fruit, &leaves)?;
    if camera.standoff <= radius {
        return Err(Error::StandoffTooSmall {
            standoff: camera.standoff,
            radius,
        });
    }
    let fruit_radius = enclosing_radius(voxels, fruit, &[])?;
    let eye_distance = camera.standoff.max(fruit_radius / (camera.fov / 2.0).tan());
    Ok(FruitSetup {
        fruit,
        frame,
        leaves,
        eye_distance,
    })
}

/// Ray-cast labels for one fruit along all 18 directions. Jitter axes and
/// sub-voxel ray origins come from `seed`, split per (fruit, direction).
pub fn cast_labels(
    scene: &Scene,
    fruit: usize,
    camera: &CameraSpec,
    config: &LabelConfig,
    seed: u64,
) -> Result<FruitLabels> {
    camera.validate()?;
    config.validate()?;
    let voxels = SceneVoxels::from_scene(scene, config.voxel_resolution);
    let s = setup(&voxels, scene, fruit, camera, config)?;
    let directions = (0..DIRECTION_COUNT)
        .map(|k| cast_direction(&voxels, fruit, &s.leaves, &s.frame, k, camera, s.eye_distance, config, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(FruitLabels {
        fruit,
        degenerate_frame: s.frame.degenerate,
        directions,
    })
}

/// Ray-cast labels for every fruit, parallel over (fruit, direction) pairs.
pub fn cast_scene(scene: &Scene, camera: &CameraSpec, config: &LabelConfig, seed: u64) -> Result<OcclusionLabels> {
    camera.validate()?;
    config.validate()?;
    let voxels = SceneVoxels::from_scene(scene, config.voxel_resolution);
    let setups = scene
        .ids_of(OrganKind::Fruit)
        .map(|f| setup(&voxels, scene, f, camera, config))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..setups.len())
        .flat_map(|i| (0..DIRECTION_COUNT).map(move |k| (i, k)))
        .collect();
    let per_pair = pairs
        .par_iter()
        .map(|&(i, k)| {
            let s = &setups[i];
            cast_direction(&voxels, s.fruit, &s.leaves, &s.frame, k, camera, s.eye_distance, config, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut chunks = per_pair.into_iter();
    let fruits = setups
        .iter()
        .map(|s| FruitLabels {
            fruit: s.fruit,
            degenerate_frame: s.frame.degenerate,
            directions: chunks.by_ref().take(DIRECTION_COUNT).collect(),
        })
        .collect();
    Ok(OcclusionLabels {
        config: config.clone(),
        fruits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionAgreement {
    pub direction: String,
    pub queries: usize,
    pub union_mae: f64,
    pub jaccard_top3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub queries: usize,
    pub union_mae: f64,
    pub jaccard_top3: f64,
    pub per_direction: Vec<DirectionAgreement>,
}

/// Leaves with positive graded mass, heaviest first (ties by id), at most three.
pub fn top3_by_mass(d: &DirectionLabels) -> Vec<usize> {
    let mut v: Vec<(f64, usize)> = d
        .leaves
        .iter()
        .filter(|l| l.mass > 0.0)
        .map(|l| (l.mass, l.leaf))
        .collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    v.into_iter().take(3).map(|(_, id)| id).collect()
}

/// Two empty sets agree perfectly.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn keyed(labels: &OcclusionLabels) -> BTreeMap<(usize, usize), &DirectionLabels> {
    labels
        .fruits
        .iter()
        .flat_map(|f| f.directions.iter().map(move |d| ((f.fruit, d.direction), d)))
        .collect()
}

/// Union MAE and mean top-3 Jaccard between two label sets over the same
/// (fruit, direction) keys.
pub fn compare_labels(a: &OcclusionLabels, b: &OcclusionLabels) -> Result<AgreementReport> {
    let (ka, kb) = (keyed(a), keyed(b));
    let missing: Vec<String> = ka
        .keys()
        .filter(|k| !kb.contains_key(k))
        .chain(kb.keys().filter(|k| !ka.contains_key(k)))
        .map(|(f, d)| format!("{f}/{}", DIRECTION_LABELS.get(*d).copied().unwrap_or("?")))
        .collect();
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(missing));
    }
    let mut per = vec![(0usize, 0.0f64, 0.0f64); DIRECTION_COUNT];
    for (key, da) in &ka {
        let db = kb[key];
        let slot = &mut per[key.1 % DIRECTION_COUNT];
        slot.0 += 1;
        slot.1 += (da.union - db.union).abs();
        slot.2 += jaccard(&top3_by_mass(da), &top3_by_mass(db));
    }
    let queries = ka.len();
    let total = per.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.1, acc.1 + p.2));
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let per_direction = per
        .iter()
        .enumerate()
        .filter(|(_, p)| p.0 > 0)
        .map(|(k, p)| DirectionAgreement {
            direction: DIRECTION_LABELS[k].to_string(),
            queries: p.0,
            union_mae: mean(p.1, p.0),
            jaccard_top3: mean(p.2, p.0),
        })
        .collect();
    Ok(AgreementReport {
        queries,
        union_mae: mean(total.0, queries),
        jaccard_top3: if queries == 0 { 1.0 } else { total.1 / queries as f64 },
        per_direction,
    })
}
