//! Layered z-buffer over voxel columns orthogonal to an approach direction.

use std::collections::HashMap;

use super::{FruitFrame, LabelConfig};
use crate::error::{Error, Result};
use crate::geometry::{arithmetic_mean, voxel_center, voxelize, Vec3, VoxelIndex};
use crate::scene::{OrganKind, Scene};

/// Voxelised instances of a scene, sharing one resolution and the world origin.
#[derive(Debug, Clone)]
pub struct SceneVoxels {
    pub resolution: f64,
    pub instances: Vec<InstanceVoxels>,
}

#[derive(Debug, Clone)]
pub struct InstanceVoxels {
    pub id: usize,
    pub kind: OrganKind,
    pub centroid: Vec3,
    pub voxels: Vec<VoxelIndex>,
}

impl SceneVoxels {
    pub fn from_scene(scene: &Scene, resolution: f64) -> Self {
        let instances = scene
            .instances
            .iter()
            .map(|inst| InstanceVoxels {
                id: inst.id,
                kind: inst.kind,
                centroid: inst.centroid,
                voxels: voxelize(&inst.surface_points, resolution),
            })
            .collect();
        Self {
            resolution,
            instances,
        }
    }

    /// Builds directly from voxel sets; centroids are the mean voxel centres.
    /// Instance ids are positions in `sets`.
    pub fn from_voxel_sets(resolution: f64, sets: Vec<(OrganKind, Vec<VoxelIndex>)>) -> Self {
        let instances = sets
            .into_iter()
            .enumerate()
            .map(|(id, (kind, mut voxels))| {
                voxels.sort_unstable();
                voxels.dedup();
                let centers: Vec<Vec3> = voxels.iter().map(|v| voxel_center(v, resolution)).collect();
                InstanceVoxels {
                    id,
                    kind,
                    centroid: arithmetic_mean(&centers).unwrap_or_else(Vec3::zeros),
                    voxels,
                }
            })
            .collect();
        Self {
            resolution,
            instances,
        }
    }

    pub fn get(&self, id: usize) -> Result<&InstanceVoxels> {
        self.instances.get(id).ok_or(Error::UnknownInstance(id))
    }

    pub fn fruit(&self, id: usize) -> Result<&InstanceVoxels> {
        let inst = self.get(id)?;
        if inst.kind != OrganKind::Fruit {
            return Err(Error::NotAFruit(id));
        }
        Ok(inst)
    }

    /// Leaves that may occlude `fruit`: all leaves, or those whose centroid is
    /// within `radius`, in ascending distance order with id tie-break.
    pub fn occluder_universe(&self, fruit: usize, radius: Option<f64>) -> Result<Vec<usize>> {
        let centroid = self.fruit(fruit)?.centroid;
        let leaves = self
            .instances
            .iter()
            .filter(|i| i.kind == OrganKind::Leaf)
            .map(|i| (i.id, i.centroid));
        Ok(match radius {
            Some(r) => crate::graph::candidate_occluders(&centroid, leaves, r),
            None => leaves.map(|(id, _)| id).collect(),
        })
    }
}

/// One occluding instance on a fruit-voxel ray, `gap` meters in front of the
/// fruit voxel along the approach direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub instance: usize,
    pub gap: f64,
}

/// Per fruit voxel, every distinct occluding instance ordered by increasing
/// depth gap (ties by instance id). The first `Z` entries are the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ZBuffer {
    pub occluders: Vec<Vec<Occluder>>,
}

impl ZBuffer {
    pub fn fruit_voxel_count(&self) -> usize {
        self.occluders.len()
    }

    pub fn layers(&self, voxel: usize, z: usize) -> &[Occluder] {
        let list = &self.occluders[voxel];
        &list[..list.len().min(z)]
    }
}

/// In-plane basis for the pixel grid orthogonal to `d`: the frame axis least
/// parallel to `d` (first on ties), orthogonalised against `d`, then `d × u`.
pub fn pixel_basis(frame: &FruitFrame, d: &Vec3) -> (Vec3, Vec3) {
    let axes = frame.axes();
    let mut best = 0;
    for i in 1..3 {
        if axes[i].dot(d).abs() < axes[best].dot(d).abs() {
            best = i;
        }
    }
    let a = axes[best];
    let u = (a - d * a.dot(d)).normalize();
    let v = d.cross(&u);
    (u, v)
}

/// Projection of a voxel centre onto the pixel grid plus its height along `d`.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    origin: Vec3,
    d: Vec3,
    u: Vec3,
    v: Vec3,
    resolution: f64,
}

impl Projector {
    pub fn new(frame: &FruitFrame, d: &Vec3, resolution: f64) -> Self {
        let (u, v) = pixel_basis(frame, d);
        Self {
            origin: frame.origin,
            d: *d,
            u,
            v,
            resolution,
        }
    }

    pub fn project(&self, voxel: &VoxelIndex) -> ((i64, i64), f64) {
        let p = voxel_center(voxel, self.resolution) - self.origin;
        let pixel = (
            (p.dot(&self.u) / self.resolution).floor() as i64,
            (p.dot(&self.v) / self.resolution).floor() as i64,
        );
        (pixel, p.dot(&self.d))
    }
}

/// Rasterises the occluder universe of `fruit` along `d` and returns, for every
/// fruit voxel, the instances lying strictly in front of it in the same pixel.
pub fn zbuffer_occlusion(
    voxels: &SceneVoxels,
    fruit: usize,
    frame: &FruitFrame,
    d: &Vec3,
    config: &LabelConfig,
) -> Result<ZBuffer> {
    let fruit_vox = &voxels.fruit(fruit)?.voxels;
    if fruit_vox.is_empty() {
        return Err(Error::EmptyInstance(fruit));
    }
    let proj = Projector::new(frame, d, voxels.resolution);
    let fruit_px: Vec<_> = fruit_vox.iter().map(|v| proj.project(v)).collect();
    let lowest = fruit_px
        .iter()
        .map(|(_, h)| *h)
        .fold(f64::INFINITY, f64::min);

    // Per pixel: (height along d, instance) of occluder voxels above the lowest fruit voxel.
    let mut columns: HashMap<(i64, i64), Vec<(f64, usize)>> = HashMap::new();
    for id in voxels.occluder_universe(fruit, config.occluder_radius)? {
        for v in &voxels.instances[id].voxels {
            let (px, h) = proj.project(v);
            if h > lowest {
                columns.entry(px).or_default().push((h, id));
            }
        }
    }

    let occluders = fruit_px
        .iter()
        .map(|(px, h_f)| {
            let Some(col) = columns.get(px) else {
                return Vec::new();
            };
            let mut nearest: Vec<Occluder> = Vec::new();
            for &(h, id) in col {
                if h <= *h_f {
                    continue;
                }
                let gap = h - h_f;
                match nearest.iter_mut().find(|o| o.instance == id) {
                    Some(o) => o.gap = o.gap.min(gap),
                    None => nearest.push(Occluder { instance: id, gap }),
                }
            }
            nearest.sort_by(|a, b| a.gap.total_cmp(&b.gap).then(a.instance.cmp(&b.instance)));
            nearest
        })
        .collect();
    Ok(ZBuffer { occluders })
}
