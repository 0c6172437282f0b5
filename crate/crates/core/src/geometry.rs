//! Small geometric vocabulary shared by every module: points, boxes, voxels.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Vec3 = Vector3<f64>;

/// Integer lattice coordinate of a voxel; cell `i` spans `[i*res, (i+1)*res)`.
pub type VoxelIndex = [i64; 3];

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// Tight box around a point set. `None` when empty.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn is_well_formed(&self) -> bool {
        (0..3).all(|a| self.min[a] <= self.max[a])
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn inflate(&self, margin: f64) -> Aabb {
        let m = Vec3::repeat(margin);
        Aabb::new(self.min - m, self.max + m)
    }
}

/// Maps each point to `floor(coord / resolution)` per axis, collapses duplicates
/// and returns the cells in lexicographic order.
pub fn voxelize(points: &[Vec3], resolution: f64) -> Vec<VoxelIndex> {
    assert!(resolution > 0.0, "voxel resolution must be positive");
    let mut cells: Vec<VoxelIndex> = points
        .iter()
        .map(|p| {
            [
                (p.x / resolution).floor() as i64,
                (p.y / resolution).floor() as i64,
                (p.z / resolution).floor() as i64,
            ]
        })
        .collect();
    cells.sort_unstable();
    cells.dedup();
    cells
}

pub fn voxel_center(index: &VoxelIndex, resolution: f64) -> Vec3 {
    Vec3::new(
        (index[0] as f64 + 0.5) * resolution,
        (index[1] as f64 + 0.5) * resolution,
        (index[2] as f64 + 0.5) * resolution,
    )
}

pub fn arithmetic_mean(points: &[Vec3]) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    Some(sum / points.len() as f64)
}

/// Rounds to 9 significant decimal digits, the precision of every file format.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

pub fn sig9_vec(v: &Vec3) -> [f64; 3] {
    [sig9(v.x), sig9(v.y), sig9(v.z)]
}

/// Independent deterministic RNG stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
