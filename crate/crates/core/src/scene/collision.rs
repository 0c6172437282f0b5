//! Two-stage placement test: box overlap first, voxel overlap second.

use crate::error::{Error, Result};
use crate::geometry::{Aabb, VoxelIndex};

/// Closed-interval overlap on all three axes; boxes sharing a face collide.
pub fn collision_broad(a: &Aabb, b: &Aabb) -> bool {
    debug_assert!(a.is_well_formed() && b.is_well_formed());
    (0..3).all(|axis| a.min[axis] <= b.max[axis] && b.min[axis] <= a.max[axis])
}

/// Size of the intersection of two lexicographically sorted voxel sets.
pub fn overlap_count(a: &[VoxelIndex], b: &[VoxelIndex]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// True iff `|a ∩ b| / min(|a|, |b|)` strictly exceeds `threshold`.
///
/// Both sets must be sorted and deduplicated, as produced by
/// [`voxelize`](crate::geometry::voxelize).
pub fn collision_narrow(a: &[VoxelIndex], b: &[VoxelIndex], threshold: f64) -> Result<bool> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyVoxelSet);
    }
    let shared = overlap_count(a, b) as f64;
    Ok(shared / a.len().min(b.len()) as f64 > threshold)
}
