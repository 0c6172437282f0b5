use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Domain-randomisation ranges for [`generate_scene`](super::generate_scene).
///
/// All `[lo, hi]` ranges are inclusive. Lengths are in meters, angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub stem_count_range: [usize; 2],
    pub leaves_per_stem_range: [usize; 2],
    pub fruits_per_stem_range: [usize; 2],
    pub scale_jitter_range: [f64; 2],
    pub orientation_jitter_range: [f64; 2],
    pub attachment_height_range: [f64; 2],
    pub row_spacing: f64,
    pub collision_overlap_threshold: f64,
    pub voxel_resolution: f64,
    pub points_per_instance: usize,
    /// Parameter-space spacing of surface samples.
    pub surface_spacing: f64,
    pub max_placement_attempts: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            stem_count_range: [2, 3],
            leaves_per_stem_range: [4, 7],
            fruits_per_stem_range: [1, 3],
            scale_jitter_range: [0.85, 1.15],
            orientation_jitter_range: [-0.35, 0.35],
            attachment_height_range: [0.15, 0.55],
            row_spacing: 0.35,
            collision_overlap_threshold: 0.05,
            voxel_resolution: 0.004,
            points_per_instance: 128,
            surface_spacing: 0.0018,
            max_placement_attempts: 50,
        }
    }
}

impl GenerationConfig {
    /// Fixed organ counts, everything else at defaults.
    pub fn with_counts(stems: usize, leaves_per_stem: usize, fruits_per_stem: usize) -> Self {
        Self {
            stem_count_range: [stems, stems],
            leaves_per_stem_range: [leaves_per_stem, leaves_per_stem],
            fruits_per_stem_range: [fruits_per_stem, fruits_per_stem],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        let usize_ranges = [
            ("stem_count_range", self.stem_count_range),
            ("leaves_per_stem_range", self.leaves_per_stem_range),
            ("fruits_per_stem_range", self.fruits_per_stem_range),
        ];
        for (name, [lo, hi]) in usize_ranges {
            if lo > hi {
                return Err(Error::InvalidConfig(format!("{name} is empty")));
            }
        }
        if self.stem_count_range[0] == 0 {
            return bad("stem_count_range must allow at least one stem");
        }
        let f64_ranges = [
            ("scale_jitter_range", self.scale_jitter_range),
            ("orientation_jitter_range", self.orientation_jitter_range),
            ("attachment_height_range", self.attachment_height_range),
        ];
        for (name, [lo, hi]) in f64_ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} is empty")));
            }
        }
        if !(self.scale_jitter_range[0] > 0.0) {
            return bad("scale_jitter_range must be positive");
        }
        if !(self.attachment_height_range[0] > 0.0) {
            return bad("attachment_height_range must be positive");
        }
        if !(self.row_spacing > 0.0) {
            return bad("row_spacing must be positive");
        }
        if !(0.0..=1.0).contains(&self.collision_overlap_threshold) {
            return bad("collision_overlap_threshold must lie in [0, 1]");
        }
        if !(self.voxel_resolution > 0.0) {
            return bad("voxel_resolution must be positive");
        }
        if self.points_per_instance < 4 {
            return bad("points_per_instance must be at least 4");
        }
        // At least four samples per voxel face-sized patch.
        if !(self.surface_spacing > 0.0 && self.surface_spacing <= 0.5 * self.voxel_resolution) {
            return bad("surface_spacing must lie in (0, voxel_resolution / 2]");
        }
        if self.max_placement_attempts == 0 {
            return bad("max_placement_attempts must be positive");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> Vec<u8> {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).to_vec()
    }
}
