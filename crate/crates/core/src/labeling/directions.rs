use std::f64::consts::FRAC_1_SQRT_2;

use super::FruitFrame;
use crate::geometry::Vec3;

pub const DIRECTION_COUNT: usize = 18;

/// Stable identifiers in the fixed order used everywhere: the six axis
/// directions, then the xy, xz and yz bi-diagonals.
pub const DIRECTION_LABELS: [&str; DIRECTION_COUNT] = [
    "+x", "-x", "+y", "-y", "+z", "-z", //
    "+x+y", "+x-y", "-x+y", "-x-y", //
    "+x+z", "+x-z", "-x+z", "-x-z", //
    "+y+z", "+y-z", "-y+z", "-y-z",
];

/// Frame-relative coefficients `(x, y, z)` of each direction before normalisation.
const COEFFS: [[f64; 3]; DIRECTION_COUNT] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
    [1.0, 1.0, 0.0],
    [1.0, -1.0, 0.0],
    [-1.0, 1.0, 0.0],
    [-1.0, -1.0, 0.0],
    [1.0, 0.0, 1.0],
    [1.0, 0.0, -1.0],
    [-1.0, 0.0, 1.0],
    [-1.0, 0.0, -1.0],
    [0.0, 1.0, 1.0],
    [0.0, 1.0, -1.0],
    [0.0, -1.0, 1.0],
    [0.0, -1.0, -1.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    pub vectors: [Vec3; DIRECTION_COUNT],
}

impl DirectionSet {
    pub fn labels(&self) -> &'static [&'static str; DIRECTION_COUNT] {
        &DIRECTION_LABELS
    }
}

pub fn direction_index(label: &str) -> Option<usize> {
    DIRECTION_LABELS.iter().position(|l| *l == label)
}

/// The 18 canonical approach directions expressed in world coordinates.
pub fn canonical_directions(frame: &FruitFrame) -> DirectionSet {
    let vectors = COEFFS.map(|[a, b, c]| {
        let scale = if (a != 0.0) as u8 + (b != 0.0) as u8 + (c != 0.0) as u8 == 2 {
            FRAC_1_SQRT_2
        } else {
            1.0
        };
        (frame.x_hat * a + frame.y_hat * b + frame.z_hat * c) * scale
    });
    DirectionSet { vectors }
}
