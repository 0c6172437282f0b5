use crate::geometry::Vec3;

/// Below this xy-distance the direction toward the stem is undefined.
const DEGENERATE_XY: f64 = 1e-6;

/// Right-handed orthonormal frame anchored at a fruit centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FruitFrame {
    pub origin: Vec3,
    pub x_hat: Vec3,
    pub y_hat: Vec3,
    pub z_hat: Vec3,
    /// Set when the stem lies (almost) straight above or below the fruit and
    /// `x_hat` fell back to the global x-axis.
    pub degenerate: bool,
}

impl FruitFrame {
    pub fn axes(&self) -> [Vec3; 3] {
        [self.x_hat, self.y_hat, self.z_hat]
    }

    pub fn identity_at(origin: Vec3) -> Self {
        Self {
            origin,
            x_hat: Vec3::x(),
            y_hat: Vec3::y(),
            z_hat: Vec3::z(),
            degenerate: false,
        }
    }
}

/// `x_hat` points from the fruit toward the stem, projected onto the plane
/// orthogonal to `up`; `z_hat = up` and `y_hat = z_hat × x_hat`.
pub fn fruit_local_frame(fruit_centroid: &Vec3, stem_reference: &Vec3, up: &Vec3) -> FruitFrame {
    let z_hat = up.normalize();
    let to_stem = stem_reference - fruit_centroid;
    let planar = to_stem - z_hat * to_stem.dot(&z_hat);
    let (x_hat, degenerate) = if planar.norm() < DEGENERATE_XY {
        let fallback = Vec3::x();
        ((fallback - z_hat * fallback.dot(&z_hat)).normalize(), true)
    } else {
        (planar.normalize(), false)
    };
    FruitFrame {
        origin: *fruit_centroid,
        x_hat,
        y_hat: z_hat.cross(&x_hat),
        z_hat,
        degenerate,
    }
}
