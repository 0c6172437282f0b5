//! Parametric organ prototypes standing in for mesh assets.
//!
//! Every prototype is described in its own local frame. Stems grow along +z from
//! the origin; leaves and peduncles extend along +x from their attachment point;
//! fruits are centred on the origin with their top at `+z`.

use std::f64::consts::PI;

use super::OrganKind;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Vertical cylinder whose radius tapers linearly from base to top.
    TaperedCylinder {
        height: f64,
        base_radius: f64,
        top_radius: f64,
    },
    /// Elliptical blade, bent downwards along its length and curled across it.
    BentSheet {
        length: f64,
        width: f64,
        droop: f64,
        curl: f64,
    },
    /// Tube following a quadratic arc that leaves horizontally and drops `drop`.
    CurvedTube { reach: f64, drop: f64, radius: f64 },
    /// `|x/a|^n + |y/b|^n + |z/c|^n = 1`.
    Superellipsoid { semi_axes: [f64; 3], exponent: f64 },
}

/// Attachment anchor: a point (or a ring of radius `ring_radius` around the
/// local z-axis) where a child organ of one of the `allowed` kinds may attach.
#[derive(Debug, Clone, PartialEq)]
pub struct Socket {
    pub position: Vec3,
    pub ring_radius: f64,
    pub allowed: Vec<OrganKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrganPrototype {
    pub kind: OrganKind,
    pub primitive: Primitive,
    pub sockets: Vec<Socket>,
}

impl Primitive {
    fn params(&self) -> Vec<f64> {
        match *self {
            Primitive::TaperedCylinder {
                height,
                base_radius,
                top_radius,
            } => vec![height, base_radius, top_radius],
            Primitive::BentSheet {
                length,
                width,
                droop,
                curl,
            } => vec![length, width, droop, curl],
            Primitive::CurvedTube {
                reach,
                drop,
                radius,
            } => vec![reach, drop, radius],
            Primitive::Superellipsoid {
                semi_axes,
                exponent,
            } => vec![semi_axes[0], semi_axes[1], semi_axes[2], exponent],
        }
    }

    /// Surface samples in the local frame, scaled by `scale`, with neighbouring
    /// samples at most roughly `spacing` apart.
    pub fn surface_points(&self, scale: f64, spacing: f64) -> Vec<Vec3> {
        match *self {
            Primitive::TaperedCylinder {
                height,
                base_radius,
                top_radius,
            } => {
                let (h, r0, r1) = (height * scale, base_radius * scale, top_radius * scale);
                let rings = (h / spacing).ceil() as usize + 1;
                let around = ((2.0 * PI * r0) / spacing).ceil().max(6.0) as usize;
                let mut pts = Vec::with_capacity(rings * around);
                for i in 0..rings {
                    let z = h * i as f64 / (rings - 1) as f64;
                    let r = r0 + (r1 - r0) * z / h;
                    for a in 0..around {
                        let t = 2.0 * PI * a as f64 / around as f64;
                        pts.push(Vec3::new(r * t.cos(), r * t.sin(), z));
                    }
                }
                pts
            }
            Primitive::BentSheet {
                length,
                width,
                droop,
                curl,
            } => {
                let (l, w) = (length * scale, width * scale);
                let along = (l / spacing).ceil() as usize + 1;
                let across = (w / spacing).ceil() as usize + 1;
                let mut pts = Vec::new();
                for i in 0..along {
                    let s = i as f64 / (along - 1) as f64;
                    let u = s * l;
                    // Elliptical outline: half-width vanishes at both tips.
                    let half = 0.5 * w * (1.0 - (2.0 * s - 1.0).powi(2)).max(0.0).sqrt();
                    let z_bend = -droop * scale * s * s;
                    for j in 0..across {
                        let v = (2.0 * j as f64 / (across - 1) as f64 - 1.0) * half;
                        let z = z_bend + curl * v * v / scale;
                        pts.push(Vec3::new(u, v, z));
                    }
                }
                pts
            }
            Primitive::CurvedTube {
                reach,
                drop,
                radius,
            } => {
                let r = radius * scale;
                let steps = ((reach + drop) * scale / spacing).ceil() as usize + 1;
                let around = ((2.0 * PI * r) / spacing).ceil().max(6.0) as usize;
                let mut pts = Vec::new();
                for i in 0..steps {
                    let t = i as f64 / (steps - 1) as f64;
                    let c = self.tube_centerline(t, scale);
                    let tangent = self.tube_tangent(t, scale).normalize();
                    let side = Vec3::y();
                    let normal = side.cross(&tangent).normalize();
                    for a in 0..around {
                        let th = 2.0 * PI * a as f64 / around as f64;
                        pts.push(c + (side * th.cos() + normal * th.sin()) * r);
                    }
                }
                pts
            }
            Primitive::Superellipsoid {
                semi_axes,
                exponent,
            } => {
                let [a, b, c] = semi_axes.map(|s| s * scale);
                // Area of the circumscribed ellipsoid over-estimates the surface,
                // which only increases density.
                let p = 1.6075;
                let area = 4.0
                    * PI
                    * (((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0).powf(1.0 / p);
                let count = (2.0 * area / (spacing * spacing)).ceil() as usize;
                let golden = PI * (3.0 - 5f64.sqrt());
                (0..count)
                    .map(|i| {
                        let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                        let rho = (1.0 - z * z).sqrt();
                        let phi = golden * i as f64;
                        let d = Vec3::new(rho * phi.cos(), rho * phi.sin(), z);
                        let f = (d.x / a).abs().powf(exponent)
                            + (d.y / b).abs().powf(exponent)
                            + (d.z / c).abs().powf(exponent);
                        d * f.powf(-1.0 / exponent)
                    })
                    .collect()
            }
        }
    }

    fn tube_centerline(&self, t: f64, scale: f64) -> Vec3 {
        let Primitive::CurvedTube { reach, drop, .. } = *self else {
            unreachable!()
        };
        Vec3::new(reach * scale * t, 0.0, -drop * scale * t * t)
    }

    fn tube_tangent(&self, t: f64, scale: f64) -> Vec3 {
        let Primitive::CurvedTube { reach, drop, .. } = *self else {
            unreachable!()
        };
        Vec3::new(reach * scale, 0.0, -2.0 * drop * scale * t)
    }
}

impl OrganPrototype {
    pub fn default_for(kind: OrganKind) -> Self {
        match kind {
            OrganKind::Stem => {
                let height = 0.7;
                let (base_radius, top_radius) = (0.011, 0.006);
                // Ring sockets every centimetre of height.
                let sockets = (1..70)
                    .map(|i| {
                        let z = i as f64 * 0.01;
                        Socket {
                            position: Vec3::new(0.0, 0.0, z),
                            ring_radius: base_radius + (top_radius - base_radius) * z / height,
                            allowed: vec![OrganKind::Leaf, OrganKind::Peduncle],
                        }
                    })
                    .collect();
                Self {
                    kind,
                    primitive: Primitive::TaperedCylinder {
                        height,
                        base_radius,
                        top_radius,
                    },
                    sockets,
                }
            }
            OrganKind::Leaf => Self {
                kind,
                primitive: Primitive::BentSheet {
                    length: 0.14,
                    width: 0.07,
                    droop: 0.05,
                    curl: 2.0,
                },
                sockets: Vec::new(),
            },
            OrganKind::Peduncle => {
                let (reach, drop) = (0.045, 0.02);
                Self {
                    kind,
                    primitive: Primitive::CurvedTube {
                        reach,
                        drop,
                        radius: 0.003,
                    },
                    sockets: vec![Socket {
                        position: Vec3::new(reach, 0.0, -drop),
                        ring_radius: 0.0,
                        allowed: vec![OrganKind::Fruit],
                    }],
                }
            }
            OrganKind::Fruit => Self {
                kind,
                primitive: Primitive::Superellipsoid {
                    semi_axes: [0.032, 0.032, 0.042],
                    exponent: 2.5,
                },
                sockets: Vec::new(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitive.params().iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "{} prototype has non-positive shape parameters",
                self.kind.as_str()
            )));
        }
        for socket in &self.sockets {
            for child in &socket.allowed {
                if super::Relation::between(self.kind, *child).is_none() {
                    return Err(Error::InvalidConfig(format!(
                        "socket on {} may not host {}",
                        self.kind.as_str(),
                        child.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sockets_for(&self, child: OrganKind) -> impl Iterator<Item = &Socket> {
        self.sockets.iter().filter(move |s| s.allowed.contains(&child))
    }
}
