use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    collision_broad, collision_narrow, AttachmentEdge, GenerationConfig, OrganInstance, OrganKind,
    OrganPrototype, Pose, Relation, Scene,
};
use crate::error::{Error, Result};
use crate::geometry::{stream_rng, voxelize, Aabb, Vec3, VoxelIndex};

/// Stream reserved for scene-level draws (organ counts); organ `id` uses stream `id`.
const SCENE_STREAM: u64 = u64::MAX;

/// Nominal upward tilt of a leaf blade at its socket.
const LEAF_ELEVATION: f64 = 0.35;

struct Placed {
    aabb: Aabb,
    voxels: Vec<VoxelIndex>,
}

struct Candidate {
    pose: Pose,
    scale: f64,
    points: Vec<Vec3>,
    aabb: Aabb,
    voxels: Vec<VoxelIndex>,
}

struct Builder<'a> {
    config: &'a GenerationConfig,
    seed: u64,
    prototypes: [OrganPrototype; 4],
    instances: Vec<OrganInstance>,
    attachments: Vec<AttachmentEdge>,
    placed: Vec<Placed>,
}

/// Generates one scene. The output is a pure function of `(config, seed)`.
pub fn generate_scene(config: &GenerationConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let prototypes = OrganKind::ALL.map(OrganPrototype::default_for);
    for p in &prototypes {
        p.validate()?;
    }

    let mut rng = stream_rng(seed, SCENE_STREAM);
    let [s_lo, s_hi] = config.stem_count_range;
    let stems = rng.gen_range(s_lo..=s_hi);
    let plan: Vec<(usize, usize)> = (0..stems)
        .map(|_| {
            let [l_lo, l_hi] = config.leaves_per_stem_range;
            let [f_lo, f_hi] = config.fruits_per_stem_range;
            (rng.gen_range(l_lo..=l_hi), rng.gen_range(f_lo..=f_hi))
        })
        .collect();

    let mut b = Builder {
        config,
        seed,
        prototypes,
        instances: Vec::new(),
        attachments: Vec::new(),
        placed: Vec::new(),
    };
    for (slot, &(leaves, fruits)) in plan.iter().enumerate() {
        let stem = b.place_stem(slot, stems)?;
        for _ in 0..leaves {
            b.place_leaf(stem)?;
        }
        for _ in 0..fruits {
            b.place_fruit(stem)?;
        }
    }

    Ok(Scene {
        instances: b.instances,
        attachments: b.attachments,
        seed,
        config_digest: config.digest(),
    })
}

fn rot_z(a: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a)
}

fn rot_y(a: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a)
}

fn rot_x(a: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a)
}

impl Builder<'_> {
    fn proto(&self, kind: OrganKind) -> &OrganPrototype {
        &self.prototypes[kind.index()]
    }

    fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
        rng.gen_range(lo..=hi)
    }

    fn candidate(&self, kind: OrganKind, pose: Pose, scale: f64) -> Candidate {
        let points: Vec<Vec3> = self
            .proto(kind)
            .primitive
            .surface_points(scale, self.config.surface_spacing)
            .iter()
            .map(|p| pose.apply(p))
            .collect();
        let aabb = Aabb::from_points(&points).expect("prototypes produce points");
        let voxels = voxelize(&points, self.config.voxel_resolution);
        Candidate {
            pose,
            scale,
            points,
            aabb,
            voxels,
        }
    }

    /// Broad then narrow phase against everything placed except `ignore`.
    fn collides(&self, cand: &Candidate, ignore: &[usize]) -> Result<bool> {
        for (id, other) in self.placed.iter().enumerate() {
            if ignore.contains(&id) || !collision_broad(&cand.aabb, &other.aabb) {
                continue;
            }
            if collision_narrow(
                &cand.voxels,
                &other.voxels,
                self.config.collision_overlap_threshold,
            )? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn commit(&mut self, kind: OrganKind, cand: Candidate) -> Result<usize> {
        let id = self.instances.len();
        self.placed.push(Placed {
            aabb: cand.aabb,
            voxels: cand.voxels,
        });
        self.instances
            .push(OrganInstance::new(id, kind, cand.pose, cand.scale, cand.points)?);
        Ok(id)
    }

    fn attach(&mut self, parent: usize, child: usize, anchor: Vec3) {
        let relation = Relation::between(self.instances[parent].kind, self.instances[child].kind)
            .expect("builder only creates legal edges");
        self.attachments.push(AttachmentEdge {
            parent,
            child,
            relation,
            anchor,
        });
    }

    fn fail(&self, organ: usize, kind: OrganKind) -> Error {
        Error::PlacementFailed {
            organ,
            kind: kind.as_str(),
            attempts: self.config.max_placement_attempts,
        }
    }

    fn place_stem(&mut self, slot: usize, stems: usize) -> Result<usize> {
        let id = self.instances.len();
        let mut rng = stream_rng(self.seed, id as u64);
        let offset = (slot as f64 - (stems as f64 - 1.0) / 2.0) * self.config.row_spacing;
        for _ in 0..self.config.max_placement_attempts {
            let x = offset + rng.gen_range(-0.02..=0.02);
            let y = rng.gen_range(-0.03..=0.03);
            let yaw = rng.gen_range(0.0..2.0 * PI);
            let scale = Self::uniform(&mut rng, self.config.scale_jitter_range);
            let pose = Pose {
                rotation: rot_z(yaw),
                translation: Vec3::new(x, y, 0.0),
            };
            let cand = self.candidate(OrganKind::Stem, pose, scale);
            if !self.collides(&cand, &[])? {
                return self.commit(OrganKind::Stem, cand);
            }
        }
        Err(self.fail(id, OrganKind::Stem))
    }

    /// Picks a stem socket inside the attachment-height range and an azimuth on
    /// its ring. Returns the world anchor and the world azimuth.
    fn stem_anchor(
        &self,
        rng: &mut ChaCha8Rng,
        stem: usize,
        child: OrganKind,
    ) -> Result<(Vec3, f64)> {
        let st = &self.instances[stem];
        let [lo, hi] = self.config.attachment_height_range;
        let eligible: Vec<_> = self
            .proto(OrganKind::Stem)
            .sockets_for(child)
            .filter(|s| (lo..=hi).contains(&(s.position.z * st.scale)))
            .collect();
        if eligible.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "no stem socket inside attachment_height_range {lo}..{hi}"
            )));
        }
        let socket = eligible[rng.gen_range(0..eligible.len())];
        let phi = rng.gen_range(0.0..2.0 * PI);
        let local = socket.position + Vec3::new(phi.cos(), phi.sin(), 0.0) * socket.ring_radius;
        let anchor = st.pose.apply(&(local * st.scale));
        let (_, _, yaw) = st.pose.rotation.euler_angles();
        Ok((anchor, yaw + phi))
    }

    fn place_leaf(&mut self, stem: usize) -> Result<usize> {
        let id = self.instances.len();
        let mut rng = stream_rng(self.seed, id as u64);
        for _ in 0..self.config.max_placement_attempts {
            let (anchor, azimuth) = self.stem_anchor(&mut rng, stem, OrganKind::Leaf)?;
            let elevation =
                LEAF_ELEVATION + Self::uniform(&mut rng, self.config.orientation_jitter_range);
            let roll = Self::uniform(&mut rng, self.config.orientation_jitter_range);
            let scale = Self::uniform(&mut rng, self.config.scale_jitter_range);
            let pose = Pose {
                rotation: rot_z(azimuth) * rot_y(-elevation) * rot_x(roll),
                translation: anchor,
            };
            let cand = self.candidate(OrganKind::Leaf, pose, scale);
            if !self.collides(&cand, &[stem])? {
                let leaf = self.commit(OrganKind::Leaf, cand)?;
                self.attach(stem, leaf, anchor);
                return Ok(leaf);
            }
        }
        Err(self.fail(id, OrganKind::Leaf))
    }

    /// Places a peduncle and its fruit as one unit; both must clear collisions.
    fn place_fruit(&mut self, stem: usize) -> Result<usize> {
        let ped_id = self.instances.len();
        let fruit_id = ped_id + 1;
        let mut ped_rng = stream_rng(self.seed, ped_id as u64);
        let mut fruit_rng = stream_rng(self.seed, fruit_id as u64);
        let tip_local = self
            .proto(OrganKind::Peduncle)
            .sockets_for(OrganKind::Fruit)
            .next()
            .expect("peduncle prototype has a fruit socket")
            .position;
        let fruit_half_height = match self.proto(OrganKind::Fruit).primitive {
            super::Primitive::Superellipsoid { semi_axes, .. } => semi_axes[2],
            _ => unreachable!("fruit prototype is a superellipsoid"),
        };

        for _ in 0..self.config.max_placement_attempts {
            let (anchor, azimuth) = self.stem_anchor(&mut ped_rng, stem, OrganKind::Peduncle)?;
            let pitch = 0.5 * Self::uniform(&mut ped_rng, self.config.orientation_jitter_range);
            let ped_scale = Self::uniform(&mut ped_rng, self.config.scale_jitter_range);
            let ped_pose = Pose {
                rotation: rot_z(azimuth) * rot_y(pitch),
                translation: anchor,
            };
            let tip = ped_pose.apply(&(tip_local * ped_scale));

            let fruit_scale = Self::uniform(&mut fruit_rng, self.config.scale_jitter_range);
            let yaw = fruit_rng.gen_range(0.0..2.0 * PI);
            let tilt = 0.3 * Self::uniform(&mut fruit_rng, self.config.orientation_jitter_range);
            let rotation = rot_z(yaw) * rot_x(tilt.clamp(-FRAC_PI_2, FRAC_PI_2));
            let top = rotation * Vec3::new(0.0, 0.0, fruit_half_height * fruit_scale);
            let fruit_pose = Pose {
                rotation,
                translation: tip - top,
            };

            let ped = self.candidate(OrganKind::Peduncle, ped_pose, ped_scale);
            if self.collides(&ped, &[stem])? {
                continue;
            }
            let fruit = self.candidate(OrganKind::Fruit, fruit_pose, fruit_scale);
            if self.collides(&fruit, &[])? {
                continue;
            }
            let p = self.commit(OrganKind::Peduncle, ped)?;
            self.attach(stem, p, anchor);
            let f = self.commit(OrganKind::Fruit, fruit)?;
            self.attach(p, f, tip);
            return Ok(f);
        }
        Err(self.fail(fruit_id, OrganKind::Fruit))
    }
}

/// Draws `n` points from the instance surface: without replacement when the
/// surface has at least `n` points, with replacement otherwise. Deterministic
/// per `(instance.id, seed)`.
pub fn sample_instance_points(instance: &OrganInstance, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample size must be at least 1".into()));
    }
    let pts = &instance.surface_points;
    if pts.is_empty() {
        return Err(Error::EmptyInstance(instance.id));
    }
    let mut rng = stream_rng(seed, instance.id as u64);
    if pts.len() >= n {
        Ok(index::sample(&mut rng, pts.len(), n)
            .into_iter()
            .map(|i| pts[i])
            .collect())
    } else {
        Ok((0..n).map(|_| pts[rng.gen_range(0..pts.len())]).collect())
    }
}
