//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod gradients;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion};
use occlugraph::geometry::{stream_rng, voxel_center, Vec3, VoxelIndex};
use occlugraph::labeling::{
    fruit_local_frame, pixel_basis, DirectionLabels, FruitFrame, LabelConfig, LeafTargets, SceneVoxels,
};
use occlugraph::scene::{AttachmentEdge, OrganInstance, OrganKind, Pose, Scene};
use rand::Rng;

pub const RES: f64 = 0.004;

// ---------------------------------------------------------------- z-buffer

/// Occlusion targets of one (fruit, direction) by exhaustive comparison of
/// every fruit voxel with every occluder voxel: `w` occludes `f` when both
/// centres fall in the same pixel of the grid orthogonal to `d` and `w` lies
/// strictly further along `d`.
pub fn brute_force_direction(
    voxels: &SceneVoxels,
    fruit: usize,
    frame: &FruitFrame,
    d: &Vec3,
    k: usize,
    cfg: &LabelConfig,
) -> DirectionLabels {
    let res = voxels.resolution;
    let fc = voxels.instances[fruit].centroid;
    let mut universe: Vec<usize> = voxels
        .instances
        .iter()
        .filter(|i| i.kind == OrganKind::Leaf)
        .filter(|i| cfg.occluder_radius.map_or(true, |r| (i.centroid - fc).norm() <= r))
        .map(|i| i.id)
        .collect();
    universe.sort_unstable();
    let (u, v) = pixel_basis(frame, d);
    let locate = |w: &VoxelIndex| {
        let p = voxel_center(w, res) - frame.origin;
        (((p.dot(&u) / res).floor() as i64, (p.dot(&v) / res).floor() as i64), p.dot(d))
    };

    let fruit_vox = &voxels.instances[fruit].voxels;
    let n = fruit_vox.len();
    let mut any = vec![0usize; universe.len()];
    let mut sole = vec![0usize; universe.len()];
    let mut layered = vec![0usize; universe.len()];
    let mut covered = 0;
    for f in fruit_vox {
        let (pf, hf) = locate(f);
        let mut hits: Vec<(f64, usize)> = Vec::new();
        for (slot, &id) in universe.iter().enumerate() {
            let best = voxels.instances[id]
                .voxels
                .iter()
                .map(locate)
                .filter(|(pw, hw)| *pw == pf && *hw > hf)
                .map(|(_, hw)| hw - hf)
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                hits.push((best, slot));
            }
        }
        if hits.is_empty() {
            continue;
        }
        covered += 1;
        for &(_, s) in &hits {
            any[s] += 1;
        }
        if hits.len() == 1 {
            sole[hits[0].1] += 1;
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(universe[a.1].cmp(&universe[b.1])));
        for &(_, s) in hits.iter().take(cfg.layers) {
            layered[s] += 1;
        }
    }
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let mut leaves: Vec<LeafTargets> = universe
        .iter()
        .enumerate()
        .map(|(s, &leaf)| {
            let potential = frac(any[s]);
            let raw_mass = frac(layered[s]);
            let mass = if potential >= cfg.eps_pot && raw_mass > 0.0 {
                raw_mass.powf(cfg.gamma)
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
    let total: f64 = leaves.iter().map(|l| l.mass).sum();
    for l in &mut leaves {
        l.rank_target = l.mass / (total + cfg.epsilon);
    }
    DirectionLabels {
        direction: k,
        union: frac(covered),
        fruit_voxels: n,
        leaves,
    }
}

/// First instances hit by stepping one voxel at a time from each fruit voxel
/// along an axis direction `step`. Returns per fruit voxel the distinct
/// instances in the order met.
pub fn axis_ray_march(voxels: &SceneVoxels, fruit: usize, step: [i64; 3], max_steps: i64) -> Vec<Vec<usize>> {
    let mut owner: BTreeMap<VoxelIndex, Vec<usize>> = BTreeMap::new();
    for inst in voxels.instances.iter().filter(|i| i.kind == OrganKind::Leaf) {
        for v in &inst.voxels {
            owner.entry(*v).or_default().push(inst.id);
        }
    }
    voxels.instances[fruit]
        .voxels
        .iter()
        .map(|f| {
            let mut met = Vec::new();
            for s in 1..=max_steps {
                let at = [f[0] + s * step[0], f[1] + s * step[1], f[2] + s * step[2]];
                if let Some(ids) = owner.get(&at) {
                    let mut ids = ids.clone();
                    ids.sort_unstable();
                    for id in ids {
                        if !met.contains(&id) {
                            met.push(id);
                        }
                    }
                }
            }
            met
        })
        .collect()
}

/// Random scene of one fruit block and up to four leaf patches, at most
/// 2,000 voxels, plus a fruit frame rotated about z by a random stem bearing.
pub fn micro_scene(seed: u64) -> (SceneVoxels, FruitFrame) {
    let mut rng = stream_rng(seed, 7);
    let mut sets = Vec::new();
    let dims = [rng.gen_range(2..8i64), rng.gen_range(2..8i64), rng.gen_range(2..8i64)];
    let mut fruit = Vec::new();
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                if rng.gen_bool(0.85) {
                    fruit.push([x, y, z]);
                }
            }
        }
    }
    if fruit.is_empty() {
        fruit.push([0, 0, 0]);
    }
    sets.push((OrganKind::Fruit, fruit));
    for _ in 0..rng.gen_range(0..5) {
        let thick = rng.gen_range(0..3usize);
        let mut size = [rng.gen_range(1..10i64), rng.gen_range(1..10i64), rng.gen_range(1..10i64)];
        size[thick] = rng.gen_range(1..3);
        let origin = [rng.gen_range(-10..10i64), rng.gen_range(-10..10i64), rng.gen_range(-10..10i64)];
        let mut patch = Vec::new();
        for x in 0..size[0] {
            for y in 0..size[1] {
                for z in 0..size[2] {
                    if rng.gen_bool(0.9) {
                        patch.push([origin[0] + x, origin[1] + y, origin[2] + z]);
                    }
                }
            }
        }
        if !patch.is_empty() {
            sets.push((OrganKind::Leaf, patch));
        }
    }
    let voxels = SceneVoxels::from_voxel_sets(RES, sets);
    let c = voxels.instances[0].centroid;
    let bearing: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let stem = c + Vec3::new(bearing.cos(), bearing.sin(), rng.gen_range(-0.5..0.5));
    (voxels, fruit_local_frame(&c, &stem, &Vec3::z()))
}

pub fn voxel_count(v: &SceneVoxels) -> usize {
    v.instances.iter().map(|i| i.voxels.len()).sum()
}

/// Fruit slab in the `x = 0` plane (rows along y, 10 × 10) with leaf L1 at
/// `x = 3` over rows 0–3 and leaf L2 at `x = 6` over rows 2–4.
pub fn two_slab_scene() -> SceneVoxels {
    let plane = |x: i64, rows: std::ops::Range<i64>| -> Vec<VoxelIndex> {
        rows.flat_map(|y| (0..10).map(move |z| [x, y, z])).collect()
    };
    SceneVoxels::from_voxel_sets(
        RES,
        vec![
            (OrganKind::Fruit, plane(0, 0..10)),
            (OrganKind::Leaf, plane(3, 0..4)),
            (OrganKind::Leaf, plane(6, 2..5)),
        ],
    )
}

/// Fruit block enclosed on all sides by a one-voxel leaf shell at distance 2.
pub fn enclosed_scene() -> SceneVoxels {
    let fruit: Vec<VoxelIndex> = (0..4)
        .flat_map(|x| (0..4).flat_map(move |y| (0..4).map(move |z| [x, y, z])))
        .collect();
    let shell: Vec<VoxelIndex> = (-3..7)
        .flat_map(|x| (-3..7).flat_map(move |y| (-3..7).map(move |z| [x, y, z])))
        .filter(|v| v.iter().any(|c| *c == -3 || *c == 6))
        .collect();
    SceneVoxels::from_voxel_sets(RES, vec![(OrganKind::Fruit, fruit), (OrganKind::Leaf, shell)])
}

/// The scene rotated about the world z-axis by `quarter_turns × 90°`, using
/// exact coordinate swaps.
pub fn rotate_scene_z(scene: &Scene, quarter_turns: u32) -> Scene {
    let turn = |p: &Vec3| {
        let mut q = *p;
        for _ in 0..quarter_turns % 4 {
            q = Vec3::new(-q.y, q.x, q.z);
        }
        q
    };
    let angle = f64::from(quarter_turns % 4) * std::f64::consts::FRAC_PI_2;
    let r = UnitQuaternion::from_rotation_matrix(&Rotation3::from_axis_angle(&Vec3::z_axis(), angle));
    let instances = scene
        .instances
        .iter()
        .map(|i| {
            let pose = Pose {
                rotation: r * i.pose.rotation,
                translation: turn(&i.pose.translation),
            };
            OrganInstance::new(i.id, i.kind, pose, i.scale, i.surface_points.iter().map(turn).collect()).unwrap()
        })
        .collect();
    Scene {
        instances,
        attachments: scene
            .attachments
            .iter()
            .map(|a| AttachmentEdge {
                anchor: turn(&a.anchor),
                ..a.clone()
            })
            .collect(),
        seed: scene.seed,
        config_digest: scene.config_digest.clone(),
    }
}

// ---------------------------------------------------------------- metrics

/// Selection-sort ranking: repeatedly take the highest remaining score, the
/// lowest index among equals.
pub fn oracle_ranking(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut pick = 0;
        for (p, &j) in left.iter().enumerate() {
            if scores[j] > scores[left[pick]] {
                pick = p;
            }
        }
        out.push(left.remove(pick));
    }
    out
}

fn oracle_dcg(rel: &[f64], order: &[usize], k: usize) -> f64 {
    let mut s = 0.0;
    for (r, &j) in order.iter().take(k).enumerate() {
        s += rel[j] / (r as f64 + 2.0).log2();
    }
    s
}

/// Ideal DCG as the maximum over every ordered selection of `min(k, n)` items.
fn oracle_idcg(rel: &[f64], k: usize) -> f64 {
    fn go(rel: &[f64], k: usize, used: &mut Vec<usize>, best: &mut f64) {
        if used.len() == k.min(rel.len()) {
            *best = best.max(oracle_dcg(rel, used, k));
            return;
        }
        for j in 0..rel.len() {
            if !used.contains(&j) {
                used.push(j);
                go(rel, k, used, best);
                used.pop();
            }
        }
    }
    let mut best = 0.0;
    go(rel, k, &mut Vec::new(), &mut best);
    best
}

pub fn oracle_ndcg(rel: &[f64], scores: &[f64], k: usize) -> Option<f64> {
    if rel.iter().all(|r| *r == 0.0) {
        return None;
    }
    Some(oracle_dcg(rel, &oracle_ranking(scores), k) / oracle_idcg(rel, k))
}

pub fn oracle_recall(rel: &[f64], scores: &[f64], k: usize) -> Option<bool> {
    let max = rel.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let dominant = rel.iter().position(|r| *r == max)?;
    Some(oracle_ranking(scores).iter().take(k).any(|j| *j == dominant))
}

/// Best F1 over thresholds `score ≥ t` for `t` in every score and `±∞`.
pub fn oracle_best_f1(labels: &[bool], scores: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds.push(f64::NEG_INFINITY);
    thresholds
        .iter()
        .map(|&t| {
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for (l, s) in labels.iter().zip(scores) {
                match (*l, *s >= t) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fn_ += 1.0,
                    _ => {}
                }
            }
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .fold(0.0, f64::max)
}

/// Mean |û − o| within `o < 0.25`, `0.25 ≤ o ≤ 0.5` and `o > 0.5`.
pub fn oracle_binned_mae(targets: &[f64], preds: &[f64]) -> [Option<f64>; 3] {
    let bins: [&dyn Fn(f64) -> bool; 3] = [&|o| o < 0.25, &|o| (0.25..=0.5).contains(&o), &|o| o > 0.5];
    bins.map(|inside| {
        let errs: Vec<f64> = targets
            .iter()
            .zip(preds)
            .filter(|(o, _)| inside(**o))
            .map(|(o, u)| (u - o).abs())
            .collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    })
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

// ---------------------------------------------------------------- files

/// File name → bytes for every file in `dir`. Manifests are compared without
/// their run-specific `wall_time_s` and `workers` fields.
pub fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = std::fs::read(&path).unwrap();
        if name.starts_with("manifest_") {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            let m = v.as_object_mut().unwrap();
            m.remove("wall_time_s");
            m.remove("workers");
            bytes = serde_json::to_vec(&v).unwrap();
        }
        out.insert(name, bytes);
    }
    out
}

/// The scene without its leaves; remaining ids are renumbered in order.
pub fn strip_leaves(scene: &Scene) -> Scene {
    let kept: Vec<&OrganInstance> = scene.instances.iter().filter(|i| i.kind != OrganKind::Leaf).collect();
    let new_id = |old: usize| kept.iter().position(|i| i.id == old);
    Scene {
        instances: kept
            .iter()
            .enumerate()
            .map(|(n, i)| OrganInstance { id: n, ..(*i).clone() })
            .collect(),
        attachments: scene
            .attachments
            .iter()
            .filter_map(|a| {
                Some(AttachmentEdge {
                    parent: new_id(a.parent)?,
                    child: new_id(a.child)?,
                    ..a.clone()
                })
            })
            .collect(),
        seed: scene.seed,
        config_digest: scene.config_digest.clone(),
    }
}

/// generate → label → oracle predictions → eval under `root` with a pool of
/// `workers` threads. Returns every written file keyed by relative path.
pub fn run_pipeline(root: &Path, count: usize, seed: u64, workers: usize) -> BTreeMap<String, Vec<u8>> {
    use occlugraph::graph::GraphConfig;
    use occlugraph::pipeline::{cmd_eval, cmd_generate, cmd_label, cmd_predict, write_predictions, PredictOptions, Predictor};
    use occlugraph::scene::GenerationConfig;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
    let scenes = root.join("scenes");
    let labels = root.join("labels");
    let eval = root.join("eval");
    pool.install(|| cmd_generate(&GenerationConfig::default(), count, seed, &scenes)).unwrap();
    cmd_label(&scenes, &LabelConfig::default(), workers, Some(&labels)).unwrap();
    let opts = PredictOptions {
        predictor: Predictor::Oracle,
        graph: GraphConfig::default(),
        points_per_instance: 64,
        scenes: Some(scenes.clone()),
    };
    let (bundle, provenance) = cmd_predict(&labels, &opts).unwrap();
    std::fs::create_dir_all(&eval).unwrap();
    let preds = eval.join("predictions.json");
    write_predictions(&preds, &bundle, provenance).unwrap();
    let report = cmd_eval(&labels, &preds, Some(&scenes), 64).unwrap();
    occlugraph::schema::write_json(&eval.join("eval.json"), &report).unwrap();

    let mut out = BTreeMap::new();
    for sub in ["scenes", "labels", "eval"] {
        for (name, bytes) in dir_contents(&root.join(sub)) {
            out.insert(format!("{sub}/{name}"), bytes);
        }
    }
    out
}
