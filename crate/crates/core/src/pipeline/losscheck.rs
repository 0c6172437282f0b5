use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::load_evaluation_set;
use crate::bundle::{class_target, geometry_targets, ScenePrediction, NODE_CLASSES, RELATION_CLASSES};
use crate::error::{Error, Result};
use crate::labeling::OcclusionLabels;
use crate::objectives::gradcheck::{check, interior_probability, GradCheck, FD_STEP};
use crate::objectives::{
    edge_exist_wbce, geom_smooth_l1, listwise_rank_loss, node_ce, noisy_or_consistency, occlusion_losses,
    potential_gated_bce, relation_ce, total_occlusion_loss, union_bce, Loss, LossConfig, OcclusionBatch,
};
use crate::schema::read_predictions;
use crate::scene::{Relation, Scene};

pub const LOSS_SCHEMA: &str = "occlugraph.losscheck.v1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub node_ce: f64,
    pub edge_exist_wbce: f64,
    pub relation_ce: f64,
    pub geom_smooth_l1: f64,
    pub union_bce: f64,
    pub potential_gated_bce: f64,
    pub listwise_rank: f64,
    pub noisy_or_consistency: f64,
    pub total_occlusion: f64,
}

impl LossValues {
    fn add_scaled(&mut self, o: &LossValues, w: f64) {
        self.node_ce += w * o.node_ce;
        self.edge_exist_wbce += w * o.edge_exist_wbce;
        self.relation_ce += w * o.relation_ce;
        self.geom_smooth_l1 += w * o.geom_smooth_l1;
        self.union_bce += w * o.union_bce;
        self.potential_gated_bce += w * o.potential_gated_bce;
        self.listwise_rank += w * o.listwise_rank;
        self.noisy_or_consistency += w * o.noisy_or_consistency;
        self.total_occlusion += w * o.total_occlusion;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub schema: String,
    pub loss_config: LossConfig,
    pub scenes: usize,
    /// Mean over scenes of the per-scene loss values.
    pub losses: LossValues,
    /// One row per objective, merged over scenes.
    pub gradient_checks: Vec<GradCheck>,
    pub failing: Vec<String>,
    pub passed: bool,
}

fn value(r: Result<Loss>) -> f64 {
    r.map_or(f64::NAN, |l| l.value)
}

fn merge(into: &mut Vec<GradCheck>, row: GradCheck) {
    match into.iter_mut().find(|g| g.op == row.op) {
        Some(g) => {
            g.checked += row.checked;
            g.skipped += row.skipped;
            g.max_rel_err = g.max_rel_err.max(row.max_rel_err);
            g.passed &= row.passed;
        }
        None => into.push(row),
    }
}

/// Loss values and gradient checks of every objective on one scene.
pub fn scene_losses(
    scene: &Scene,
    labels: &OcclusionLabels,
    pred: &ScenePrediction,
    cfg: &LossConfig,
    points_per_instance: usize,
) -> Result<(LossValues, Vec<GradCheck>)> {
    let mut checks = Vec::new();
    let interior = |_: usize, x: f64| interior_probability(x);

    // Nodes.
    let mut class_t = Vec::new();
    let mut class_p = Vec::new();
    let mut dc_p = Vec::new();
    let mut dc_t = Vec::new();
    let mut s_p = Vec::new();
    let mut s_t = Vec::new();
    let targets = geometry_targets(scene, points_per_instance)?;
    let mut missing = Vec::new();
    for (inst, t) in scene.instances.iter().zip(&targets) {
        let Some(n) = pred.nodes.iter().find(|n| n.id == inst.id) else {
            missing.push(format!("node/{}", inst.id));
            continue;
        };
        class_t.extend(class_target(inst.kind));
        class_p.extend(n.class_probs);
        dc_p.extend(n.delta_c);
        dc_t.extend(t.delta_c.iter());
        s_p.extend(n.extents);
        s_t.extend(t.extents.iter());
    }
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(missing));
    }
    let node = node_ce(&class_t, &class_p, NODE_CLASSES)?;
    checks.push(check("node_ce", |x| value(node_ce(&class_t, x, NODE_CLASSES)), &class_p, &node.grad, interior));

    let geom = geom_smooth_l1(&dc_p, &dc_t, &s_p, &s_t, cfg.smooth_l1_delta)?;
    let geom_x: Vec<f64> = dc_p.iter().chain(&s_p).copied().collect();
    let geom_t: Vec<f64> = dc_t.iter().chain(&s_t).copied().collect();
    let n3 = dc_p.len();
    checks.push(check(
        "geom_smooth_l1",
        |x| value(geom_smooth_l1(&x[..n3], &dc_t, &x[n3..], &s_t, cfg.smooth_l1_delta)),
        &geom_x,
        &geom.grad,
        |i, x| ((x - geom_t[i]).abs() - cfg.smooth_l1_delta).abs() > 2.0 * FD_STEP,
    ));

    // Edges.
    let mut exist_t = Vec::new();
    let mut exist_p = Vec::new();
    let mut positive = Vec::new();
    let mut rel_t = Vec::new();
    let mut rel_p = Vec::new();
    for e in &pred.edges {
        let (a, b) = (scene.instance(e.src)?, scene.instance(e.dst)?);
        let attached = scene.is_attachment(e.src, e.dst);
        exist_t.push(if attached { 1.0 } else { 0.0 });
        exist_p.push(e.exist);
        let rel = Relation::between(a.kind, b.kind).filter(|_| attached);
        positive.push(rel.is_some());
        rel_t.extend((0..RELATION_CLASSES).map(|c| if rel.map(|r| r.index()) == Some(c) { 1.0 } else { 0.0 }));
        rel_p.extend(e.relation);
    }
    let exist = edge_exist_wbce(&exist_t, &exist_p, cfg.beta)?;
    checks.push(check(
        "edge_exist_wbce",
        |x| value(edge_exist_wbce(&exist_t, x, cfg.beta)),
        &exist_p,
        &exist.grad,
        interior,
    ));
    let relation = relation_ce(&positive, &rel_t, &rel_p, RELATION_CLASSES)?;
    checks.push(check(
        "relation_ce",
        |x| value(relation_ce(&positive, &rel_t, x, RELATION_CLASSES)),
        &rel_p,
        &relation.grad,
        interior,
    ));

    // Occlusion.
    let batch = OcclusionBatch::new(labels, &pred.fruits)?;
    let occ = occlusion_losses(&batch, cfg)?;
    let (u_t, u_p) = (batch.union_targets(), batch.union_preds());
    let (p_t, p_p) = (batch.potential_targets(), batch.potential_preds());
    let (r_t, r_z) = (batch.rank_targets(), batch.rank_logits());
    let selected = batch.potential_set(cfg.eps_pot, cfg.selection_seed);
    let rank_set = batch.rank_set(cfg.tau_union);
    let gate = batch.gate(cfg.eps_pot);
    let cq = batch.consistency_queries();

    checks.push(check("union_bce", |x| value(union_bce(&u_t, x)), &u_p, &occ.union.grad, interior));
    checks.push(check(
        "potential_gated_bce",
        |x| value(potential_gated_bce(&p_t, x, cfg.eps_pot, &selected)),
        &p_p,
        &occ.potential.grad,
        interior,
    ));
    checks.push(check(
        "listwise_rank",
        |x| value(listwise_rank_loss(&r_t, x, &rank_set)),
        &r_z,
        &occ.rank.grad,
        |_, _| true,
    ));
    checks.push(check(
        "noisy_or_consistency",
        |x| value(noisy_or_consistency(x, &gate, &cq, cfg.tau_union)),
        &p_p,
        &occ.consistency.grad,
        |_, x| x > FD_STEP && x < 1.0 - FD_STEP,
    ));

    let (nu, np) = (u_p.len(), p_p.len());
    let joint: Vec<f64> = u_p.iter().chain(&p_p).chain(&r_z).copied().collect();
    let joint_grad: Vec<f64> = occ
        .grad_union
        .iter()
        .chain(&occ.grad_potential)
        .chain(&occ.grad_rank_logits)
        .copied()
        .collect();
    let lambdas = [cfg.lambda_union, cfg.lambda_pot, cfg.lambda_rank, cfg.lambda_cons];
    let total = |x: &[f64]| {
        let (u, rest) = x.split_at(nu);
        let (p, z) = rest.split_at(np);
        let parts = [
            value(union_bce(&u_t, u)),
            value(potential_gated_bce(&p_t, p, cfg.eps_pot, &selected)),
            value(listwise_rank_loss(&r_t, z, &rank_set)),
            value(noisy_or_consistency(p, &gate, &cq, cfg.tau_union)),
        ];
        total_occlusion_loss(parts, lambdas)
    };
    checks.push(check("total_occlusion", total, &joint, &joint_grad, |i, x| {
        i >= nu + np || interior_probability(x)
    }));

    let values = LossValues {
        node_ce: node.value,
        edge_exist_wbce: exist.value,
        relation_ce: relation.value,
        geom_smooth_l1: geom.value,
        union_bce: occ.union.value,
        potential_gated_bce: occ.potential.value,
        listwise_rank: occ.rank.value,
        noisy_or_consistency: occ.consistency.value,
        total_occlusion: occ.total,
    };
    Ok((values, checks))
}

pub fn cmd_losscheck(
    labels_dir: &Path,
    preds: &Path,
    scenes_dir: Option<&Path>,
    cfg: &LossConfig,
    points_per_instance: usize,
) -> Result<LossReport> {
    cfg.validate()?;
    let bundle = read_predictions(preds)?;
    let set = load_evaluation_set(labels_dir, scenes_dir, &bundle)?;
    let mut losses = LossValues::default();
    let mut checks = Vec::new();
    for (scene, labels, pred) in &set {
        let (v, c) = scene_losses(scene, labels, pred, cfg, points_per_instance)
            .map_err(|e| e.in_file(format!("{}.json", pred.scene)))?;
        losses.add_scaled(&v, 1.0 / set.len() as f64);
        for row in c {
            merge(&mut checks, row);
        }
    }
    let failing: Vec<String> = checks.iter().filter(|g| !g.passed).map(|g| g.op.clone()).collect();
    Ok(LossReport {
        schema: LOSS_SCHEMA.into(),
        loss_config: cfg.clone(),
        scenes: set.len(),
        losses,
        gradient_checks: checks,
        passed: failing.is_empty(),
        failing,
    })
}
