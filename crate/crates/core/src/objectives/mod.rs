//! Training objectives as plain functions returning a value and its analytic
//! gradient with respect to the prediction arguments.
//!
//! Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs; the
//! gradient is zero where the clamp is active. Averages over empty selections
//! are defined as 0 with zero gradient.

mod batch;
pub mod gradcheck;

pub use batch::{
    occlusion_losses, rank_targets_and_set, select_potential_set, LeafEntry, OcclusionBatch,
    OcclusionLosses, QueryEntry, RankQuery,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

/// Value and gradient of a loss whose prediction argument is a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl Loss {
    fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight on positive edges in the existence loss.
    pub beta: f64,
    pub lambda_union: f64,
    pub lambda_pot: f64,
    pub lambda_rank: f64,
    pub lambda_cons: f64,
    pub eps_pot: f64,
    pub tau_union: f64,
    pub smooth_l1_delta: f64,
    /// Seed for the negative half of the potential selection.
    pub selection_seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 4.0,
            lambda_union: 1.0,
            lambda_pot: 1.0,
            lambda_rank: 1.0,
            lambda_cons: 1.0,
            eps_pot: 0.02,
            tau_union: 0.5,
            smooth_l1_delta: 1.0,
            selection_seed: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.beta >= 1.0) {
            return bad("beta must be at least 1");
        }
        for l in [self.lambda_union, self.lambda_pot, self.lambda_rank, self.lambda_cons] {
            if !(l >= 0.0) {
                return bad("loss weights must be non-negative");
            }
        }
        if !(0.0..1.0).contains(&self.eps_pot) {
            return bad("eps_pot must lie in [0, 1)");
        }
        if !(self.tau_union > 0.0 && self.tau_union < 1.0) {
            return bad("tau_union must lie in (0, 1)");
        }
        if !(self.smooth_l1_delta > 0.0) {
            return bad("smooth_l1_delta must be positive");
        }
        Ok(())
    }
}

/// Clamped probability and whether the input lay inside the clamp range.
fn clamp_prob(p: f64, context: &'static str) -> Result<(f64, bool)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Probability { context, value: p });
    }
    let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok((c, c == p))
}

fn check_len(expected: usize, got: usize, context: &str) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            expected,
            got,
            context: context.to_string(),
        });
    }
    Ok(())
}

/// Binary cross-entropy of one element, `-(w1 y log p + w0 (1-y) log(1-p))`,
/// and its derivative in `p`.
fn bce_term(y: f64, p: f64, w1: f64, w0: f64, context: &'static str) -> Result<(f64, f64)> {
    let (pc, inside) = clamp_prob(p, context)?;
    let value = -(w1 * y * pc.ln() + w0 * (1.0 - y) * (1.0 - pc).ln());
    let grad = if inside {
        -w1 * y / pc + w0 * (1.0 - y) / (1.0 - pc)
    } else {
        0.0
    };
    Ok((value, grad))
}

/// `-(1/|V|) Σ_i Σ_c y_ic log p_ic` over row-major `[node][class]` inputs.
pub fn node_ce(targets: &[f64], probs: &[f64], classes: usize) -> Result<Loss> {
    check_len(targets.len(), probs.len(), "node class probabilities")?;
    if classes == 0 || probs.len() % classes != 0 {
        return Err(Error::Dimension {
            expected: classes,
            got: probs.len(),
            context: "class count must divide the probability vector".into(),
        });
    }
    let nodes = probs.len() / classes;
    if nodes == 0 {
        return Ok(Loss::zero(0));
    }
    cross_entropy_rows(targets, probs, &vec![true; nodes], classes, "node_ce")
}

fn cross_entropy_rows(
    targets: &[f64],
    probs: &[f64],
    rows: &[bool],
    classes: usize,
    context: &'static str,
) -> Result<Loss> {
    let count = rows.iter().filter(|r| **r).count();
    let mut out = Loss::zero(probs.len());
    if count == 0 {
        return Ok(out);
    }
    let scale = 1.0 / count as f64;
    for (r, _) in rows.iter().enumerate().filter(|(_, on)| **on) {
        for c in r * classes..(r + 1) * classes {
            let (pc, inside) = clamp_prob(probs[c], context)?;
            out.value -= scale * targets[c] * pc.ln();
            if inside {
                out.grad[c] = -scale * targets[c] / pc;
            }
        }
    }
    Ok(out)
}

/// `-(1/|E|) Σ (β y log ê + (1-y) log(1-ê))`.
pub fn edge_exist_wbce(labels: &[f64], scores: &[f64], beta: f64) -> Result<Loss> {
    check_len(labels.len(), scores.len(), "edge scores")?;
    weighted_bce(labels, scores, &vec![true; scores.len()], beta, "edge_exist_wbce")
}

fn weighted_bce(targets: &[f64], preds: &[f64], selected: &[bool], beta: f64, context: &'static str) -> Result<Loss> {
    let count = selected.iter().filter(|s| **s).count();
    let mut out = Loss::zero(preds.len());
    if count == 0 {
        return Ok(out);
    }
    let scale = 1.0 / count as f64;
    for i in (0..preds.len()).filter(|&i| selected[i]) {
        let (v, g) = bce_term(targets[i], preds[i], beta, 1.0, context)?;
        out.value += scale * v;
        out.grad[i] = scale * g;
    }
    Ok(out)
}

/// Mean cross-entropy over the rows flagged in `positive`; other rows carry
/// neither value nor gradient.
pub fn relation_ce(positive: &[bool], targets: &[f64], probs: &[f64], classes: usize) -> Result<Loss> {
    check_len(targets.len(), probs.len(), "relation probabilities")?;
    check_len(positive.len() * classes, probs.len(), "relation rows")?;
    cross_entropy_rows(targets, probs, positive, classes, "relation_ce")
}

fn smooth_l1(x: f64, delta: f64) -> (f64, f64) {
    if x.abs() < delta {
        (0.5 * x * x / delta, x / delta)
    } else {
        (x.abs() - 0.5 * delta, x.signum())
    }
}

/// Mean over nodes of the summed element-wise SmoothL1 of centroid-offset and
/// extent residuals. Inputs are row-major `[node][3]`; the gradient vector is
/// the centroid-offset gradient followed by the extent gradient.
pub fn geom_smooth_l1(pred_dc: &[f64], dc: &[f64], pred_s: &[f64], s: &[f64], delta: f64) -> Result<Loss> {
    check_len(dc.len(), pred_dc.len(), "centroid offsets")?;
    check_len(s.len(), pred_s.len(), "extents")?;
    check_len(pred_dc.len(), pred_s.len(), "geometry rows")?;
    let nodes = pred_dc.len() / 3;
    let mut out = Loss::zero(pred_dc.len() * 2);
    if nodes == 0 {
        return Ok(out);
    }
    let scale = 1.0 / nodes as f64;
    for (offset, (p, t)) in [(0, (pred_dc, dc)), (pred_dc.len(), (pred_s, s))] {
        for i in 0..p.len() {
            let (v, g) = smooth_l1(p[i] - t[i], delta);
            out.value += scale * v;
            out.grad[offset + i] = scale * g;
        }
    }
    Ok(out)
}

/// `-(1/N) Σ (o log û + (1-o) log(1-û))` over all (fruit, direction) pairs.
pub fn union_bce(targets: &[f64], preds: &[f64]) -> Result<Loss> {
    check_len(targets.len(), preds.len(), "union predictions")?;
    weighted_bce(targets, preds, &vec![true; preds.len()], 1.0, "union_bce")
}

/// BCE against gated targets `p·1[p ≥ ε_pot]`, averaged over `selected` only.
pub fn potential_gated_bce(targets: &[f64], preds: &[f64], eps_pot: f64, selected: &[bool]) -> Result<Loss> {
    check_len(targets.len(), preds.len(), "potential predictions")?;
    check_len(preds.len(), selected.len(), "potential selection")?;
    let gated: Vec<f64> = targets
        .iter()
        .map(|&p| if p >= eps_pot { p } else { 0.0 })
        .collect();
    weighted_bce(&gated, preds, selected, 1.0, "potential_gated_bce")
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

/// `-(1/|S|) Σ_q Σ_j t_qj log softmax(z_q)_j` over the query slices in `queries`
/// (ranges into the flat `targets` / `logits`). Gradient per query is
/// `(Σ_j t_qj) softmax(z_q) - t_q`, scaled by `1/|S|`.
pub fn listwise_rank_loss(targets: &[f64], logits: &[f64], queries: &[std::ops::Range<usize>]) -> Result<Loss> {
    check_len(targets.len(), logits.len(), "rank logits")?;
    let mut out = Loss::zero(logits.len());
    if queries.is_empty() {
        return Ok(out);
    }
    let scale = 1.0 / queries.len() as f64;
    for q in queries {
        if q.end > logits.len() || q.start > q.end {
            return Err(Error::Dimension {
                expected: logits.len(),
                got: q.end,
                context: "rank query range".into(),
            });
        }
        let (t, z) = (&targets[q.clone()], &logits[q.clone()]);
        let ls = log_softmax(z);
        let mass: f64 = t.iter().sum();
        for (j, idx) in q.clone().enumerate() {
            out.value -= scale * t[j] * ls[j];
            out.grad[idx] = scale * (mass * ls[j].exp() - t[j]);
        }
    }
    Ok(out)
}

/// `1 - Π_j (1 - s_j)` over gated potentials.
pub fn noisy_or(gated: &[f64]) -> f64 {
    1.0 - gated.iter().map(|s| 1.0 - s).product::<f64>()
}

/// One consistency query: predicted potentials with their gates and the
/// union target.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyQuery {
    pub range: std::ops::Range<usize>,
    pub union_target: f64,
}

/// Mean squared error between the noisy-OR of gated potentials and the union
/// target, over queries with `o ≥ τ_union` and at least one open gate.
pub fn noisy_or_consistency(
    potentials: &[f64],
    gate: &[bool],
    queries: &[ConsistencyQuery],
    tau_union: f64,
) -> Result<Loss> {
    check_len(potentials.len(), gate.len(), "consistency gate")?;
    let selected: Vec<&ConsistencyQuery> = queries
        .iter()
        .filter(|q| q.union_target >= tau_union && gate[q.range.clone()].iter().any(|g| *g))
        .collect();
    let mut out = Loss::zero(potentials.len());
    if selected.is_empty() {
        return Ok(out);
    }
    let scale = 1.0 / selected.len() as f64;
    for q in selected {
        let idx: Vec<usize> = q.range.clone().filter(|&i| gate[i]).collect();
        let mut s = Vec::with_capacity(idx.len());
        for &i in &idx {
            s.push(clamp_unit(potentials[i])?);
        }
        let u = noisy_or(&s);
        let r = u - q.union_target;
        out.value += scale * r * r;
        for (a, &i) in idx.iter().enumerate() {
            let others: f64 = s
                .iter()
                .enumerate()
                .filter(|(b, _)| *b != a)
                .map(|(_, x)| 1.0 - x)
                .product();
            out.grad[i] = scale * 2.0 * r * others;
        }
    }
    Ok(out)
}

fn clamp_unit(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Probability {
            context: "noisy_or_consistency",
            value: p,
        });
    }
    Ok(p)
}

/// `λ_union L_union + λ_pot L_pot + λ_rank L_rank + λ_cons L_cons`.
pub fn total_occlusion_loss(components: [f64; 4], lambdas: [f64; 4]) -> f64 {
    components.iter().zip(lambdas).map(|(l, w)| l * w).sum()
}
