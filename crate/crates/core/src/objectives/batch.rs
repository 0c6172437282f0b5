//! Flattened (fruit, direction, leaf) view of labels and predictions, the set
//! selections of the occlusion losses, and their combined evaluation.

use std::ops::Range;

use rand::seq::index;

use super::{
    listwise_rank_loss, noisy_or_consistency, potential_gated_bce, total_occlusion_loss, union_bce,
    ConsistencyQuery, Loss, LossConfig,
};
use crate::bundle::FruitPrediction;
use crate::error::{Error, Result};
use crate::geometry::stream_rng;
use crate::labeling::{OcclusionLabels, DIRECTION_LABELS};

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEntry {
    pub fruit: usize,
    pub direction: usize,
    pub union_target: f64,
    pub union_pred: f64,
    /// Slice of the leaf arrays belonging to this query.
    pub leaves: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafEntry {
    pub leaf: usize,
    pub potential_target: f64,
    pub mass: f64,
    pub rank_target: f64,
    pub potential_pred: f64,
    pub rank_logit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionBatch {
    pub queries: Vec<QueryEntry>,
    pub leaves: Vec<LeafEntry>,
}

impl OcclusionBatch {
    /// Pairs every labelled (fruit, direction, leaf) with its prediction; any
    /// label without a prediction is reported.
    pub fn new(labels: &OcclusionLabels, preds: &[FruitPrediction]) -> Result<Self> {
        let mut queries = Vec::new();
        let mut leaves = Vec::new();
        let mut missing = Vec::new();
        for f in &labels.fruits {
            let fp = preds.iter().find(|p| p.fruit == f.fruit);
            for d in &f.directions {
                let key = format!("{}/{}", f.fruit, DIRECTION_LABELS[d.direction]);
                let Some(dp) = fp.and_then(|p| p.directions.iter().find(|x| x.direction == d.direction)) else {
                    missing.push(key);
                    continue;
                };
                let start = leaves.len();
                for l in &d.leaves {
                    match dp.leaves.iter().find(|x| x.leaf == l.leaf) {
                        Some(lp) => leaves.push(LeafEntry {
                            leaf: l.leaf,
                            potential_target: l.potential,
                            mass: l.mass,
                            rank_target: l.rank_target,
                            potential_pred: lp.potential,
                            rank_logit: lp.rank_logit,
                        }),
                        None => missing.push(format!("{key}/{}", l.leaf)),
                    }
                }
                queries.push(QueryEntry {
                    fruit: f.fruit,
                    direction: d.direction,
                    union_target: d.union,
                    union_pred: dp.union,
                    leaves: start..leaves.len(),
                });
            }
        }
        if !missing.is_empty() {
            return Err(Error::KeyMismatch(missing));
        }
        Ok(Self { queries, leaves })
    }

    pub fn union_targets(&self) -> Vec<f64> {
        self.queries.iter().map(|q| q.union_target).collect()
    }

    pub fn union_preds(&self) -> Vec<f64> {
        self.queries.iter().map(|q| q.union_pred).collect()
    }

    pub fn potential_targets(&self) -> Vec<f64> {
        self.leaves.iter().map(|l| l.potential_target).collect()
    }

    pub fn potential_preds(&self) -> Vec<f64> {
        self.leaves.iter().map(|l| l.potential_pred).collect()
    }

    pub fn rank_targets(&self) -> Vec<f64> {
        self.leaves.iter().map(|l| l.rank_target).collect()
    }

    pub fn rank_logits(&self) -> Vec<f64> {
        self.leaves.iter().map(|l| l.rank_logit).collect()
    }

    /// `S_rank`: queries with `o ≥ τ_union` and positive total graded mass.
    pub fn rank_set(&self, tau_union: f64) -> Vec<Range<usize>> {
        self.queries
            .iter()
            .filter(|q| {
                q.union_target >= tau_union && self.leaves[q.leaves.clone()].iter().map(|l| l.mass).sum::<f64>() > 0.0
            })
            .map(|q| q.leaves.clone())
            .collect()
    }

    /// Gate `p ≥ ε_pot` on the ground-truth potentials.
    pub fn gate(&self, eps_pot: f64) -> Vec<bool> {
        self.leaves.iter().map(|l| l.potential_target >= eps_pot).collect()
    }

    pub fn consistency_queries(&self) -> Vec<ConsistencyQuery> {
        self.queries
            .iter()
            .map(|q| ConsistencyQuery {
                range: q.leaves.clone(),
                union_target: q.union_target,
            })
            .collect()
    }

    /// `S_pot`: every leaf on directions with `o ≥ ε_pot`, plus as many leaves
    /// drawn without replacement from the remaining directions.
    pub fn potential_set(&self, eps_pot: f64, seed: u64) -> Vec<bool> {
        let mut selected = vec![false; self.leaves.len()];
        let mut rest = Vec::new();
        for q in &self.queries {
            if q.union_target >= eps_pot {
                selected[q.leaves.clone()].fill(true);
            } else {
                rest.extend(q.leaves.clone());
            }
        }
        let want = selected.iter().filter(|s| **s).count().min(rest.len());
        let mut rng = stream_rng(seed, 0);
        for i in index::sample(&mut rng, rest.len(), want) {
            selected[rest[i]] = true;
        }
        selected
    }
}

/// Rank targets of one query in `S_rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankQuery {
    pub fruit: usize,
    pub direction: usize,
    pub leaves: Vec<usize>,
    pub targets: Vec<f64>,
}

/// Queries with `o ≥ τ_union` and positive total mass, with their rank targets.
pub fn rank_targets_and_set(labels: &OcclusionLabels, tau_union: f64) -> Vec<RankQuery> {
    labels
        .queries()
        .filter(|(_, d)| d.union >= tau_union && d.total_mass() > 0.0)
        .map(|(fruit, d)| RankQuery {
            fruit,
            direction: d.direction,
            leaves: d.leaves.iter().map(|l| l.leaf).collect(),
            targets: d.leaves.iter().map(|l| l.rank_target).collect(),
        })
        .collect()
}

/// `S_pot` over labels alone (predictions do not affect the selection).
pub fn select_potential_set(labels: &OcclusionLabels, eps_pot: f64, seed: u64) -> Vec<bool> {
    let mut queries = Vec::new();
    let mut n = 0;
    for (fruit, d) in labels.queries() {
        queries.push(QueryEntry {
            fruit,
            direction: d.direction,
            union_target: d.union,
            union_pred: 0.0,
            leaves: n..n + d.leaves.len(),
        });
        n += d.leaves.len();
    }
    let leaves = vec![
        LeafEntry {
            leaf: 0,
            potential_target: 0.0,
            mass: 0.0,
            rank_target: 0.0,
            potential_pred: 0.0,
            rank_logit: 0.0,
        };
        n
    ];
    OcclusionBatch { queries, leaves }.potential_set(eps_pot, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionLosses {
    pub union: Loss,
    pub potential: Loss,
    pub rank: Loss,
    pub consistency: Loss,
    pub total: f64,
    /// Gradient of the total in `û`, `ŝ` and the rank logits.
    pub grad_union: Vec<f64>,
    pub grad_potential: Vec<f64>,
    pub grad_rank_logits: Vec<f64>,
}

pub fn occlusion_losses(batch: &OcclusionBatch, cfg: &LossConfig) -> Result<OcclusionLosses> {
    cfg.validate()?;
    let union = union_bce(&batch.union_targets(), &batch.union_preds())?;
    let preds = batch.potential_preds();
    let selected = batch.potential_set(cfg.eps_pot, cfg.selection_seed);
    let potential = potential_gated_bce(&batch.potential_targets(), &preds, cfg.eps_pot, &selected)?;
    let rank = listwise_rank_loss(&batch.rank_targets(), &batch.rank_logits(), &batch.rank_set(cfg.tau_union))?;
    let consistency =
        noisy_or_consistency(&preds, &batch.gate(cfg.eps_pot), &batch.consistency_queries(), cfg.tau_union)?;
    let lambdas = [cfg.lambda_union, cfg.lambda_pot, cfg.lambda_rank, cfg.lambda_cons];
    let total = total_occlusion_loss([union.value, potential.value, rank.value, consistency.value], lambdas);
    let grad_union = union.grad.iter().map(|g| cfg.lambda_union * g).collect();
    let grad_potential = potential
        .grad
        .iter()
        .zip(&consistency.grad)
        .map(|(p, c)| cfg.lambda_pot * p + cfg.lambda_cons * c)
        .collect();
    let grad_rank_logits = rank.grad.iter().map(|g| cfg.lambda_rank * g).collect();
    Ok(OcclusionLosses {
        union,
        potential,
        rank,
        consistency,
        total,
        grad_union,
        grad_potential,
        grad_rank_logits,
    })
}
