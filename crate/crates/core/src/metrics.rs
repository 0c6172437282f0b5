//! Ranking, calibration and detection metrics over labels and predictions.
//!
//! Ranking inputs list candidates in ascending id order, so "lower index" and
//! "lower id" coincide in tie rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Candidate indices by descending score, ties by lower index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn dcg(relevance: &[f64], ranking: &[usize], k: usize) -> f64 {
    ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, &j)| relevance[j] / ((r + 2) as f64).log2())
        .sum()
}

/// Linear-gain NDCG over the first `k` ranked candidates; `None` when every
/// relevance is zero.
pub fn ndcg_at_k(relevance: &[f64], ranking: &[usize], k: usize) -> Option<f64> {
    if !relevance.iter().any(|r| *r > 0.0) {
        return None;
    }
    let ideal = rank_order(relevance);
    Some(dcg(relevance, ranking, k) / dcg(relevance, &ideal, k))
}

/// Argmax of relevance with ties to the lower index; `None` without a positive.
pub fn dominant(relevance: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, r) in relevance.iter().enumerate() {
        if *r > 0.0 && best.map_or(true, |b| *r > relevance[b]) {
            best = Some(j);
        }
    }
    best
}

/// Whether the dominant candidate sits in the first `k` ranks; `None` when the
/// query is skipped.
pub fn recall_at_k(relevance: &[f64], ranking: &[usize], k: usize) -> Option<bool> {
    let d = dominant(relevance)?;
    Some(ranking.iter().take(k).any(|&j| j == d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinnedMae {
    /// Target `< 0.25`.
    pub low: Option<f64>,
    pub mid: Option<f64>,
    /// Target `> 0.5`.
    pub high: Option<f64>,
    pub counts: [usize; 3],
}

pub fn union_bin(o: f64) -> usize {
    if o < 0.25 {
        0
    } else if o > 0.5 {
        2
    } else {
        1
    }
}

pub fn binned_union_mae(targets: &[f64], preds: &[f64]) -> Result<BinnedMae> {
    same_len(targets.len(), preds.len(), "union predictions")?;
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (o, u) in targets.iter().zip(preds) {
        let b = union_bin(*o);
        sums[b] += (u - o).abs();
        counts[b] += 1;
    }
    let mean = |b: usize| (counts[b] > 0).then(|| sums[b] / counts[b] as f64);
    Ok(BinnedMae {
        low: mean(0),
        mid: mean(1),
        high: mean(2),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Sweep {
    pub f1: f64,
    /// Threshold reaching `f1` (predict positive when `score ≥ threshold`).
    pub threshold: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Maximum F1 over thresholds in the unique scores plus `±∞`. Among equal F1
/// values the highest threshold is reported. No positives gives 0.
pub fn best_f1(labels: &[bool], scores: &[f64]) -> Result<F1Sweep> {
    same_len(labels.len(), scores.len(), "F1 scores")?;
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Probability {
            context: "F1 sweep score",
            value: *bad,
        });
    }
    let positives = labels.iter().filter(|l| **l).count();
    let mut best = F1Sweep {
        f1: 0.0,
        threshold: f64::INFINITY,
    };
    if positives == 0 {
        return Ok(best);
    }
    let order = rank_order(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let v = f1(tp, fp, positives - tp);
        if v > best.f1 {
            best = F1Sweep { f1: v, threshold: t };
        }
    }
    Ok(best)
}

pub fn occl_dir_f1(targets: &[f64], preds: &[f64], tau: f64) -> Result<F1Sweep> {
    let labels: Vec<bool> = targets.iter().map(|o| *o >= tau).collect();
    best_f1(&labels, preds)
}

pub fn edge_exist_f1(labels: &[bool], scores: &[f64]) -> Result<F1Sweep> {
    best_f1(labels, scores)
}

/// Mean absolute error over every component of the centroid offsets and of the
/// extents (row-major `[node][3]`).
pub fn geometry_mae(pred_dc: &[f64], dc: &[f64], pred_s: &[f64], s: &[f64]) -> Result<(f64, f64)> {
    same_len(dc.len(), pred_dc.len(), "centroid offsets")?;
    same_len(s.len(), pred_s.len(), "extents")?;
    let mae = |a: &[f64], b: &[f64]| {
        if a.is_empty() {
            0.0
        } else {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
        }
    };
    Ok((mae(pred_dc, dc), mae(pred_s, s)))
}

fn same_len(expected: usize, got: usize, context: &str) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            expected,
            got,
            context: context.to_string(),
        });
    }
    Ok(())
}

/// One (fruit, direction) ranking query: ground-truth graded masses and
/// predicted scores over the same candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingQuery {
    pub relevance: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricInputs {
    pub ranking: Vec<RankingQuery>,
    pub union_targets: Vec<f64>,
    pub union_preds: Vec<f64>,
    pub edge_labels: Vec<bool>,
    pub edge_scores: Vec<f64>,
    pub pred_delta_c: Vec<f64>,
    pub delta_c: Vec<f64>,
    pub pred_extents: Vec<f64>,
    pub extents: Vec<f64>,
    /// Per-fruit Mass@K values.
    pub mass_at_k: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ndcg_at_3: Option<f64>,
    pub recall_at_1: Option<f64>,
    pub recall_at_3: Option<f64>,
    pub ranking_queries: usize,
    pub skipped_queries: usize,
    pub mae_u_low: Option<f64>,
    pub mae_u_mid: Option<f64>,
    pub mae_u_high: Option<f64>,
    /// Queries in the low, mid and high union bins.
    pub bin_counts: [usize; 3],
    pub occl_dir_f1: f64,
    pub occl_dir_threshold: f64,
    pub tau: f64,
    pub edge_exist_f1: f64,
    pub edge_exist_threshold: f64,
    pub edges: usize,
    pub mae_centroid: f64,
    pub mae_extent: f64,
    pub nodes: usize,
    pub mass_at_k: Option<f64>,
    pub fruits: usize,
}

pub fn evaluate(inputs: &MetricInputs, tau: f64) -> Result<MetricReport> {
    let mut ndcg = Vec::new();
    let mut r1 = Vec::new();
    let mut r3 = Vec::new();
    for q in &inputs.ranking {
        same_len(q.relevance.len(), q.scores.len(), "ranking scores")?;
        let ranking = rank_order(&q.scores);
        if let Some(v) = ndcg_at_k(&q.relevance, &ranking, 3) {
            ndcg.push(v);
            r1.push(recall_at_k(&q.relevance, &ranking, 1).unwrap_or(false));
            r3.push(recall_at_k(&q.relevance, &ranking, 3).unwrap_or(false));
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let rate = |v: &[bool]| (!v.is_empty()).then(|| v.iter().filter(|x| **x).count() as f64 / v.len() as f64);
    let bins = binned_union_mae(&inputs.union_targets, &inputs.union_preds)?;
    let occl = occl_dir_f1(&inputs.union_targets, &inputs.union_preds, tau)?;
    let edge = edge_exist_f1(&inputs.edge_labels, &inputs.edge_scores)?;
    let (mae_centroid, mae_extent) =
        geometry_mae(&inputs.pred_delta_c, &inputs.delta_c, &inputs.pred_extents, &inputs.extents)?;
    Ok(MetricReport {
        ndcg_at_3: mean(&ndcg),
        recall_at_1: rate(&r1),
        recall_at_3: rate(&r3),
        ranking_queries: ndcg.len(),
        skipped_queries: inputs.ranking.len() - ndcg.len(),
        mae_u_low: bins.low,
        mae_u_mid: bins.mid,
        mae_u_high: bins.high,
        bin_counts: bins.counts,
        occl_dir_f1: occl.f1,
        occl_dir_threshold: occl.threshold,
        tau,
        edge_exist_f1: edge.f1,
        edge_exist_threshold: edge.threshold,
        edges: inputs.edge_labels.len(),
        mae_centroid,
        mae_extent,
        nodes: inputs.delta_c.len() / 3,
        mass_at_k: mean(&inputs.mass_at_k),
        fruits: inputs.mass_at_k.len(),
    })
}
