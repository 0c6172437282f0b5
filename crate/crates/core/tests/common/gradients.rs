//! Random instances of every objective with their analytic gradient compared
//! against central differences.

use occlugraph::geometry::stream_rng;
use occlugraph::objectives::{
    edge_exist_wbce, geom_smooth_l1, listwise_rank_loss, node_ce, noisy_or_consistency, occlusion_losses,
    potential_gated_bce, relation_ce, union_bce, ConsistencyQuery, LeafEntry, LossConfig, OcclusionBatch, QueryEntry,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub const OBJECTIVES: [&str; 9] = [
    "node_ce",
    "edge_exist_wbce",
    "relation_ce",
    "geom_smooth_l1",
    "union_bce",
    "potential_gated_bce",
    "listwise_rank",
    "noisy_or_consistency",
    "total_occlusion",
];

#[derive(Debug, Clone, Copy)]
pub struct Case {
    pub rel_err: f64,
    /// Every masked-out entry carried an exactly zero gradient.
    pub masked_zero: bool,
}

impl Case {
    pub fn passed(&self) -> bool {
        self.rel_err < TOL && self.masked_zero
    }
}

/// Relative error of the analytic gradient against central differences on
/// every coordinate in `coords`; the denominator is floored at 1e-4.
pub fn fd_error(f: &dyn Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], coords: &[usize]) -> f64 {
    let mut worst_diff: f64 = 0.0;
    let mut scale: f64 = 1e-4;
    for &i in coords {
        let mut hi = x.to_vec();
        hi[i] += H;
        let mut lo = x.to_vec();
        lo[i] -= H;
        let numeric = (f(&hi) - f(&lo)) / (2.0 * H);
        worst_diff = worst_diff.max((numeric - grad[i]).abs());
        scale = scale.max(numeric.abs()).max(grad[i].abs());
    }
    worst_diff / scale
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.05..0.95)).collect()
}

fn one_hot_rows(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * classes];
    for r in 0..rows {
        t[r * classes + rng.gen_range(0..classes)] = 1.0;
    }
    t
}

fn queries(rng: &mut ChaCha8Rng) -> Vec<std::ops::Range<usize>> {
    let count = rng.gen_range(1..5);
    let mut out = Vec::new();
    let mut start = 0;
    for _ in 0..count {
        let len = rng.gen_range(1..6);
        out.push(start..start + len);
        start += len;
    }
    out
}

fn unmasked(rel_err: f64) -> Case {
    Case {
        rel_err,
        masked_zero: true,
    }
}

pub fn objective_case(name: &str, seed: u64) -> Case {
    match name {
        "node_ce" => node_ce_case(seed),
        "edge_exist_wbce" => edge_case(seed),
        "relation_ce" => relation_case(seed),
        "geom_smooth_l1" => geometry_case(seed),
        "union_bce" => union_case(seed),
        "potential_gated_bce" => potential_case(seed),
        "listwise_rank" => rank_case(seed),
        "noisy_or_consistency" => consistency_case(seed),
        "total_occlusion" => total_case(seed),
        other => panic!("unknown objective {other}"),
    }
}

fn node_ce_case(seed: u64) -> Case {
    let mut rng = stream_rng(seed, 1);
    let rows = rng.gen_range(1..6);
    let t = one_hot_rows(&mut rng, rows, 4);
    let p = probs(&mut rng, rows * 4);
    let loss = node_ce(&t, &p, 4).unwrap();
    let f = |x: &[f64]| node_ce(&t, x, 4).unwrap().value;
    unmasked(fd_error(&f, &p, &loss.grad, &all(p.len())))
}

fn edge_case(seed: u64) -> Case {
    let mut rng = stream_rng(seed, 2);
    let n = rng.gen_range(1..12);
    let y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
    let e = probs(&mut rng, n);
    let beta = rng.gen_range(1.0..8.0);
    let loss = edge_exist_wbce(&y, &e, beta).unwrap();
    let f = |x: &[f64]| edge_exist_wbce(&y, x, beta).unwrap().value;
    unmasked(fd_error(&f, &e, &loss.grad, &all(n)))
}

fn relation_case(seed: u64) -> Case {
    let mut rng = stream_rng(seed, 3);
    let rows = rng.gen_range(1..6);
    let positive: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.6)).collect();
    let t = one_hot_rows(&mut rng, rows, 4);
    let p = probs(&mut rng, rows * 4);
    let loss = relation_ce(&positive, &t, &p, 4).unwrap();
    let f = |x: &[f64]| relation_ce(&positive, &t, x, 4).unwrap().value;
    Case {
        rel_err: fd_error(&f, &p, &loss.grad, &all(p.len())),
        masked_zero: positive
            .iter()
            .enumerate()
            .filter(|(_, on)| !**on)
            .all(|(r, _)| loss.grad[r * 4..(r + 1) * 4].iter().all(|g| *g == 0.0)),
    }
}

fn geometry_case(seed: u64) -> Case {
    let mut rng = stream_rng(seed, 4);
    let n = 3 * rng.gen_range(1..5);
    let mut v = || -> Vec<f64> { (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect() };
    let (pdc, dc, ps, s) = (v(), v(), v(), v());
    let delta = 0.5;
    let x: Vec<f64> = pdc.iter().chain(&ps).copied().collect();
    let targets: Vec<f64> = dc.iter().chain(&s).copied().collect();
    let loss = geom_smooth_l1(&pdc, &dc, &ps, &s, delta).unwrap();
    let f = |x: &[f64]| geom_smooth_l1(&x[..n], &dc, &x[n..], &s, delta).unwrap().value;
    let away_from_kink: Vec<usize> = (0..x.len())
        .filter(|&i| ((x[i] - targets[i]).abs() - delta).abs() > 1e-3)
        .collect();
    unmasked(fd_error(&f, &x, &loss.grad, &away_from_kink))
}

fn union_case(seed: u64) -> Case {
    let mut rng = stream_rng(seed, 5);
    let n = rng.gen_range(1..20);
    let o: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let u = probs(&mut rng, n);
    let loss = union_bce(&o, &u).unwrap();
    let f = |x: &[f64]| union_bce(&o, x).unwrap().value;
    unmasked(fd_error(&f, &u, &loss.grad, &all(n)))
}

fn potential_case(seed: u64) -> Case {
    let mut rng = stream_rng(seed, 6);
    let n = rng.gen_range(1..20);
    let p: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..0.02) } else { rng.gen_range(0.0..=1.0) })
        .collect();
    let selected: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    let s = probs(&mut rng, n);
    let loss = potential_gated_bce(&p, &s, 0.02, &selected).unwrap();
    let f = |x: &[f64]| potential_gated_bce(&p, x, 0.02, &selected).unwrap().value;
    Case {
        rel_err: fd_error(&f, &s, &loss.grad, &all(n)),
        masked_zero: (0..n).filter(|&i| !selected[i]).all(|i| loss.grad[i] == 0.0),
    }
}

fn rank_case(seed: u64) -> Case {
    let mut rng = stream_rng(seed, 7);
    let qs = queries(&mut rng);
    let n = qs.last().unwrap().end;
    let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    for q in &qs {
        let sum: f64 = t[q.clone()].iter().sum();
        t[q.clone()].iter_mut().for_each(|x| *x /= sum);
    }
    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    // the first query stays out of the ranking set
    let used = &qs[1..];
    let loss = listwise_rank_loss(&t, &z, used).unwrap();
    let f = |x: &[f64]| listwise_rank_loss(&t, x, used).unwrap().value;
    Case {
        rel_err: fd_error(&f, &z, &loss.grad, &all(n)),
        masked_zero: loss.grad[qs[0].clone()].iter().all(|g| *g == 0.0),
    }
}

fn consistency_case(seed: u64) -> Case {
    let mut rng = stream_rng(seed, 8);
    let qs = queries(&mut rng);
    let n = qs.last().unwrap().end;
    let s = probs(&mut rng, n);
    let gate: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    let cq: Vec<ConsistencyQuery> = qs
        .iter()
        .map(|r| ConsistencyQuery {
            range: r.clone(),
            union_target: rng.gen_range(0.0..=1.0),
        })
        .collect();
    let loss = noisy_or_consistency(&s, &gate, &cq, 0.5).unwrap();
    let f = |x: &[f64]| noisy_or_consistency(x, &gate, &cq, 0.5).unwrap().value;
    Case {
        rel_err: fd_error(&f, &s, &loss.grad, &all(n)),
        masked_zero: cq.iter().all(|q| {
            q.range
                .clone()
                .filter(|&i| !gate[i] || q.union_target < 0.5)
                .all(|i| loss.grad[i] == 0.0)
        }),
    }
}

fn total_case(seed: u64) -> Case {
    let mut rng = stream_rng(seed, 9);
    let qs = queries(&mut rng);
    let mut leaves = Vec::new();
    let mut entries = Vec::new();
    for (k, r) in qs.iter().enumerate() {
        let masses: Vec<f64> = r
            .clone()
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
            .collect();
        let total: f64 = masses.iter().sum();
        for (j, m) in masses.iter().enumerate() {
            leaves.push(LeafEntry {
                leaf: j + 1,
                potential_target: *m,
                mass: *m,
                rank_target: if total > 0.0 { m / (total + 1e-8) } else { 0.0 },
                potential_pred: rng.gen_range(0.05..0.95),
                rank_logit: rng.gen_range(-3.0..3.0),
            });
        }
        entries.push(QueryEntry {
            fruit: 0,
            direction: k,
            union_target: rng.gen_range(0.0..=1.0),
            union_pred: rng.gen_range(0.05..0.95),
            leaves: r.clone(),
        });
    }
    let batch = OcclusionBatch {
        queries: entries,
        leaves,
    };
    let cfg = LossConfig {
        selection_seed: seed,
        ..LossConfig::default()
    };
    let out = occlusion_losses(&batch, &cfg).unwrap();
    let (nq, nl) = (batch.queries.len(), batch.leaves.len());
    let x: Vec<f64> = batch
        .union_preds()
        .into_iter()
        .chain(batch.potential_preds())
        .chain(batch.rank_logits())
        .collect();
    let grad: Vec<f64> = out
        .grad_union
        .iter()
        .chain(&out.grad_potential)
        .chain(&out.grad_rank_logits)
        .copied()
        .collect();
    let f = |x: &[f64]| {
        let mut b = batch.clone();
        for (q, u) in b.queries.iter_mut().zip(&x[..nq]) {
            q.union_pred = *u;
        }
        for (j, l) in b.leaves.iter_mut().enumerate() {
            l.potential_pred = x[nq + j];
            l.rank_logit = x[nq + nl + j];
        }
        occlusion_losses(&b, &cfg).unwrap().total
    };
    unmasked(fd_error(&f, &x, &grad, &all(x.len())))
}
