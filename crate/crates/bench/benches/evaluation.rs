use criterion::{criterion_group, criterion_main, Criterion};

use occlugraph::metrics::evaluate;
use occlugraph::objectives::{listwise_rank_loss, noisy_or_consistency, ConsistencyQuery};
use occlugraph::scorer::{ScorerConfig, ScorerWeights};
use occlugraph_bench::fixture_metric_inputs;

fn metrics(c: &mut Criterion) {
    let inputs = fixture_metric_inputs(2000, 12, 3);
    c.bench_function("evaluate_2000_queries", |b| b.iter(|| evaluate(&inputs, 0.5).unwrap()));
}

fn objectives(c: &mut Criterion) {
    let inputs = fixture_metric_inputs(500, 12, 4);
    let targets: Vec<f64> = inputs.ranking.iter().flat_map(|q| q.relevance.clone()).collect();
    let logits: Vec<f64> = inputs.ranking.iter().flat_map(|q| q.scores.clone()).collect();
    let ranges: Vec<_> = (0..500).map(|q| q * 12..(q + 1) * 12).collect();
    c.bench_function("listwise_rank_loss", |b| b.iter(|| listwise_rank_loss(&targets, &logits, &ranges).unwrap()));
    let gate = vec![true; logits.len()];
    let queries: Vec<ConsistencyQuery> = ranges
        .iter()
        .map(|r| ConsistencyQuery {
            range: r.clone(),
            union_target: 0.7,
        })
        .collect();
    let probs: Vec<f64> = targets.iter().map(|t| t * 0.5).collect();
    c.bench_function("noisy_or_consistency", |b| {
        b.iter(|| noisy_or_consistency(&probs, &gate, &queries, 0.5).unwrap())
    });
}

fn scorer(c: &mut Criterion) {
    let cfg = ScorerConfig::default();
    let w = ScorerWeights::random(cfg.clone(), 1).unwrap();
    let tokens: Vec<Vec<f64>> = (0..12)
        .map(|j| (0..cfg.token_dim()).map(|i| ((i * 7 + j * 3) % 11) as f64 / 11.0).collect())
        .collect();
    let fruit = vec![0.1; cfg.fruit_dim];
    let geometry = vec![[0.2; 11]; 12];
    let feats = vec![[0.05, 0.01]; 12];
    c.bench_function("scorer_12_candidates", |b| {
        b.iter(|| {
            let ctx = w.encode_leaf_set(&tokens).unwrap();
            w.score_direction(&fruit, &ctx, &geometry, &feats, 0).unwrap()
        })
    });
}

criterion_group!(benches, metrics, objectives, scorer);
criterion_main!(benches);
