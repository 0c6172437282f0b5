//! Shared fixtures for the benchmarks.

use occlugraph::metrics::{MetricInputs, RankingQuery};
use occlugraph::scene::{generate_scene, GenerationConfig, Scene};
use rand::Rng;

/// A default-config scene; panics if generation rejects the seed.
pub fn fixture_scene(seed: u64) -> Scene {
    generate_scene(&GenerationConfig::default(), seed).expect("fixture scene generates")
}

/// Random metric inputs with `queries` ranking queries of `leaves` candidates.
pub fn fixture_metric_inputs(queries: usize, leaves: usize, seed: u64) -> MetricInputs {
    let mut rng = occlugraph::geometry::stream_rng(seed, 0);
    let mut unit = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen::<f64>()).collect() };
    let ranking = (0..queries)
        .map(|_| RankingQuery {
            relevance: unit(leaves),
            scores: unit(leaves),
        })
        .collect();
    let nodes = queries / 4 + 1;
    MetricInputs {
        ranking,
        union_targets: unit(queries),
        union_preds: unit(queries),
        edge_labels: unit(queries).into_iter().map(|x| x < 0.2).collect(),
        edge_scores: unit(queries),
        pred_delta_c: unit(nodes * 3),
        delta_c: unit(nodes * 3),
        pred_extents: unit(nodes * 3),
        extents: unit(nodes * 3),
        mass_at_k: unit(nodes),
    }
}
