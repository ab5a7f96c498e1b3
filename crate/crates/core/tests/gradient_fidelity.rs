use std::time::Instant;

use mled_core::enhancer::{pseudo_embed, EnhancerEmbeddings};
use mled_core::graph::{generate_synthetic, MultiRelationGraph, SyntheticSpec};
use mled_core::model::{Backbone, Mled, ModelConfig};
use mled_core::numerics::{gradient_check, GradCheckConfig, ParameterStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> (MultiRelationGraph, EnhancerEmbeddings) {
    let graph = (seed..seed + 100)
        .find_map(|s| generate_synthetic(&SyntheticSpec::new(20, 4, 0.3, vec![0.9, 0.6, 0.3], 3.0, 0.5, s)).ok())
        .unwrap();
    let types: Vec<Vec<f64>> = graph.node_type_names().iter().map(|t| pseudo_embed(t, 24, seed)).collect();
    let rels: Vec<Vec<f64>> = graph.relation_names().iter().map(|r| pseudo_embed(r, 24, seed)).collect();
    (graph, EnhancerEmbeddings::from_vectors(&types, &rels).unwrap())
}

fn check(backbone: Backbone, seed: u64) {
    let (graph, emb) = instance(seed);
    assert_eq!((graph.num_relations(), graph.node_type_names().len()), (3, 2));
    let mut cfg = ModelConfig::new(4, 2, 3, 24);
    cfg.hidden_dim = 8;
    cfg.type_bottleneck = 4;
    cfg.relation_bottleneck = 6;
    cfg.backbone = backbone;
    let model = Mled::new(cfg).unwrap();
    let mut store = model.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    // Move biases and fusion weights off their initial constants.
    for (_, b) in store.iter_mut() {
        for v in b.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let nodes: Vec<usize> = graph.labeled_nodes().collect();
    let report = gradient_check(
        &mut store,
        |s: &mut ParameterStore| model.loss_and_grads(s, &graph, &emb, &nodes, None).map(|r| r.0),
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed, "{report:#?}");
    assert!(report.max_rel_error <= 1e-4);
}

#[test]
fn every_block_matches_central_differences() {
    let start = Instant::now();
    for seed in 0..3 {
        check(Backbone::RelationMean { layers: 1 }, seed);
    }
    check(Backbone::None, 7);
    check(Backbone::RelationMean { layers: 2 }, 8);
    assert!(start.elapsed().as_secs() < 30);
}
