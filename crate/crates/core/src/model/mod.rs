//! The detector network with hand-written forward and backward passes.

mod config;
pub mod layers;
mod network;

pub use config::{Backbone, ModelConfig, DEFAULT_HIDDEN_DIM, DEFAULT_RELATION_BOTTLENECK, DEFAULT_TYPE_BOTTLENECK};
pub use network::{names, ForwardTrace, Mled, ReceptiveField, RelationTrace, TypeTrace};

use crate::enhancer::EnhancerEmbeddings;
use crate::graph::MultiRelationGraph;
use crate::numerics::{cross_entropy_loss, ClassWeights, NumericsError, ParameterStore};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error("stale forward trace: {0}")]
    StaleTrace(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl Mled {
    /// Forward, cross-entropy against the graph labels of `batch`, backward.
    /// Gradients are added to whatever the store already holds.
    pub fn loss_and_grads(
        &self,
        store: &mut ParameterStore,
        graph: &MultiRelationGraph,
        emb: &EnhancerEmbeddings,
        batch: &[usize],
        weights: ClassWeights,
    ) -> Result<(f64, ForwardTrace), ModelError> {
        let targets = batch_targets(graph, batch)?;
        let mut trace = self.forward(store, graph, emb, batch)?;
        let (loss, dlogits) = cross_entropy_loss(&trace.logits, &targets, weights)?;
        self.backward(store, &mut trace, &dlogits)?;
        Ok((loss, trace))
    }

    /// Mean (optionally weighted) cross-entropy of `nodes` without touching gradients.
    pub fn loss(
        &self,
        store: &ParameterStore,
        graph: &MultiRelationGraph,
        emb: &EnhancerEmbeddings,
        nodes: &[usize],
        weights: ClassWeights,
    ) -> Result<f64, ModelError> {
        let targets = batch_targets(graph, nodes)?;
        let trace = self.forward(store, graph, emb, nodes)?;
        Ok(cross_entropy_loss(&trace.logits, &targets, weights)?.0)
    }
}

fn batch_targets(graph: &MultiRelationGraph, batch: &[usize]) -> Result<Vec<u8>, ModelError> {
    batch
        .iter()
        .map(|&v| {
            if v >= graph.num_nodes() {
                return Err(ModelError::Input(format!("node {v} is out of range")));
            }
            graph
                .label(v)
                .ok_or_else(|| ModelError::Input(format!("node {v} is unlabeled")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhancer::pseudo_embed;
    use crate::graph::{generate_synthetic, SyntheticSpec};
    use crate::numerics::{adam_step, gradient_check, AdamConfig, GradCheckConfig, Tensor2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RAW: usize = 12;

    fn small_graph(n: usize) -> MultiRelationGraph {
        (0..100)
            .find_map(|seed| {
                generate_synthetic(&SyntheticSpec::new(n, 5, 0.35, vec![0.8, 0.5, 0.2], 3.0, 1.0, seed)).ok()
            })
            .expect("some seed yields both classes")
    }

    fn embeddings(num_types: usize, num_relations: usize) -> EnhancerEmbeddings {
        let t: Vec<Vec<f64>> = (0..num_types).map(|i| pseudo_embed(&format!("t{i}"), RAW, 0)).collect();
        let r: Vec<Vec<f64>> = (0..num_relations).map(|i| pseudo_embed(&format!("r{i}"), RAW, 0)).collect();
        EnhancerEmbeddings::from_vectors(&t, &r).unwrap()
    }

    fn small_config(backbone: Backbone) -> ModelConfig {
        let mut c = ModelConfig::new(5, 2, 3, RAW);
        c.hidden_dim = 6;
        c.type_bottleneck = 3;
        c.relation_bottleneck = 4;
        c.backbone = backbone;
        c
    }

    /// Random values everywhere, so no activation sits on its kink and biases are exercised.
    fn jitter(store: &mut ParameterStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, b) in store.iter_mut() {
            for v in b.value.data_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
    }

    fn run_gradcheck(backbone: Backbone, weights: ClassWeights) {
        let g = small_graph(20);
        let emb = embeddings(2, 3);
        let model = Mled::new(small_config(backbone)).unwrap();
        let mut store = model.init_params(1);
        jitter(&mut store, 2);
        let batch: Vec<usize> = (0..20).step_by(2).collect();
        let report = gradient_check(
            &mut store,
            |s: &mut ParameterStore| model.loss_and_grads(s, &g, &emb, &batch, weights).map(|r| r.0),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:#?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        run_gradcheck(Backbone::RelationMean { layers: 1 }, None);
        run_gradcheck(Backbone::None, None);
        run_gradcheck(Backbone::RelationMean { layers: 2 }, Some([0.3, 1.7]));
    }

    #[test]
    fn zero_parameters_give_uniform_prediction() {
        let g = small_graph(20);
        let model = Mled::new(small_config(Backbone::RelationMean { layers: 1 })).unwrap();
        let store = model.zero_params();
        let nodes: Vec<usize> = (0..20).collect();
        let trace = model.forward(&store, &g, &embeddings(2, 3), &nodes).unwrap();
        assert!(trace.probs.data().iter().all(|&p| p == 0.5));
        let loss = model.loss(&store, &g, &embeddings(2, 3), &nodes, None).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn batched_forward_matches_full_graph() {
        let g = small_graph(40);
        let emb = embeddings(2, 3);
        for layers in [1, 2] {
            let model = Mled::new(small_config(Backbone::RelationMean { layers })).unwrap();
            let store = model.init_params(3);
            let all: Vec<usize> = (0..40).collect();
            let full = model.forward(&store, &g, &emb, &all).unwrap().fraud_scores();
            let batch = [17, 3, 29, 3];
            let part = model.forward(&store, &g, &emb, &batch).unwrap().fraud_scores();
            for (i, &v) in batch.iter().enumerate() {
                assert!((part[i] - full[v]).abs() <= 1e-12, "layers {layers}, node {v}");
            }
        }
    }

    #[test]
    fn projection_cost_does_not_depend_on_batch_size() {
        let g = small_graph(40);
        let emb = embeddings(2, 3);
        let model = Mled::new(small_config(Backbone::None)).unwrap();
        let store = model.init_params(0);
        let small = model.forward(&store, &g, &emb, &[0]).unwrap().projection_flops;
        let all: Vec<usize> = (0..40).collect();
        let big = model.forward(&store, &g, &emb, &all).unwrap().projection_flops;
        assert_eq!(small, big);
        // 2 · (types · (λE + Uλ) + relations · (γE + Uγ))
        assert_eq!(small, 2 * (2 * (3 * 12 + 6 * 3) + 3 * (4 * 12 + 6 * 4)));
    }

    #[test]
    fn trace_is_single_use_and_goes_stale_after_a_step() {
        let g = small_graph(20);
        let emb = embeddings(2, 3);
        let model = Mled::new(small_config(Backbone::None)).unwrap();
        let mut store = model.init_params(0);
        let (_, mut trace) = model.loss_and_grads(&mut store, &g, &emb, &[0, 1], None).unwrap();
        let d = Tensor2::zeros(2, 2);
        assert!(matches!(
            model.backward(&mut store, &mut trace, &d),
            Err(ModelError::StaleTrace(_))
        ));
        let mut fresh = model.forward(&store, &g, &emb, &[0, 1]).unwrap();
        adam_step(&mut store, &AdamConfig::default()).unwrap();
        assert!(matches!(
            model.backward(&mut store, &mut fresh, &d),
            Err(ModelError::StaleTrace(_))
        ));
    }

    #[test]
    fn disabled_enhancers_equal_zero_fusion_weights() {
        let g = small_graph(30);
        let emb = embeddings(2, 3);
        let full = Mled::new(small_config(Backbone::RelationMean { layers: 1 })).unwrap();
        let mut bare_cfg = small_config(Backbone::RelationMean { layers: 1 });
        bare_cfg.type_enhancer = false;
        bare_cfg.relation_enhancer = false;
        let bare = Mled::new(bare_cfg).unwrap();
        let mut fs = full.init_params(9);
        let bs = bare.init_params(9);
        for (name, block) in bs.iter() {
            assert!(fs.value(name).unwrap().data() == block.value.data(), "{name}");
        }
        fs.value_mut(names::FUSION_TYPE).unwrap().fill(0.0);
        fs.value_mut(names::FUSION_REL).unwrap().fill(0.0);
        let nodes: Vec<usize> = (0..30).collect();
        let a = full.forward(&fs, &g, &emb, &nodes).unwrap();
        let b = bare.forward(&bs, &g, &emb, &nodes).unwrap();
        assert!(b.type_level.is_none() && b.relation_level.is_none());
        assert!(a.logits.data().iter().zip(b.logits.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn invariants_hold_after_random_init() {
        let g = small_graph(30);
        let model = Mled::new(small_config(Backbone::RelationMean { layers: 1 })).unwrap();
        let mut store = model.init_params(4);
        jitter(&mut store, 5);
        let nodes: Vec<usize> = (0..30).collect();
        let t = model.forward(&store, &g, &embeddings(2, 3), &nodes).unwrap();
        assert!(t.invariant_violations().is_empty());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let g = small_graph(20);
        let model = Mled::new(small_config(Backbone::None)).unwrap();
        let store = model.init_params(0);
        assert!(model.forward(&store, &g, &embeddings(3, 3), &[0]).is_err());
        assert!(model.forward(&store, &g, &embeddings(2, 3), &[]).is_err());
        assert!(model.forward(&store, &g, &embeddings(2, 3), &[20]).is_err());
        let mut bad = small_config(Backbone::None);
        bad.relation_bottleneck = RAW + 1;
        bad.leaky_slope = 0.0;
        let msg = Mled::new(bad).unwrap_err().to_string();
        assert!(msg.contains("relation_bottleneck") && msg.contains("leaky_slope"), "{msg}");
    }
}
