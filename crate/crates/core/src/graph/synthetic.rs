//! Planted fraud graphs with per-relation homophily.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DatasetMeta, GraphError, LabelSemantics, MultiRelationGraph, RelationAdjacency};
use crate::numerics::Tensor2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub fraud_ratio: f64,
    /// Probability that an edge stub lands on a same-class node, one entry per relation.
    pub homophily: Vec<f64>,
    /// Target mean degree, one entry per relation.
    pub avg_degree: Vec<f64>,
    /// Offset added to every feature coordinate of fraud nodes.
    pub feature_shift: f64,
    pub node_type_names: Vec<String>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Spec with `homophily.len()` relations that all share one mean degree.
    pub fn new(num_nodes: usize, feature_dim: usize, fraud_ratio: f64, homophily: Vec<f64>, avg_degree: f64, feature_shift: f64, seed: u64) -> Self {
        let r = homophily.len();
        Self {
            name: "synthetic".into(),
            num_nodes,
            feature_dim,
            fraud_ratio,
            homophily,
            avg_degree: vec![avg_degree; r],
            feature_shift,
            node_type_names: vec!["account".into(), "merchant".into()],
            seed,
        }
    }

    pub fn num_relations(&self) -> usize {
        self.homophily.len()
    }

    pub fn relation_names(&self) -> Vec<String> {
        (0..self.num_relations()).map(|r| format!("rel{r}")).collect()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_nodes < 2 {
            out.push(format!("num_nodes must be >= 2, got {}", self.num_nodes));
        }
        if self.feature_dim == 0 {
            out.push("feature_dim must be >= 1".into());
        }
        if !(self.fraud_ratio > 0.0 && self.fraud_ratio < 0.5) {
            out.push(format!("fraud_ratio must lie in (0, 0.5), got {}", self.fraud_ratio));
        }
        if self.homophily.is_empty() {
            out.push("at least one relation is required".into());
        }
        if self.avg_degree.len() != self.homophily.len() {
            out.push(format!("{} avg_degree entries for {} relations", self.avg_degree.len(), self.homophily.len()));
        }
        for (r, h) in self.homophily.iter().enumerate() {
            if !(0.0..=1.0).contains(h) {
                out.push(format!("homophily[{r}] must lie in [0, 1], got {h}"));
            }
        }
        for (r, d) in self.avg_degree.iter().enumerate() {
            if !(*d >= 1.0) || !d.is_finite() {
                out.push(format!("avg_degree[{r}] must be >= 1, got {d}"));
            }
        }
        if !self.feature_shift.is_finite() {
            out.push("feature_shift must be finite".into());
        }
        if self.node_type_names.is_empty() {
            out.push("node_type_names is empty".into());
        }
        out
    }
}

/// Draws labels, class-conditional Gaussian features and homophily-controlled
/// edges. Deterministic for a fixed spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiRelationGraph, GraphError> {
    let problems = spec.violations();
    if !problems.is_empty() {
        return Err(GraphError::Generation(problems.join("; ")));
    }
    let n = spec.num_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(spec.fraud_ratio))).collect();
    let classes: [Vec<usize>; 2] = [
        (0..n).filter(|&i| labels[i] == 0).collect(),
        (0..n).filter(|&i| labels[i] == 1).collect(),
    ];
    let smallest = classes[0].len().min(classes[1].len());
    if smallest == 0 {
        return Err(GraphError::Generation(format!(
            "seed {} produced a single-class graph; increase num_nodes or fraud_ratio",
            spec.seed
        )));
    }
    if let Some(d) = spec.avg_degree.iter().find(|&&d| d >= smallest as f64) {
        return Err(GraphError::Generation(format!(
            "avg_degree {d} is infeasible: the smallest class has only {smallest} nodes"
        )));
    }

    let mut features = Tensor2::zeros(n, spec.feature_dim);
    for i in 0..n {
        let shift = if labels[i] == 1 { spec.feature_shift } else { 0.0 };
        for v in features.row_mut(i) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z + shift;
        }
    }

    let mut relations = Vec::with_capacity(spec.num_relations());
    for (&homophily, &degree) in spec.homophily.iter().zip(&spec.avg_degree) {
        // Every stub becomes an undirected edge, so half the target degree per node.
        let half = degree / 2.0;
        let base = half.floor() as usize;
        let frac = half - base as f64;
        let mut edges = Vec::with_capacity(n * (base + 1));
        for i in 0..n {
            let stubs = base + usize::from(frac > 0.0 && rng.random_bool(frac));
            let own = labels[i] as usize;
            for _ in 0..stubs {
                let pool = if rng.random_bool(homophily) { &classes[own] } else { &classes[1 - own] };
                let j = loop {
                    let j = pool[rng.random_range(0..pool.len())];
                    if j != i {
                        break j;
                    }
                };
                edges.push((i, j));
            }
        }
        relations.push(RelationAdjacency::from_edges(n, &edges));
    }

    let meta = DatasetMeta {
        name: spec.name.clone(),
        num_nodes: n,
        feature_dim: spec.feature_dim,
        relation_names: spec.relation_names(),
        node_type_names: spec.node_type_names.clone(),
        label_semantics: LabelSemantics::default(),
        node_type_descriptions: BTreeMap::new(),
        relation_descriptions: spec
            .relation_names()
            .into_iter()
            .zip(&spec.homophily)
            .map(|(name, h)| (name, format!("Synthetic relation linking nodes; a link joins same-class nodes with probability {h}.")))
            .collect(),
    };
    MultiRelationGraph::new(meta, relations, features, labels, vec![true; n])
}
