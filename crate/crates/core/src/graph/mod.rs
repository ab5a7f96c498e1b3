//! Multi-relation graph data model: one node set, several undirected edge sets.
//!
//! Each relation is stored as a symmetric CSR adjacency with sorted,
//! duplicate-free neighbor lists and no self-loops. Features are dense
//! `f64` rows; labels are `0` (benign) or `1` (fraud) where `label_mask` is set.

mod io;
mod split;
mod synthetic;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor2;

pub use io::{dataset_fingerprint, load_dataset, save_dataset};
pub use split::{make_split, SplitAssignment};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("cannot load {path}: {reason}")]
    Load { path: PathBuf, reason: String },
    #[error("relation `{relation}`, row {row}: node index {index} is out of range [0, {num_nodes})")]
    EdgeOutOfRange {
        relation: String,
        row: usize,
        index: i64,
        num_nodes: usize,
    },
    #[error("feature row {row}, column {col} is not finite")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("invalid graph: {0}")]
    Validation(String),
    #[error("split: {0}")]
    Split(String),
    #[error("synthetic generation: {0}")]
    Generation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How the label column is encoded on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSemantics {
    pub benign: i64,
    pub fraud: i64,
    pub unlabeled: i64,
}

impl Default for LabelSemantics {
    fn default() -> Self {
        Self {
            benign: 0,
            fraud: 1,
            unlabeled: -1,
        }
    }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default = "default_dataset_name")]
    pub name: String,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub relation_names: Vec<String>,
    pub node_type_names: Vec<String>,
    #[serde(default)]
    pub label_semantics: LabelSemantics,
    /// Free-text introductions used to build type prompts; missing entries fall back to a template.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub node_type_descriptions: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub relation_descriptions: BTreeMap<String, String>,
}

fn default_dataset_name() -> String {
    "dataset".to_string()
}

impl DatasetMeta {
    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn num_types(&self) -> usize {
        self.node_type_names.len()
    }

    pub fn type_description(&self, name: &str) -> &str {
        self.node_type_descriptions.get(name).map_or("", String::as_str)
    }

    pub fn relation_description(&self, name: &str) -> &str {
        self.relation_descriptions.get(name).map_or("", String::as_str)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let mut problems = Vec::new();
        if self.relation_names.is_empty() {
            problems.push("relation_names is empty".to_string());
        }
        if self.node_type_names.is_empty() {
            problems.push("node_type_names is empty".to_string());
        }
        for (kind, names) in [("relation", &self.relation_names), ("node type", &self.node_type_names)] {
            let mut seen = std::collections::BTreeSet::new();
            for n in names {
                if n.trim().is_empty() {
                    problems.push(format!("empty {kind} name"));
                } else if !seen.insert(n) {
                    problems.push(format!("duplicate {kind} name `{n}`"));
                }
            }
        }
        for n in &self.relation_names {
            if n.contains(['/', '\\']) || n == "." || n == ".." {
                problems.push(format!("relation name `{n}` cannot be used as a file name"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GraphError::Validation(problems.join("; ")))
        }
    }
}

/// Symmetric CSR adjacency of a single relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationAdjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl RelationAdjacency {
    /// Builds the adjacency from possibly directed, duplicated edges.
    /// Self-loops are dropped and every edge is stored in both directions.
    /// Endpoints must already be in range.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            debug_assert!(a < num_nodes && b < num_nodes);
            if a != b {
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; num_nodes + 1];
        for &(a, _) in &pairs {
            offsets[a + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let neighbors = pairs.into_iter().map(|(_, b)| b).collect();
        Self { offsets, neighbors }
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self {
            offsets: vec![0; num_nodes + 1],
            neighbors: Vec::new(),
        }
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbor_buffer(&self) -> &[usize] {
        &self.neighbors
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`, in ascending order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |i| self.neighbors(i).iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    fn check(&self) -> Result<(), String> {
        let n = self.num_nodes();
        if self.offsets[0] != 0 || self.offsets[n] != self.neighbors.len() {
            return Err("offsets do not span the neighbor buffer".into());
        }
        for i in 0..n {
            if self.offsets[i] > self.offsets[i + 1] {
                return Err(format!("offsets decrease at node {i}"));
            }
            let nb = self.neighbors(i);
            for w in nb.windows(2) {
                if w[0] >= w[1] {
                    return Err(format!("neighbors of node {i} are not strictly ascending"));
                }
            }
            for &j in nb {
                if j >= n {
                    return Err(format!("node {i} has out-of-range neighbor {j}"));
                }
                if j == i {
                    return Err(format!("node {i} has a self-loop"));
                }
                if self.neighbors(j).binary_search(&i).is_err() {
                    return Err(format!("edge ({i}, {j}) has no reverse"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiRelationGraph {
    meta: DatasetMeta,
    relations: Vec<RelationAdjacency>,
    features: Tensor2,
    labels: Vec<u8>,
    label_mask: Vec<bool>,
}

/// Per-dataset summary in the shape of the usual benchmark statistics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub num_nodes: usize,
    pub labeled: usize,
    pub fraud: usize,
    /// Fraud share of labeled nodes, in percent.
    pub fraud_percent: f64,
    pub relation_edges: Vec<(String, usize)>,
}

impl MultiRelationGraph {
    /// Assembles a graph and checks every structural invariant.
    pub fn new(
        meta: DatasetMeta,
        relations: Vec<RelationAdjacency>,
        features: Tensor2,
        labels: Vec<u8>,
        label_mask: Vec<bool>,
    ) -> Result<Self, GraphError> {
        meta.validate()?;
        let n = meta.num_nodes;
        if relations.len() != meta.relation_names.len() {
            return Err(GraphError::Validation(format!(
                "{} adjacency structures for {} relation names",
                relations.len(),
                meta.relation_names.len()
            )));
        }
        for (adj, name) in relations.iter().zip(&meta.relation_names) {
            if adj.num_nodes() != n {
                return Err(GraphError::Validation(format!("relation `{name}` covers {} nodes, expected {n}", adj.num_nodes())));
            }
            adj.check().map_err(|e| GraphError::Validation(format!("relation `{name}`: {e}")))?;
        }
        if features.shape() != (n, meta.feature_dim) {
            return Err(GraphError::Validation(format!(
                "features are {}x{}, expected {n}x{}",
                features.rows(),
                features.cols(),
                meta.feature_dim
            )));
        }
        for (i, v) in features.data().iter().enumerate() {
            if !v.is_finite() {
                return Err(GraphError::NonFiniteFeature {
                    row: i / meta.feature_dim.max(1),
                    col: i % meta.feature_dim.max(1),
                });
            }
        }
        if labels.len() != n || label_mask.len() != n {
            return Err(GraphError::Validation(format!(
                "{} labels and {} mask entries for {n} nodes",
                labels.len(),
                label_mask.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| label_mask[i] && labels[i] > 1) {
            return Err(GraphError::Validation(format!("node {i} has label {}", labels[i])));
        }
        Ok(Self {
            meta,
            relations,
            features,
            labels,
            label_mask,
        })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn num_nodes(&self) -> usize {
        self.meta.num_nodes
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.meta.feature_dim
    }

    pub fn relation(&self, r: usize) -> &RelationAdjacency {
        &self.relations[r]
    }

    pub fn relations(&self) -> &[RelationAdjacency] {
        &self.relations
    }

    pub fn relation_names(&self) -> &[String] {
        &self.meta.relation_names
    }

    pub fn node_type_names(&self) -> &[String] {
        &self.meta.node_type_names
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_mask(&self) -> &[bool] {
        &self.label_mask
    }

    /// Label of a node, or `None` when it is unlabeled.
    pub fn label(&self, node: usize) -> Option<u8> {
        self.label_mask[node].then_some(self.labels[node])
    }

    pub fn labeled_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes()).filter(|&i| self.label_mask[i])
    }

    pub fn stats(&self) -> DatasetStats {
        let labeled = self.labeled_nodes().count();
        let fraud = self.labeled_nodes().filter(|&i| self.labels[i] == 1).count();
        DatasetStats {
            name: self.meta.name.clone(),
            num_nodes: self.num_nodes(),
            labeled,
            fraud,
            fraud_percent: if labeled == 0 { 0.0 } else { 100.0 * fraud as f64 / labeled as f64 },
            relation_edges: self
                .meta
                .relation_names
                .iter()
                .cloned()
                .zip(self.relations.iter().map(RelationAdjacency::num_edges))
                .collect(),
        }
    }
}
