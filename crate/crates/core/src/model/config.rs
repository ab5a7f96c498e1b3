use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::DEFAULT_LEAKY_SLOPE;

/// Graph detector that consumes the fused node representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Backbone {
    /// Classify the fused representation directly.
    None,
    /// Per-relation neighbor means mixed back in through `W_agg_r`, repeated `layers` times.
    RelationMean { layers: usize },
}

impl Backbone {
    pub fn layers(&self) -> usize {
        match self {
            Backbone::None => 0,
            Backbone::RelationMean { layers } => *layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node feature width D.
    pub input_dim: usize,
    /// Shared latent width U.
    pub hidden_dim: usize,
    /// Bottleneck width λ of the type-embedding MLP.
    pub type_bottleneck: usize,
    /// Bottleneck width γ of the relation-embedding MLP.
    pub relation_bottleneck: usize,
    pub leaky_slope: f64,
    pub backbone: Backbone,
    pub num_types: usize,
    pub num_relations: usize,
    /// Width of the raw provider embeddings.
    pub raw_embedding_dim: usize,
    pub type_enhancer: bool,
    pub relation_enhancer: bool,
}

pub const DEFAULT_HIDDEN_DIM: usize = 64;
pub const DEFAULT_TYPE_BOTTLENECK: usize = 8;
pub const DEFAULT_RELATION_BOTTLENECK: usize = 16;

impl ModelConfig {
    pub fn new(input_dim: usize, num_types: usize, num_relations: usize, raw_embedding_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            type_bottleneck: DEFAULT_TYPE_BOTTLENECK,
            relation_bottleneck: DEFAULT_RELATION_BOTTLENECK,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            backbone: Backbone::RelationMean { layers: 1 },
            num_types,
            num_relations,
            raw_embedding_dim,
            type_enhancer: true,
            relation_enhancer: true,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("type_bottleneck", self.type_bottleneck),
            ("relation_bottleneck", self.relation_bottleneck),
            ("num_relations", self.num_relations),
            ("raw_embedding_dim", self.raw_embedding_dim),
        ] {
            if v == 0 {
                out.push(format!("{name} must be >= 1"));
            }
        }
        if self.type_enhancer && self.num_types == 0 {
            out.push("num_types must be >= 1 when the type enhancer is enabled".into());
        }
        if self.type_enhancer && self.type_bottleneck > self.raw_embedding_dim {
            out.push(format!(
                "type_bottleneck {} exceeds raw_embedding_dim {}",
                self.type_bottleneck, self.raw_embedding_dim
            ));
        }
        if self.relation_enhancer && self.relation_bottleneck > self.raw_embedding_dim {
            out.push(format!(
                "relation_bottleneck {} exceeds raw_embedding_dim {}",
                self.relation_bottleneck, self.raw_embedding_dim
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            out.push(format!("leaky_slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        if let Backbone::RelationMean { layers: 0 } = self.backbone {
            out.push("relation-mean backbone needs layers >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(v.join("; ")))
        }
    }
}
