//! Type- and relation-level prompts and the embeddings that seed the enhancers.
//!
//! Embeddings are fetched once per prompt and persisted, so training runs
//! fully offline from the cache. Provider cost is one call per node type and
//! one per relation, independent of graph size.

mod cache;
mod prompt;
mod provider;

use std::path::PathBuf;

use chrono::{SecondsFormat, Utc};

use crate::graph::DatasetMeta;
use crate::numerics::Tensor2;

pub use cache::{EmbeddingCache, EmbeddingRecord};
pub use prompt::{
    build_relation_prompt, build_type_prompt, dataset_prompts, sha256_hex, Prompt, PromptKind, RELATION_INSTRUCTION,
    TYPE_INSTRUCTION,
};
pub use provider::{
    pseudo_embed, CacheOnlyProvider, EmbeddingProvider, ProviderOutput, PseudoProvider, RemoteConfig, RemoteProvider,
    SummaryEndpoint, DEFAULT_EMBEDDING_DIM,
};

#[derive(Debug, thiserror::Error)]
pub enum EnhancerError {
    #[error("provider `{provider_id}` failed for prompt {digest}: {reason}")]
    Transport {
        digest: String,
        provider_id: String,
        reason: String,
    },
    #[error("no cached embedding for {kind:?} prompt `{subject}` (digest {digest}); run prepare-embeddings first")]
    Missing {
        digest: String,
        subject: String,
        kind: PromptKind,
    },
    #[error("cache integrity error in {path} line {line}: {reason}")]
    Integrity { path: PathBuf, line: usize, reason: String },
    #[error("embedding for {digest} has dim {got}, expected {expected}")]
    DimMismatch { digest: String, expected: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchSource {
    Cache,
    Provider,
}

/// Cache-first lookup; on a miss calls the provider once and persists the result before returning.
pub fn fetch_embedding(
    prompt: &Prompt,
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
) -> Result<(EmbeddingRecord, FetchSource), EnhancerError> {
    let digest = prompt.digest();
    let cached = if provider.is_offline() {
        cache.get_any(&digest)
    } else {
        cache.get(provider.id(), &digest)
    };
    if let Some(rec) = cached {
        if let Some(expected) = provider.dim() {
            if rec.dim != expected {
                return Err(EnhancerError::DimMismatch {
                    digest,
                    expected,
                    got: rec.dim,
                });
            }
        }
        return Ok((rec.clone(), FetchSource::Cache));
    }
    if provider.is_offline() {
        return Err(EnhancerError::Missing {
            digest,
            subject: prompt.subject_name.clone(),
            kind: prompt.kind,
        });
    }
    let out = provider.embed(prompt).map_err(|e| match e {
        EnhancerError::Transport { reason, .. } => EnhancerError::Transport {
            digest: digest.clone(),
            provider_id: provider.id().to_string(),
            reason,
        },
        other => other,
    })?;
    if let Some(expected) = provider.dim() {
        if out.vector.len() != expected {
            return Err(EnhancerError::DimMismatch {
                digest,
                expected,
                got: out.vector.len(),
            });
        }
    }
    let record = EmbeddingRecord {
        provider_id: provider.id().to_string(),
        prompt_sha256: digest,
        dim: out.vector.len(),
        vector: out.vector,
        summary: out.summary,
        created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
    };
    cache.insert(record.clone())?;
    Ok((record, FetchSource::Provider))
}

/// One fetched prompt, as reported by `prepare-embeddings`.
#[derive(Debug, Clone)]
pub struct FetchedPrompt {
    pub prompt: Prompt,
    pub record: EmbeddingRecord,
    pub source: FetchSource,
}

/// Raw (pre-projection) enhancer inputs: one row per node type and one per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerEmbeddings {
    pub type_raw: Tensor2,
    pub relation_raw: Tensor2,
}

impl EnhancerEmbeddings {
    pub fn raw_dim(&self) -> usize {
        self.type_raw.cols()
    }

    pub fn from_vectors(types: &[Vec<f64>], relations: &[Vec<f64>]) -> Result<Self, EnhancerError> {
        let dim = types.first().or(relations.first()).map_or(0, Vec::len);
        for v in types.iter().chain(relations) {
            if v.len() != dim {
                return Err(EnhancerError::DimMismatch {
                    digest: String::new(),
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        let stack = |rows: &[Vec<f64>]| Tensor2::from_vec(rows.len(), dim, rows.concat()).expect("dims checked");
        Ok(Self {
            type_raw: stack(types),
            relation_raw: stack(relations),
        })
    }
}

/// Fetches every type and relation prompt of a dataset. Returns the per-prompt
/// outcomes (types first) and the stacked embeddings.
pub fn fetch_dataset_embeddings(
    meta: &DatasetMeta,
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
) -> Result<(Vec<FetchedPrompt>, EnhancerEmbeddings), EnhancerError> {
    let (types, relations) = dataset_prompts(meta);
    let mut fetched = Vec::with_capacity(types.len() + relations.len());
    for prompt in types.into_iter().chain(relations) {
        let (record, source) = fetch_embedding(&prompt, provider, cache)?;
        fetched.push(FetchedPrompt { prompt, record, source });
    }
    let (t, r): (Vec<_>, Vec<_>) = fetched.iter().partition(|f| f.prompt.kind == PromptKind::TypeLevel);
    let t: Vec<Vec<f64>> = t.into_iter().map(|f| f.record.vector.clone()).collect();
    let r: Vec<Vec<f64>> = r.into_iter().map(|f| f.record.vector.clone()).collect();
    let emb = EnhancerEmbeddings::from_vectors(&t, &r)?;
    Ok((fetched, emb))
}
