//! Embedding providers: a deterministic offline pseudo-embedder, a cache-only
//! replay mode, and an HTTP client for remote summarize-then-embed services.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{EnhancerError, Prompt};

/// Raw output dimension of the default embedding model.
pub const DEFAULT_EMBEDDING_DIM: usize = 1536;

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderOutput {
    pub vector: Vec<f64>,
    /// Intermediate summary text, when the provider produced one.
    pub summary: Option<String>,
}

pub trait EmbeddingProvider {
    /// Stable identifier recorded next to every cached vector.
    fn id(&self) -> &str;

    /// Output dimension, when known before the first call.
    fn dim(&self) -> Option<usize>;

    fn embed(&self, prompt: &Prompt) -> Result<ProviderOutput, EnhancerError>;

    /// Offline providers never get called; cache lookups accept a record from any provider.
    fn is_offline(&self) -> bool {
        false
    }
}

/// Unit-norm vector of standard normals drawn from an RNG keyed by `(sha256(text), seed)`.
pub fn pseudo_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "pseudo_embed needs dim >= 1");
    let mut key: [u8; 32] = Sha256::digest(text.as_bytes()).into();
    for (k, s) in key.iter_mut().zip(seed.to_le_bytes()) {
        *k ^= s;
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v[0] = 1.0;
    }
    v
}

#[derive(Debug, Clone)]
pub struct PseudoProvider {
    id: String,
    dim: usize,
    seed: u64,
}

impl PseudoProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            id: format!("pseudo:d{dim}:s{seed}"),
            dim,
            seed,
        }
    }
}

impl EmbeddingProvider for PseudoProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed(&self, prompt: &Prompt) -> Result<ProviderOutput, EnhancerError> {
        Ok(ProviderOutput {
            vector: pseudo_embed(&prompt.rendered, self.dim, self.seed),
            summary: None,
        })
    }
}

/// Serves only what is already cached.
#[derive(Debug, Clone, Default)]
pub struct CacheOnlyProvider;

impl EmbeddingProvider for CacheOnlyProvider {
    fn id(&self) -> &str {
        "cache-only"
    }

    fn dim(&self) -> Option<usize> {
        None
    }

    fn embed(&self, _prompt: &Prompt) -> Result<ProviderOutput, EnhancerError> {
        Err(EnhancerError::Transport {
            digest: String::new(),
            provider_id: self.id().to_string(),
            reason: "cache-only mode never calls a provider".into(),
        })
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// Optional chat-completion step run before embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryEndpoint {
    pub url: String,
    pub model: String,
}

#[derive(Clone)]
pub struct RemoteConfig {
    /// Accepts `{model, input}` and returns `{embedding: [...]}` or `{data: [{embedding: [...]}]}`.
    pub embed_url: String,
    pub embed_model: String,
    pub api_key: Option<String>,
    /// When set the prompt is summarized first and the summary is embedded.
    pub summarize: Option<SummaryEndpoint>,
    pub expected_dim: Option<usize>,
    pub timeout: Duration,
}

impl std::fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("embed_url", &self.embed_url)
            .field("embed_model", &self.embed_model)
            .field("api_key", &self.api_key.as_ref().map(|_| "[REDACTED]"))
            .field("summarize", &self.summarize)
            .field("expected_dim", &self.expected_dim)
            .finish()
    }
}

pub struct RemoteProvider {
    id: String,
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(cfg: RemoteConfig) -> Self {
        let id = match &cfg.summarize {
            Some(s) => format!("remote:{}+summary:{}", cfg.embed_model, s.model),
            None => format!("remote:{}", cfg.embed_model),
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self { id, cfg, agent }
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value, String> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        resp.body_mut().read_json::<Value>().map_err(|e| e.to_string())
    }

    fn summarize(&self, endpoint: &SummaryEndpoint, text: &str) -> Result<String, String> {
        let body = json!({
            "model": endpoint.model,
            "messages": [{"role": "user", "content": text}],
            "temperature": 0,
        });
        let v = self.post(&endpoint.url, &body)?;
        v.pointer("/choices/0/message/content")
            .or_else(|| v.get("summary"))
            .or_else(|| v.get("text"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "summary response has no text".to_string())
    }
}

fn parse_embedding(v: &Value) -> Result<Vec<f64>, String> {
    let arr = v
        .get("embedding")
        .or_else(|| v.pointer("/data/0/embedding"))
        .and_then(Value::as_array)
        .ok_or_else(|| "response has no `embedding` array".to_string())?;
    arr.iter()
        .map(|x| x.as_f64().ok_or_else(|| format!("non-numeric embedding entry {x}")))
        .collect()
}

impl EmbeddingProvider for RemoteProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> Option<usize> {
        self.cfg.expected_dim
    }

    fn embed(&self, prompt: &Prompt) -> Result<ProviderOutput, EnhancerError> {
        let transport = |reason: String| EnhancerError::Transport {
            digest: prompt.digest(),
            provider_id: self.id.clone(),
            reason,
        };
        let summary = match &self.cfg.summarize {
            Some(ep) => Some(self.summarize(ep, &prompt.rendered).map_err(transport)?),
            None => None,
        };
        let input = summary.as_deref().unwrap_or(&prompt.rendered);
        let body = json!({"model": self.cfg.embed_model, "input": input});
        let v = self.post(&self.cfg.embed_url, &body).map_err(transport)?;
        let vector = parse_embedding(&v).map_err(transport)?;
        Ok(ProviderOutput { vector, summary })
    }
}
