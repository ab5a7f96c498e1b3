//! Newline-delimited JSON store of provider embeddings keyed by prompt digest.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::EnhancerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub provider_id: String,
    pub prompt_sha256: String,
    pub dim: usize,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    pub created_at: String,
}

impl EmbeddingRecord {
    fn check(&self) -> Result<(), String> {
        if self.vector.len() != self.dim {
            return Err(format!("vector has {} entries but dim is {}", self.vector.len(), self.dim));
        }
        if self.dim == 0 {
            return Err("dim is 0".into());
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err("vector has non-finite entries".into());
        }
        if self.prompt_sha256.len() != 64 || !self.prompt_sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("`{}` is not a sha256 hex digest", self.prompt_sha256));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    records: IndexMap<(String, String), EmbeddingRecord>,
}

impl EmbeddingCache {
    /// Loads the cache at `path`, or starts an empty one if the file does not exist.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, EnhancerError> {
        let path = path.into();
        let mut cache = Self {
            path: path.clone(),
            records: IndexMap::new(),
        };
        if !path.exists() {
            return Ok(cache);
        }
        let text = fs::read_to_string(&path)?;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let integrity = |reason: String| EnhancerError::Integrity {
                path: path.clone(),
                line: line_no,
                reason,
            };
            let record: EmbeddingRecord = serde_json::from_str(line).map_err(|e| integrity(e.to_string()))?;
            record.check().map_err(integrity)?;
            let key = (record.provider_id.clone(), record.prompt_sha256.clone());
            if let Some(prev) = cache.records.get(&key) {
                if prev.vector != record.vector {
                    return Err(integrity(format!(
                        "conflicting vectors for digest {} from provider {}",
                        record.prompt_sha256, record.provider_id
                    )));
                }
                continue;
            }
            cache.records.insert(key, record);
        }
        Ok(cache)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, provider_id: &str, digest: &str) -> Option<&EmbeddingRecord> {
        self.records.get(&(provider_id.to_string(), digest.to_string()))
    }

    /// First record for `digest` from any provider, in file order.
    pub fn get_any(&self, digest: &str) -> Option<&EmbeddingRecord> {
        self.records.values().find(|r| r.prompt_sha256 == digest)
    }

    pub fn records(&self) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.values()
    }

    /// Appends the record to the backing file, then indexes it.
    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<(), EnhancerError> {
        record.check().map_err(|reason| EnhancerError::Integrity {
            path: self.path.clone(),
            line: 0,
            reason,
        })?;
        let key = (record.provider_id.clone(), record.prompt_sha256.clone());
        if self.records.contains_key(&key) {
            return Ok(());
        }
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut line = serde_json::to_string(&record).map_err(|e| EnhancerError::Integrity {
            path: self.path.clone(),
            line: 0,
            reason: e.to_string(),
        })?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        self.records.insert(key, record);
        Ok(())
    }
}
