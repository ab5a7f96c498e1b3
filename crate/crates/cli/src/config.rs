//! Layered run configuration: defaults, then a TOML/JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use mled_core::model::{
    Backbone, ModelConfig, DEFAULT_HIDDEN_DIM, DEFAULT_RELATION_BOTTLENECK, DEFAULT_TYPE_BOTTLENECK,
};
use mled_core::numerics::{AdamConfig, DEFAULT_LEAKY_SLOPE};
use mled_core::training::{ClassWeighting, SplitConfig, TrainConfig};

use crate::CliError;

pub const API_KEY_ENV: &str = "MLED_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub type_bottleneck: usize,
    pub relation_bottleneck: usize,
    pub leaky_slope: f64,
    pub backbone: Backbone,
    pub type_enhancer: bool,
    pub relation_enhancer: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dim: DEFAULT_HIDDEN_DIM,
            type_bottleneck: DEFAULT_TYPE_BOTTLENECK,
            relation_bottleneck: DEFAULT_RELATION_BOTTLENECK,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            backbone: Backbone::RelationMean { layers: 1 },
            type_enhancer: true,
            relation_enhancer: true,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, input_dim: usize, num_types: usize, num_relations: usize, raw_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            type_bottleneck: self.type_bottleneck,
            relation_bottleneck: self.relation_bottleneck,
            leaky_slope: self.leaky_slope,
            backbone: self.backbone,
            num_types,
            num_relations,
            raw_embedding_dim: raw_dim,
            type_enhancer: self.type_enhancer,
            relation_enhancer: self.relation_enhancer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub eval_every: usize,
    pub adam: AdamConfig,
    pub class_weighting: ClassWeighting,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            eval_every: t.eval_every,
            adam: t.adam,
            class_weighting: t.class_weighting,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop_patience,
            eval_every: self.eval_every,
            adam: self.adam,
            seed,
            class_weighting: self.class_weighting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Pseudo,
    CacheOnly,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    /// Pseudo-provider output width.
    pub dim: usize,
    /// Pseudo-provider seed.
    pub seed: u64,
    pub remote_url: Option<String>,
    pub embed_model: String,
    /// Optional chat endpoint that summarizes each prompt before embedding.
    pub summary_url: Option<String>,
    pub summary_model: String,
    pub timeout_secs: u64,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            kind: ProviderKind::CacheOnly,
            dim: mled_core::enhancer::DEFAULT_EMBEDDING_DIM,
            seed: 0,
            remote_url: None,
            embed_model: "text-embedding-3-small".into(),
            summary_url: None,
            summary_model: "gpt-4o-mini".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    /// Base seed; run `k` uses `seed + k` for its split, initialization and shuffling.
    pub seed: u64,
    pub repeats: usize,
    pub split: SplitConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub provider: ProviderSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            cache: None,
            seed: 0,
            repeats: 1,
            split: SplitConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            provider: ProviderSection::default(),
        }
    }
}

impl RunConfig {
    /// Value-level checks that serde cannot express.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.repeats == 0 {
            out.push("repeats: must be >= 1".into());
        }
        let s = &self.split;
        if !(s.train_ratio > 0.0 && s.val_ratio > 0.0 && s.train_ratio + s.val_ratio < 1.0) {
            out.push(format!(
                "split: need 0 < train_ratio, 0 < val_ratio and train_ratio + val_ratio < 1 (got {} and {})",
                s.train_ratio, s.val_ratio
            ));
        }
        // Data-dependent dimensions are checked later; placeholders of 1 keep the rest meaningful.
        let model = self.model.to_model_config(1, 1, 1, usize::MAX);
        out.extend(model.violations().into_iter().map(|v| format!("model: {v}")));
        out.extend(self.train.to_train_config(0).violations().into_iter().map(|v| format!("train: {v}")));
        if self.provider.dim == 0 {
            out.push("provider.dim: must be >= 1".into());
        }
        if self.provider.kind == ProviderKind::Remote && self.provider.remote_url.is_none() {
            out.push("provider.remote_url: required for the remote provider (or pass --remote-url)".into());
        }
        out
    }
}

/// Flag values that override the file layer. `None` leaves the key alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub lambda: Option<usize>,
    pub gamma: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub learning_rate: Option<f64>,
    pub train_ratio: Option<f64>,
    pub val_ratio: Option<f64>,
    pub no_type_enhancer: bool,
    pub no_relation_enhancer: bool,
    pub provider: Option<ProviderKind>,
    pub remote_url: Option<String>,
}

impl Overrides {
    fn apply(&self, root: &mut Value) {
        fn set(root: &mut Value, path: &[&str], v: Value) {
            let mut cur = root;
            for key in &path[..path.len() - 1] {
                if !cur.is_object() {
                    *cur = Value::Object(Map::new());
                }
                cur = cur
                    .as_object_mut()
                    .expect("object")
                    .entry(key.to_string())
                    .or_insert_with(|| Value::Object(Map::new()));
            }
            if !cur.is_object() {
                *cur = Value::Object(Map::new());
            }
            cur.as_object_mut()
                .expect("object")
                .insert(path[path.len() - 1].to_string(), v);
        }
        let path_value = |p: &Path| Value::String(p.to_string_lossy().into_owned());
        if let Some(p) = &self.dataset {
            set(root, &["dataset"], path_value(p));
        }
        if let Some(p) = &self.cache {
            set(root, &["cache"], path_value(p));
        }
        if let Some(v) = self.seed {
            set(root, &["seed"], v.into());
        }
        if let Some(v) = self.repeats {
            set(root, &["repeats"], v.into());
        }
        if let Some(v) = self.lambda {
            set(root, &["model", "type_bottleneck"], v.into());
        }
        if let Some(v) = self.gamma {
            set(root, &["model", "relation_bottleneck"], v.into());
        }
        if let Some(v) = self.hidden_dim {
            set(root, &["model", "hidden_dim"], v.into());
        }
        if self.no_type_enhancer {
            set(root, &["model", "type_enhancer"], false.into());
        }
        if self.no_relation_enhancer {
            set(root, &["model", "relation_enhancer"], false.into());
        }
        if let Some(v) = self.batch_size {
            set(root, &["train", "batch_size"], v.into());
        }
        if let Some(v) = self.max_epochs {
            set(root, &["train", "max_epochs"], v.into());
        }
        if let Some(v) = self.patience {
            set(root, &["train", "early_stop_patience"], v.into());
        }
        if let Some(v) = self.learning_rate {
            set(root, &["train", "adam", "learning_rate"], v.into());
        }
        if let Some(v) = self.train_ratio {
            set(root, &["split", "train_ratio"], v.into());
        }
        if let Some(v) = self.val_ratio {
            set(root, &["split", "val_ratio"], v.into());
        }
        if let Some(k) = self.provider {
            set(root, &["provider", "kind"], serde_json::to_value(k).expect("enum serializes"));
        }
        if let Some(u) = &self.remote_url {
            set(root, &["provider", "remote_url"], Value::String(u.clone()));
        }
    }
}

/// Reads a TOML or JSON config file. A run manifest is accepted too: its
/// `resolved` section is the config.
pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    let value: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
    } else {
        let t: toml::Value =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(CliError::Validation(format!("{}: top level must be a table", path.display())));
    }
    Ok(match value.get("resolved") {
        Some(resolved) => resolved.clone(),
        None => value,
    })
}

/// Every key in `given` that has no counterpart in `reference`, as dotted paths.
/// Unset options (null in the reference) and the tagged backbone enum are not descended into.
fn unknown_keys(given: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Some(g), Some(r)) = (given.as_object(), reference.as_object()) else {
        return;
    };
    for (k, v) in g {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            None => out.push(format!("{path}: unknown key")),
            Some(rv) if rv.is_object() && path != "model.backbone" => unknown_keys(v, rv, &path, out),
            Some(_) => {}
        }
    }
}

fn merge(base: &mut Value, layer: &Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, l) => *b = l.clone(),
    }
}

/// Resolves defaults < file < flags and reports every problem at once.
pub fn resolve_config(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut problems = Vec::new();
    let mut layered = defaults.clone();
    if let Some(path) = file {
        let v = read_config_file(path)?;
        unknown_keys(&v, &defaults, "", &mut problems);
        merge(&mut layered, &v);
    }
    overrides.apply(&mut layered);
    if !problems.is_empty() {
        return Err(CliError::Validation(problems.join("\n")));
    }
    // Deserialize section by section so type errors in several sections are all reported.
    let obj = layered.as_object().expect("object");
    for key in ["split", "model", "train", "provider"] {
        let v = obj.get(key).cloned().unwrap_or(Value::Null);
        let res = match key {
            "split" => serde_json::from_value::<SplitConfig>(v).map(|_| ()),
            "model" => serde_json::from_value::<ModelSection>(v).map(|_| ()),
            "train" => serde_json::from_value::<TrainSection>(v).map(|_| ()),
            _ => serde_json::from_value::<ProviderSection>(v).map(|_| ()),
        };
        if let Err(e) = res {
            problems.push(format!("{key}: {e}"));
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems.join("\n")));
    }
    let cfg: RunConfig = serde_json::from_value(layered).map_err(|e| CliError::Validation(e.to_string()))?;
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(CliError::Validation(v.join("\n")));
    }
    Ok(cfg)
}
