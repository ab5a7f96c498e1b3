use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use mled_core::enhancer::{
    fetch_dataset_embeddings, CacheOnlyProvider, EmbeddingCache, EmbeddingProvider, EnhancerEmbeddings, FetchSource,
    PromptKind, PseudoProvider, RemoteConfig, RemoteProvider, SummaryEndpoint,
};
use mled_core::graph::{
    dataset_fingerprint, generate_synthetic, load_dataset, make_split, save_dataset, DatasetMeta, DatasetStats,
    MultiRelationGraph, SyntheticSpec,
};
use mled_core::metrics::EvalReport;
use mled_core::model::{Mled, ModelConfig};
use mled_core::numerics::ParameterStore;
use mled_core::training::{evaluate, run_experiment, AggregateReport, RunRecord, TrainEvent};

use crate::config::{resolve_config, Overrides, ProviderKind, ProviderSection, RunConfig, API_KEY_ENV};
use crate::manifest::{version_string, PromptEntry, RunManifest};
use crate::CliError;

pub const DEFAULT_CACHE_FILE: &str = "embeddings.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const RECORD_FILE: &str = "record.json";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

pub fn run_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("run-{k}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub out: PathBuf,
    pub name: String,
    pub nodes: usize,
    pub features: usize,
    /// Ignored when `homophily` is given.
    pub relations: usize,
    pub homophily: Option<Vec<f64>>,
    pub avg_degree: f64,
    pub fraud_ratio: f64,
    pub feature_shift: f64,
    pub seed: u64,
}

impl Default for GenerateArgs {
    fn default() -> Self {
        Self {
            out: PathBuf::from("synthetic"),
            name: "synthetic".into(),
            nodes: 2000,
            features: 16,
            relations: 3,
            homophily: None,
            avg_degree: 10.0,
            fraud_ratio: 0.05,
            feature_shift: 0.5,
            seed: 0,
        }
    }
}

impl GenerateArgs {
    /// Explicit homophilies, or `relations` values spread evenly from 0.9 down to 0.3.
    pub fn homophilies(&self) -> Vec<f64> {
        match &self.homophily {
            Some(h) => h.clone(),
            None if self.relations <= 1 => vec![0.9; self.relations],
            None => (0..self.relations)
                .map(|r| 0.9 - 0.6 * r as f64 / (self.relations - 1) as f64)
                .collect(),
        }
    }

    pub fn spec(&self) -> SyntheticSpec {
        let mut spec = SyntheticSpec::new(
            self.nodes,
            self.features,
            self.fraud_ratio,
            self.homophilies(),
            self.avg_degree,
            self.feature_shift,
            self.seed,
        );
        spec.name = self.name.clone();
        spec
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<DatasetStats, CliError> {
    let spec = args.spec();
    let problems = spec.violations();
    if !problems.is_empty() {
        return Err(CliError::Validation(problems.join("\n")));
    }
    let graph = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out)?;
    save_dataset(&graph, &args.out)?;
    Ok(graph.stats())
}

// ---------------------------------------------------- prepare-embeddings

pub fn build_provider(section: &ProviderSection) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    Ok(match section.kind {
        ProviderKind::Pseudo => Box::new(PseudoProvider::new(section.dim, section.seed)),
        ProviderKind::CacheOnly => Box::new(CacheOnlyProvider),
        ProviderKind::Remote => {
            let url = section
                .remote_url
                .clone()
                .ok_or_else(|| CliError::Validation("the remote provider needs --remote-url".into()))?;
            Box::new(RemoteProvider::new(RemoteConfig {
                embed_url: url,
                embed_model: section.embed_model.clone(),
                api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
                summarize: section.summary_url.clone().map(|url| SummaryEndpoint {
                    url,
                    model: section.summary_model.clone(),
                }),
                expected_dim: None,
                timeout: Duration::from_secs(section.timeout_secs),
            }))
        }
    })
}

pub fn read_meta(dataset: &Path) -> Result<DatasetMeta, CliError> {
    let path = dataset.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    meta.validate()?;
    Ok(meta)
}

#[derive(Debug, Clone, Serialize)]
pub struct PreparedPrompt {
    pub kind: PromptKind,
    pub subject: String,
    pub digest: String,
    pub dim: usize,
    pub from_cache: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub prompts: Vec<PreparedPrompt>,
    pub provider_calls: usize,
    pub cache_records: usize,
}

pub fn cmd_prepare_embeddings(
    dataset: &Path,
    provider: &dyn EmbeddingProvider,
    cache_path: &Path,
) -> Result<PrepareSummary, CliError> {
    let meta = read_meta(dataset)?;
    let mut cache = EmbeddingCache::open(cache_path)?;
    let (fetched, _) = fetch_dataset_embeddings(&meta, provider, &mut cache)?;
    let prompts: Vec<PreparedPrompt> = fetched
        .iter()
        .map(|f| PreparedPrompt {
            kind: f.prompt.kind,
            subject: f.prompt.subject_name.clone(),
            digest: f.record.prompt_sha256.clone(),
            dim: f.record.dim,
            from_cache: f.source == FetchSource::Cache,
        })
        .collect();
    let provider_calls = prompts.iter().filter(|p| !p.from_cache).count();
    Ok(PrepareSummary {
        prompts,
        provider_calls,
        cache_records: cache.len(),
    })
}

// ------------------------------------------------------------------ train

/// Dataset, embeddings and model shape shared by train, evaluate and dump.
pub struct Prepared {
    pub dataset_dir: PathBuf,
    pub graph: MultiRelationGraph,
    pub embeddings: EnhancerEmbeddings,
    pub prompts: Vec<PromptEntry>,
    pub model_cfg: ModelConfig,
    pub fingerprint: String,
}

pub fn cache_path(cfg: &RunConfig, dataset: &Path) -> PathBuf {
    cfg.cache.clone().unwrap_or_else(|| dataset.join(DEFAULT_CACHE_FILE))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let dataset_dir = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::Validation("no dataset given (use --dataset or `dataset` in the config)".into()))?;
    let fingerprint = dataset_fingerprint(&dataset_dir)?;
    let graph = load_dataset(&dataset_dir)?;
    let provider = build_provider(&cfg.provider)?;
    let mut cache = EmbeddingCache::open(cache_path(cfg, &dataset_dir))?;
    let (fetched, embeddings) = fetch_dataset_embeddings(graph.meta(), provider.as_ref(), &mut cache)?;
    let prompts = fetched
        .iter()
        .map(|f| PromptEntry {
            kind: match f.prompt.kind {
                PromptKind::TypeLevel => "type".into(),
                PromptKind::RelationLevel => "relation".into(),
            },
            subject: f.prompt.subject_name.clone(),
            digest: f.record.prompt_sha256.clone(),
            provider_id: f.record.provider_id.clone(),
            dim: f.record.dim,
        })
        .collect();
    let model_cfg = cfg.model.to_model_config(
        graph.feature_dim(),
        graph.meta().num_types(),
        graph.num_relations(),
        embeddings.raw_dim(),
    );
    model_cfg.validate()?;
    Ok(Prepared {
        dataset_dir,
        graph,
        embeddings,
        prompts,
        model_cfg,
        fingerprint,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub out: PathBuf,
    /// Extra CSV that receives one appended row per run.
    pub metrics_csv: Option<PathBuf>,
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub runs: Vec<RunRecord>,
    pub aggregate: AggregateReport,
}

const METRICS_HEADER: [&str; 11] = [
    "run",
    "seed",
    "best_epoch",
    "epochs_run",
    "stopped_early",
    "initial_train_loss",
    "final_train_loss",
    "val_aucroc",
    "test_aucroc",
    "test_aucprc",
    "test_f1_macro",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_row(k: usize, r: &RunRecord) -> Vec<String> {
    vec![
        k.to_string(),
        r.seed.to_string(),
        r.best_epoch.to_string(),
        r.epochs.len().to_string(),
        r.stopped_early.to_string(),
        r.initial_train_loss.to_string(),
        opt(r.final_train_loss()),
        opt(r.best_val.aucroc),
        opt(r.test.aucroc),
        opt(r.test.aucprc),
        opt(r.test.f1_macro),
    ]
}

fn write_metrics(path: &Path, runs: &[RunRecord], append: bool) -> Result<(), CliError> {
    let exists = append && path.exists() && fs::metadata(path)?.len() > 0;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| CliError::Io(e.to_string());
    if !exists {
        w.write_record(METRICS_HEADER).map_err(io)?;
    }
    for (k, r) in runs.iter().enumerate() {
        w.write_record(metrics_row(k, r)).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let cfg = resolve_config(args.config.as_deref(), &args.overrides)?;
    let prepared = prepare(&cfg)?;
    let manifest = RunManifest {
        config_path: args.config.clone(),
        resolved: RunConfig {
            dataset: Some(prepared.dataset_dir.clone()),
            cache: Some(cache_path(&cfg, &prepared.dataset_dir)),
            ..cfg.clone()
        },
        dataset_fingerprint: prepared.fingerprint.clone(),
        prompts: prepared.prompts.clone(),
        version: version_string(),
        output_dir: args.out.clone(),
    };
    manifest.write(&args.out)?;

    let verbose = args.verbose;
    let mut observer = |k: usize, ev: TrainEvent<'_>| {
        if let (true, TrainEvent::Epoch(e)) = (verbose, ev) {
            let auc = e.val.as_ref().and_then(|v| v.aucroc).map_or("-".into(), |a| format!("{a:.4}"));
            eprintln!("run {k} epoch {:>4} loss {:.6} val_aucroc {auc}", e.epoch, e.train_loss);
        }
    };
    let (runs, aggregate) = run_experiment(
        &prepared.graph,
        &prepared.embeddings,
        &prepared.model_cfg,
        &cfg.train.to_train_config(cfg.seed),
        cfg.split,
        cfg.repeats,
        cfg.seed,
        Some(&args.out),
        &mut observer,
    )?;
    for (k, r) in runs.iter().enumerate() {
        write_json(&run_dir(&args.out, k).join(RECORD_FILE), r)?;
    }
    write_metrics(&args.out.join(METRICS_FILE), &runs, false)?;
    if let Some(extra) = &args.metrics_csv {
        write_metrics(extra, &runs, true)?;
    }
    write_json(&args.out.join(AGGREGATE_FILE), &aggregate)?;
    Ok(TrainOutcome {
        manifest,
        runs,
        aggregate,
    })
}

// ------------------------------------------------------------------ sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    Lambda,
    Gamma,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: usize,
    pub mean_aucroc: Option<f64>,
    pub std_aucroc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub param: SweepParam,
    pub values: Vec<usize>,
    /// CSV destination; rows are returned either way.
    pub out: Option<PathBuf>,
}

/// One full experiment per value, rows ascending by value.
pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>, CliError> {
    if args.values.is_empty() {
        return Err(CliError::Validation("sweep needs at least one value".into()));
    }
    let mut values = args.values.clone();
    values.sort_unstable();
    values.dedup();
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let mut o = args.overrides.clone();
        match args.param {
            SweepParam::Lambda => o.lambda = Some(v),
            SweepParam::Gamma => o.gamma = Some(v),
        }
        let cfg = resolve_config(args.config.as_deref(), &o)?;
        let p = prepare(&cfg)?;
        let (_, agg) = run_experiment(
            &p.graph,
            &p.embeddings,
            &p.model_cfg,
            &cfg.train.to_train_config(cfg.seed),
            cfg.split,
            cfg.repeats,
            cfg.seed,
            None,
            &mut |_, _| {},
        )?;
        rows.push(SweepRow {
            value: v,
            mean_aucroc: agg.aucroc.mean,
            std_aucroc: agg.aucroc.std,
        });
    }
    if let Some(path) = &args.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(["value", "mean_aucroc", "std_aucroc"]).map_err(io)?;
        for r in &rows {
            w.write_record([r.value.to_string(), opt(r.mean_aucroc), opt(r.std_aucroc)])
                .map_err(io)?;
        }
        w.flush()?;
    }
    Ok(rows)
}

// ------------------------------------------------ evaluate / dump-embeddings

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Train,
    Val,
    Test,
}

/// A trained run reloaded from its output directory.
pub struct LoadedRun {
    pub prepared: Prepared,
    pub model: Mled,
    pub params: ParameterStore,
    pub seed: u64,
    pub config: RunConfig,
}

pub fn load_run(out: &Path, run: usize) -> Result<LoadedRun, CliError> {
    let manifest = RunManifest::read(out)?;
    let mut config = manifest.resolved.clone();
    // Replay only what training saw.
    config.provider.kind = ProviderKind::CacheOnly;
    if run >= config.repeats {
        return Err(CliError::Validation(format!(
            "run {run} does not exist; the manifest lists {} run(s)",
            config.repeats
        )));
    }
    let prepared = prepare(&config)?;
    if prepared.fingerprint != manifest.dataset_fingerprint {
        return Err(CliError::Validation(format!(
            "dataset at {} changed since training (fingerprint {} vs {})",
            prepared.dataset_dir.display(),
            prepared.fingerprint,
            manifest.dataset_fingerprint
        )));
    }
    let model = Mled::new(prepared.model_cfg.clone())?;
    let params = ParameterStore::load(&run_dir(out, run).join(CHECKPOINT_FILE))?;
    Ok(LoadedRun {
        prepared,
        model,
        params,
        seed: config.seed + run as u64,
        config,
    })
}

pub fn cmd_evaluate(out: &Path, run: usize, split: EvalSplit) -> Result<EvalReport, CliError> {
    let r = load_run(out, run)?;
    let g = &r.prepared.graph;
    let s = make_split(g, r.config.split.train_ratio, r.config.split.val_ratio, r.seed)?;
    let ids = match split {
        EvalSplit::Train => &s.train_ids,
        EvalSplit::Val => &s.val_ids,
        EvalSplit::Test => &s.test_ids,
    };
    Ok(evaluate(
        &r.model,
        &r.params,
        g,
        &r.prepared.embeddings,
        ids,
        r.config.train.batch_size,
    )?)
}

/// Writes `node_id,label,f0,…` with the classifier input of every node; unlabeled nodes get label -1.
pub fn cmd_dump_embeddings(out: &Path, run: usize, dest: &Path) -> Result<usize, CliError> {
    let r = load_run(out, run)?;
    let g = &r.prepared.graph;
    let nodes: Vec<usize> = (0..g.num_nodes()).collect();
    let reps = r
        .model
        .representations(&r.params, g, &r.prepared.embeddings, &nodes, r.config.train.batch_size)?;
    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(dest).map_err(|e| CliError::Io(e.to_string()))?;
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut header = vec!["node_id".to_string(), "label".to_string()];
    header.extend((0..reps.cols()).map(|c| format!("f{c}")));
    w.write_record(&header).map_err(io)?;
    for &v in &nodes {
        let mut row = vec![v.to_string(), g.label(v).map_or("-1".into(), |l| l.to_string())];
        row.extend(reps.row(v).iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(nodes.len())
}
