//! Mini-batch training with early stopping on validation AUCROC, evaluation,
//! and multi-seed experiments.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::enhancer::EnhancerEmbeddings;
use crate::graph::{make_split, GraphError, MultiRelationGraph, SplitAssignment};
use crate::metrics::{EvalReport, MetricsError, ScoredLabels};
use crate::model::{ForwardTrace, Mled, ModelConfig, ModelError};
use crate::numerics::{adam_step, AdamConfig, ClassWeights, NumericsError, ParameterStore};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("optimizer step failed at epoch {epoch}, batch {batch}: {source}")]
    Step {
        epoch: usize,
        batch: usize,
        source: NumericsError,
    },
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: NumericsError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeighting {
    #[default]
    None,
    /// Class `c` weighs `n_train / (2 · n_c)`.
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub eval_every: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_epochs: 300,
            early_stop_patience: 30,
            eval_every: 1,
            adam: AdamConfig::default(),
            seed: 0,
            class_weighting: ClassWeighting::None,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                out.push(format!("{name} must be >= 1"));
            }
        }
        out.extend(self.adam.violations().into_iter().map(|(k, r)| format!("adam.{k} {r}")));
        out
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    /// Present on evaluation epochs.
    pub val: Option<EvalReport>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Full-train-set loss of the initial parameters, before any update.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: EvalReport,
    pub best_checkpoint: Option<PathBuf>,
    pub stopped_early: bool,
    pub test: EvalReport,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub split_sizes: [usize; 3],
}

impl RunRecord {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Progress notifications. `Batch` carries the trace of the step, after backward.
pub enum TrainEvent<'a> {
    Batch {
        epoch: usize,
        batch: usize,
        loss: f64,
        trace: &'a ForwardTrace,
    },
    Epoch(&'a EpochRecord),
}

/// Everything a run consumes besides its configs.
#[derive(Clone, Copy)]
pub struct TrainInputs<'a> {
    pub graph: &'a MultiRelationGraph,
    pub split: &'a SplitAssignment,
    pub embeddings: &'a EnhancerEmbeddings,
}

fn class_weights(graph: &MultiRelationGraph, ids: &[usize], mode: ClassWeighting) -> ClassWeights {
    match mode {
        ClassWeighting::None => None,
        ClassWeighting::InverseFrequency => {
            let fraud = ids.iter().filter(|&&i| graph.labels()[i] == 1).count();
            let counts = [ids.len() - fraud, fraud];
            if counts.contains(&0) {
                return None;
            }
            let n = ids.len() as f64;
            Some([n / (2.0 * counts[0] as f64), n / (2.0 * counts[1] as f64)])
        }
    }
}

/// Metrics of `params` on `node_ids`, run forward in chunks of `batch_size`.
pub fn evaluate(
    model: &Mled,
    params: &ParameterStore,
    graph: &MultiRelationGraph,
    embeddings: &EnhancerEmbeddings,
    node_ids: &[usize],
    batch_size: usize,
) -> Result<EvalReport, TrainError> {
    if node_ids.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let mut labels = Vec::with_capacity(node_ids.len());
    for &i in node_ids {
        match graph.label(i) {
            Some(l) => labels.push(l),
            None => return Err(ModelError::Input(format!("evaluation node {i} is unlabeled")).into()),
        }
    }
    let scores = model.predict(params, graph, embeddings, node_ids, batch_size)?;
    Ok(EvalReport::from_scores(&ScoredLabels::new(scores, labels)?))
}

fn better(candidate: Option<f64>, best: Option<f64>) -> bool {
    match (candidate, best) {
        (Some(c), Some(b)) => c > b,
        (Some(_), None) => true,
        (None, _) => false,
    }
}

/// Trains one model from `init_params(train_cfg.seed)`.
///
/// Returns the record and the restored best parameters. When `checkpoint` is
/// given, the best parameters are also written there whenever they improve.
pub fn train(
    inputs: TrainInputs<'_>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<(RunRecord, ParameterStore), TrainError> {
    let model = Mled::new(model_cfg.clone())?;
    let store = model.init_params(train_cfg.seed);
    train_from(inputs, &model, store, train_cfg, checkpoint, observer)
}

/// Like [`train`] but starting from caller-provided parameters.
pub fn train_from(
    inputs: TrainInputs<'_>,
    model: &Mled,
    mut store: ParameterStore,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<(RunRecord, ParameterStore), TrainError> {
    cfg.validate()?;
    let TrainInputs { graph, split, embeddings } = inputs;
    if split.train_ids.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.val_ids.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if split.test_ids.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let weights = class_weights(graph, &split.train_ids, cfg.class_weighting);
    let initial_train_loss = {
        let mut total = 0.0;
        let mut weight = 0.0;
        // Chunked, weighted by chunk size so it equals the full-set mean when unweighted.
        for part in split.train_ids.chunks(cfg.batch_size) {
            let w = match weights {
                None => part.len() as f64,
                Some(cw) => part.iter().map(|&i| cw[graph.labels()[i] as usize]).sum(),
            };
            total += w * model.loss(&store, graph, embeddings, part, weights)?;
            weight += w;
        }
        total / weight
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = split.train_ids.clone();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, EvalReport, ParameterStore)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            store.zero_grads();
            let (loss, trace) = model.loss_and_grads(&mut store, graph, embeddings, batch, weights)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            observer(TrainEvent::Batch {
                epoch,
                batch: bi,
                loss,
                trace: &trace,
            });
            adam_step(&mut store, &cfg.adam).map_err(|source| TrainError::Step {
                epoch,
                batch: bi,
                source,
            })?;
            loss_sum += loss;
            batches += 1;
        }
        let val = if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            Some(evaluate(model, &store, graph, embeddings, &split.val_ids, cfg.batch_size)?)
        } else {
            None
        };
        if let Some(report) = &val {
            let improved = match &best {
                None => true,
                Some((_, b, _)) => better(report.aucroc, b.aucroc),
            };
            if improved {
                if let Some(path) = checkpoint {
                    store.save(path).map_err(|source| TrainError::Checkpoint {
                        path: path.to_path_buf(),
                        source,
                    })?;
                }
                best = Some((epoch, report.clone(), store.clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        observer(TrainEvent::Epoch(&record));
        epochs.push(record);
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= cfg.early_stop_patience && epoch < cfg.max_epochs {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, best_val, best_store) = best.expect("the last epoch is always evaluated");
    store.restore_values(&best_store).map_err(ModelError::from)?;
    let test = evaluate(model, &store, graph, embeddings, &split.test_ids, cfg.batch_size)?;
    let record = RunRecord {
        seed: cfg.seed,
        initial_train_loss,
        epochs,
        best_epoch,
        best_val,
        best_checkpoint: checkpoint.map(Path::to_path_buf),
        stopped_early,
        test,
        model_config: model.config().clone(),
        train_config: cfg.clone(),
        split_sizes: [split.train_ids.len(), split.val_ids.len(), split.test_ids.len()],
    };
    Ok((record, store))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub val_ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.01,
            val_ratio: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Mean over the runs where the metric is defined.
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single defined value.
    pub std: Option<f64>,
    pub defined: usize,
}

impl MetricSummary {
    /// Order-independent: values are sorted before summation.
    pub fn from_values(values: &[Option<f64>]) -> Self {
        let mut v: Vec<f64> = values.iter().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return Self {
                mean: None,
                std: None,
                defined: 0,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
            dev.sort_by(f64::total_cmp);
            (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            mean: Some(mean),
            std: Some(std),
            defined: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub aucroc: MetricSummary,
    pub aucprc: MetricSummary,
    pub f1_macro: MetricSummary,
}

impl AggregateReport {
    pub fn from_runs(runs: &[RunRecord]) -> Self {
        let pick = |f: fn(&EvalReport) -> Option<f64>| -> Vec<Option<f64>> { runs.iter().map(|r| f(&r.test)).collect() };
        Self {
            repeats: runs.len(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            aucroc: MetricSummary::from_values(&pick(|e| e.aucroc)),
            aucprc: MetricSummary::from_values(&pick(|e| e.aucprc)),
            f1_macro: MetricSummary::from_values(&pick(|e| e.f1_macro)),
        }
    }
}

/// Runs seeds `base_seed..base_seed + repeats`. Each seed draws its own split
/// and initial parameters. `checkpoint_dir`, when set, receives `run-{k}/best.ckpt`.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    graph: &MultiRelationGraph,
    embeddings: &EnhancerEmbeddings,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    split_cfg: SplitConfig,
    repeats: usize,
    base_seed: u64,
    checkpoint_dir: Option<&Path>,
    observer: &mut dyn FnMut(usize, TrainEvent<'_>),
) -> Result<(Vec<RunRecord>, AggregateReport), TrainError> {
    if repeats == 0 {
        return Err(TrainError::Config("repeats must be >= 1".into()));
    }
    let mut runs = Vec::with_capacity(repeats);
    for k in 0..repeats {
        let seed = base_seed + k as u64;
        let split = make_split(graph, split_cfg.train_ratio, split_cfg.val_ratio, seed)?;
        let cfg = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let ckpt = match checkpoint_dir {
            Some(dir) => {
                let run_dir = dir.join(format!("run-{k}"));
                std::fs::create_dir_all(&run_dir).map_err(|e| TrainError::Checkpoint {
                    path: run_dir.clone(),
                    source: e.into(),
                })?;
                Some(run_dir.join("best.ckpt"))
            }
            None => None,
        };
        let inputs = TrainInputs {
            graph,
            split: &split,
            embeddings,
        };
        let (record, _) = train(inputs, model_cfg, &cfg, ckpt.as_deref(), &mut |ev| observer(k, ev))?;
        runs.push(record);
    }
    let aggregate = AggregateReport::from_runs(&runs);
    Ok((runs, aggregate))
}
