use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mled_cli::{
    build_provider, cmd_dump_embeddings, cmd_evaluate, cmd_generate, cmd_prepare_embeddings, cmd_sweep, cmd_train,
    resolve_config, CliError, EvalSplit, GenerateArgs, Overrides, ProviderKind, SweepArgs, SweepParam, TrainArgs,
};

#[derive(Parser)]
#[command(name = "mled", version, about = "Multi-relation graph fraud detection with prompt-embedding enhancers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-relation dataset directory.
    Generate(GenerateFlags),
    /// Build every type and relation prompt and fill the embedding cache.
    PrepareEmbeddings(PrepareFlags),
    /// Train and evaluate, writing manifest, checkpoints, records and metrics.
    Train(TrainFlags),
    /// Train once per value of a bottleneck width and tabulate test AUCROC.
    Sweep(SweepFlags),
    /// Re-evaluate a trained run from its output directory.
    Evaluate(EvaluateFlags),
    /// Dump final node representations of a trained run as CSV.
    DumpEmbeddings(DumpFlags),
}

#[derive(Args)]
struct GenerateFlags {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long, default_value_t = 2000)]
    nodes: usize,
    #[arg(long, default_value_t = 16)]
    features: usize,
    #[arg(long, default_value_t = 3)]
    relations: usize,
    /// Comma-separated per-relation homophily; overrides --relations.
    #[arg(long, value_delimiter = ',')]
    homophily: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10.0)]
    avg_degree: f64,
    #[arg(long, default_value_t = 0.05)]
    fraud_ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    feature_shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone, Default)]
struct CommonFlags {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// TOML or JSON config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Type-embedding bottleneck width.
    #[arg(long)]
    lambda: Option<usize>,
    /// Relation-embedding bottleneck width.
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    val_ratio: Option<f64>,
    #[arg(long)]
    no_type_enhancer: bool,
    #[arg(long)]
    no_relation_enhancer: bool,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Embedding endpoint for the remote provider; the API key is read from MLED_API_KEY.
    #[arg(long)]
    remote_url: Option<String>,
}

impl CommonFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            dataset: self.dataset.clone(),
            cache: self.cache.clone(),
            seed: self.seed,
            repeats: self.repeats,
            lambda: self.lambda,
            gamma: self.gamma,
            hidden_dim: self.hidden_dim,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            learning_rate: self.lr,
            train_ratio: self.train_ratio,
            val_ratio: self.val_ratio,
            no_type_enhancer: self.no_type_enhancer,
            no_relation_enhancer: self.no_relation_enhancer,
            provider: self.provider,
            remote_url: self.remote_url.clone(),
        }
    }
}

#[derive(Args)]
struct PrepareFlags {
    #[command(flatten)]
    common: CommonFlags,
}

#[derive(Args)]
struct TrainFlags {
    #[command(flatten)]
    common: CommonFlags,
    #[arg(long)]
    out: PathBuf,
    /// Append one row per run to this CSV as well.
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SweepFlags {
    #[command(flatten)]
    common: CommonFlags,
    #[arg(long, value_enum)]
    param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// CSV destination; the table is printed to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateFlags {
    /// Output directory of `mled train`.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    run: usize,
    #[arg(long, value_enum, default_value = "test")]
    split: EvalSplit,
}

#[derive(Args)]
struct DumpFlags {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    run: usize,
    #[arg(long)]
    out: PathBuf,
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(f) => {
            let stats = cmd_generate(&GenerateArgs {
                out: f.out,
                name: f.name,
                nodes: f.nodes,
                features: f.features,
                relations: f.relations,
                homophily: f.homophily,
                avg_degree: f.avg_degree,
                fraud_ratio: f.fraud_ratio,
                feature_shift: f.feature_shift,
                seed: f.seed,
            })?;
            print_json(&stats);
        }
        Command::PrepareEmbeddings(f) => {
            let cfg = resolve_config(f.common.config.as_deref(), &f.common.overrides())?;
            let dataset = cfg
                .dataset
                .clone()
                .ok_or_else(|| CliError::Validation("no dataset given (use --dataset)".into()))?;
            let provider = build_provider(&cfg.provider)?;
            let cache = mled_cli::cache_path(&cfg, &dataset);
            let summary = cmd_prepare_embeddings(&dataset, provider.as_ref(), &cache)?;
            for p in &summary.prompts {
                let src = if p.from_cache { "cache" } else { "provider" };
                println!("{:?}\t{}\t{}\tdim={}\t{src}", p.kind, p.subject, p.digest, p.dim);
            }
            println!(
                "provider calls: {}; cache records: {} ({})",
                summary.provider_calls,
                summary.cache_records,
                cache.display()
            );
        }
        Command::Train(f) => {
            let outcome = cmd_train(&TrainArgs {
                config: f.common.config.clone(),
                overrides: f.common.overrides(),
                out: f.out,
                metrics_csv: f.metrics_csv,
                verbose: !f.quiet,
            })?;
            print_json(&outcome.aggregate);
        }
        Command::Sweep(f) => {
            let rows = cmd_sweep(&SweepArgs {
                config: f.common.config.clone(),
                overrides: f.common.overrides(),
                param: f.param,
                values: f.values,
                out: f.out,
            })?;
            println!("value,mean_aucroc,std_aucroc");
            for r in rows {
                let s = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                println!("{},{},{}", r.value, s(r.mean_aucroc), s(r.std_aucroc));
            }
        }
        Command::Evaluate(f) => print_json(&cmd_evaluate(&f.run_dir, f.run, f.split)?),
        Command::DumpEmbeddings(f) => {
            let n = cmd_dump_embeddings(&f.run_dir, f.run, &f.out)?;
            eprintln!("wrote {n} rows to {}", f.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mled: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
