use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mled_cli::config::ProviderSection;
use mled_cli::{
    build_provider, cmd_dump_embeddings, cmd_evaluate, cmd_generate, cmd_prepare_embeddings, cmd_sweep, cmd_train,
    run_dir, CliError, EvalSplit, GenerateArgs, Overrides, ProviderKind, RunManifest, SweepArgs, SweepParam,
    TrainArgs, CHECKPOINT_FILE, METRICS_FILE,
};

fn small_dataset(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join("ds");
    cmd_generate(&GenerateArgs {
        out: out.clone(),
        name: "tiny".into(),
        nodes: 300,
        features: 6,
        relations: 3,
        homophily: None,
        avg_degree: 6.0,
        fraud_ratio: 0.1,
        feature_shift: 0.8,
        seed,
    })
    .unwrap();
    out
}

fn pseudo_section(dim: usize) -> ProviderSection {
    ProviderSection {
        kind: ProviderKind::Pseudo,
        dim,
        ..ProviderSection::default()
    }
}

fn fast_overrides(dataset: &Path) -> Overrides {
    Overrides {
        dataset: Some(dataset.to_path_buf()),
        train_ratio: Some(0.4),
        val_ratio: Some(0.2),
        max_epochs: Some(4),
        batch_size: Some(64),
        hidden_dim: Some(8),
        lambda: Some(4),
        gamma: Some(4),
        ..Overrides::default()
    }
}

fn prepared_dataset(dir: &Path) -> PathBuf {
    let ds = small_dataset(dir, 3);
    let provider = build_provider(&pseudo_section(32)).unwrap();
    cmd_prepare_embeddings(&ds, provider.as_ref(), &ds.join("embeddings.jsonl")).unwrap();
    ds
}

fn train_args(ds: &Path, out: PathBuf) -> TrainArgs {
    TrainArgs {
        overrides: fast_overrides(ds),
        out,
        ..TrainArgs::default()
    }
}

fn mled() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mled"))
}

#[test]
fn generate_is_byte_identical_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = small_dataset(a.path(), 11);
    let db = small_dataset(b.path(), 11);
    let mut names: Vec<String> = fs::read_dir(&da)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.starts_with("edges_")).count(), 3);
    for n in &names {
        assert_eq!(fs::read(da.join(n)).unwrap(), fs::read(db.join(n)).unwrap(), "{n} differs");
    }
}

#[test]
fn prepare_counts_provider_calls_cold_then_warm() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 1);
    let provider = build_provider(&pseudo_section(32)).unwrap();
    let cache = ds.join("embeddings.jsonl");
    let cold = cmd_prepare_embeddings(&ds, provider.as_ref(), &cache).unwrap();
    let num_types = mled_cli::read_meta(&ds).unwrap().num_types();
    assert_eq!(cold.provider_calls, num_types + 3);
    let warm = cmd_prepare_embeddings(&ds, provider.as_ref(), &cache).unwrap();
    assert_eq!(warm.provider_calls, 0);
    assert_eq!(warm.cache_records, num_types + 3);
    let cold_digests: Vec<_> = cold.prompts.iter().map(|p| &p.digest).collect();
    let warm_digests: Vec<_> = warm.prompts.iter().map(|p| &p.digest).collect();
    assert_eq!(cold_digests, warm_digests);
}

#[test]
fn corrupted_cache_line_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = prepared_dataset(dir.path());
    let cache = ds.join("embeddings.jsonl");
    let mut text = fs::read_to_string(&cache).unwrap();
    text.push_str("{\"prompt_sha256\": \"abc\", truncated\n");
    fs::write(&cache, text).unwrap();
    let provider = build_provider(&pseudo_section(32)).unwrap();
    let err = cmd_prepare_embeddings(&ds, provider.as_ref(), &cache).unwrap_err();
    assert!(matches!(err, CliError::Validation(_)), "{err}");
}

#[test]
fn train_echoes_bottlenecks_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = prepared_dataset(dir.path());
    let out = dir.path().join("run");
    let mut args = train_args(&ds, out.clone());
    args.overrides.lambda = Some(8);
    args.overrides.gamma = Some(16);
    let outcome = cmd_train(&args).unwrap();
    let manifest = RunManifest::read(&out).unwrap();
    assert_eq!(manifest, outcome.manifest);
    assert_eq!(manifest.resolved.model.type_bottleneck, 8);
    assert_eq!(manifest.resolved.model.relation_bottleneck, 16);
    assert_eq!(manifest.prompts.len(), 5);
    assert_eq!(manifest.dataset_fingerprint.len(), 64);
    assert!(run_dir(&out, 0).join(CHECKPOINT_FILE).exists());
    let metrics = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(metrics.starts_with("run,seed,best_epoch"));
}

#[test]
fn missing_cache_entry_fails_with_provider_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 2);
    let out = dir.path().join("run");
    let err = cmd_train(&train_args(&ds, out.clone())).unwrap_err();
    assert!(matches!(err, CliError::Provider(_)), "{err}");
    let digest = err.to_string();
    assert!(digest.chars().filter(|c| c.is_ascii_hexdigit()).count() >= 64, "{digest}");

    let status = mled()
        .args(["train", "--quiet", "--dataset"])
        .arg(&ds)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&status.stderr).contains("provider error"));
}

#[test]
fn invalid_flags_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let ds = prepared_dataset(dir.path());
    let out = mled()
        .args(["train", "--quiet", "--lambda", "0", "--train-ratio", "0.95", "--dataset"])
        .arg(&ds)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("type_bottleneck"), "{err}");
    assert!(err.contains("ratio"), "{err}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nhiden_dim = 3\n").unwrap();
    let out = mled().args(["train", "--quiet", "--config"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.hiden_dim"));
}

#[test]
fn repeats_produce_one_row_per_seed_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let ds = prepared_dataset(dir.path());
    let out = dir.path().join("run");
    let extra = dir.path().join("all.csv");
    let mut args = train_args(&ds, out.clone());
    args.overrides.repeats = Some(3);
    args.overrides.seed = Some(10);
    args.metrics_csv = Some(extra.clone());
    let outcome = cmd_train(&args).unwrap();
    assert_eq!(outcome.aggregate.seeds, vec![10, 11, 12]);
    assert_eq!(fs::read_to_string(out.join(METRICS_FILE)).unwrap().lines().count(), 4);
    cmd_train(&args).unwrap();
    // the extra CSV is appended to, with a single header
    let appended = fs::read_to_string(&extra).unwrap();
    assert_eq!(appended.lines().count(), 7);
    assert_eq!(appended.lines().filter(|l| l.starts_with("run,")).count(), 1);
    let aucs: Vec<f64> = outcome.runs.iter().filter_map(|r| r.test.aucroc).collect();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((outcome.aggregate.aucroc.mean.unwrap() - mean).abs() < 1e-12);
}

#[test]
fn sweep_rows_are_sorted_and_match_direct_training() {
    let dir = tempfile::tempdir().unwrap();
    let ds = prepared_dataset(dir.path());
    let csv_out = dir.path().join("sweep.csv");
    let rows = cmd_sweep(&SweepArgs {
        config: None,
        overrides: fast_overrides(&ds),
        param: SweepParam::Gamma,
        values: vec![8, 2, 8, 4],
        out: Some(csv_out.clone()),
    })
    .unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![2, 4, 8]);
    let text = fs::read_to_string(&csv_out).unwrap();
    assert_eq!(text.lines().next(), Some("value,mean_aucroc,std_aucroc"));
    assert_eq!(text.lines().count(), 4);

    let mut args = train_args(&ds, dir.path().join("direct"));
    args.overrides.gamma = Some(4);
    let direct = cmd_train(&args).unwrap();
    assert_eq!(rows[1].mean_aucroc, direct.aggregate.aucroc.mean);
}

#[test]
fn evaluate_and_dump_reproduce_the_trained_run() {
    let dir = tempfile::tempdir().unwrap();
    let ds = prepared_dataset(dir.path());
    let out = dir.path().join("run");
    let outcome = cmd_train(&train_args(&ds, out.clone())).unwrap();
    let test = cmd_evaluate(&out, 0, EvalSplit::Test).unwrap();
    assert_eq!(test, outcome.runs[0].test);
    let val = cmd_evaluate(&out, 0, EvalSplit::Val).unwrap();
    assert_eq!(val, outcome.runs[0].best_val);

    let dump = dir.path().join("emb.csv");
    assert_eq!(cmd_dump_embeddings(&out, 0, &dump).unwrap(), 300);
    let text = fs::read_to_string(&dump).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 2 + 8);
    assert_eq!(text.lines().count(), 301);

    assert!(matches!(cmd_evaluate(&out, 5, EvalSplit::Test), Err(CliError::Validation(_))));
}

#[test]
fn manifest_reruns_the_same_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let ds = prepared_dataset(dir.path());
    let first = dir.path().join("first");
    cmd_train(&train_args(&ds, first.clone())).unwrap();
    let second = dir.path().join("second");
    cmd_train(&TrainArgs {
        config: Some(first.join("manifest.json")),
        out: second.clone(),
        ..TrainArgs::default()
    })
    .unwrap();
    assert_eq!(
        fs::read(first.join(METRICS_FILE)).unwrap(),
        fs::read(second.join(METRICS_FILE)).unwrap()
    );
    assert_eq!(
        fs::read(run_dir(&first, 0).join(CHECKPOINT_FILE)).unwrap(),
        fs::read(run_dir(&second, 0).join(CHECKPOINT_FILE)).unwrap()
    );
}

#[test]
fn binary_generate_prints_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = mled()
        .args(["generate", "--nodes", "120", "--features", "4", "--homophily", "0.8,0.2", "--avg-degree", "3", "--out"])
        .arg(dir.path().join("g"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["num_nodes"], 120);
    assert_eq!(stats["relation_edges"].as_array().unwrap().len(), 2);
}
