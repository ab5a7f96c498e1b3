use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mled_core::graph::{load_dataset, make_split, save_dataset, DatasetMeta, LabelSemantics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn meta(name: &str, n: usize, d: usize, relations: &[&str], types: &[&str]) -> DatasetMeta {
    DatasetMeta {
        name: name.into(),
        num_nodes: n,
        feature_dim: d,
        relation_names: relations.iter().map(|s| s.to_string()).collect(),
        node_type_names: types.iter().map(|s| s.to_string()).collect(),
        label_semantics: LabelSemantics::default(),
        node_type_descriptions: BTreeMap::new(),
        relation_descriptions: BTreeMap::new(),
    }
}

/// Writes a raw dataset directory with `fraud` fraud labels and noisy edge
/// lists (both directions, duplicates, self-loops). Returns the expected
/// undirected edge count per relation.
fn write_fixture(dir: &Path, m: &DatasetMeta, fraud: usize, edges_per_relation: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.num_nodes;
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(m).unwrap()).unwrap();
    let mut features = String::new();
    for _ in 0..n {
        let row: Vec<String> = (0..m.feature_dim).map(|_| format!("{}", rng.random_range(-1.0..1.0f64))).collect();
        writeln!(features, "{}", row.join(",")).unwrap();
    }
    fs::write(dir.join("features.csv"), features).unwrap();
    let mut labels = String::from("node_id,label\n");
    // Fraud nodes spread evenly through the id range.
    let fraud_ids: BTreeSet<usize> = (0..fraud).map(|k| k * n / fraud).collect();
    assert_eq!(fraud_ids.len(), fraud);
    for i in 0..n {
        writeln!(labels, "{i},{}", u8::from(fraud_ids.contains(&i))).unwrap();
    }
    fs::write(dir.join("labels.csv"), labels).unwrap();
    let mut expected = Vec::new();
    for rel in &m.relation_names {
        let mut text = String::from("src,dst\n");
        let mut unique = BTreeSet::new();
        for _ in 0..edges_per_relation {
            let a = rng.random_range(0..n);
            let b = if rng.random_bool(0.02) { a } else { rng.random_range(0..n) };
            writeln!(text, "{a},{b}").unwrap();
            if rng.random_bool(0.3) {
                writeln!(text, "{b},{a}").unwrap();
            }
            if a != b {
                unique.insert((a.min(b), a.max(b)));
            }
        }
        fs::write(dir.join(format!("edges_{rel}.csv")), text).unwrap();
        expected.push(unique.len());
    }
    expected
}

#[test]
fn amazon_shaped_fixture_loads_with_table_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let m = meta("Amazon", 11_944, 25, &["U-P-U", "U-S-U", "U-V-U"], &["user"]);
    let expected = write_fixture(tmp.path(), &m, 821, 20_000, 1);
    let g = load_dataset(tmp.path()).unwrap();
    let stats = g.stats();
    assert_eq!(stats.num_nodes, 11_944);
    assert_eq!(stats.fraud, 821);
    assert_eq!(format!("{:.2}", stats.fraud_percent), "6.87");
    let counts: Vec<usize> = stats.relation_edges.iter().map(|(_, c)| *c).collect();
    assert_eq!(counts, expected);
    for r in 0..g.num_relations() {
        let adj = g.relation(r);
        for v in 0..g.num_nodes() {
            let nb = adj.neighbors(v);
            assert!(nb.windows(2).all(|w| w[0] < w[1]) && !nb.contains(&v));
            assert!(nb.iter().all(|&u| adj.neighbors(u).binary_search(&v).is_ok()));
        }
    }
    let split = make_split(&g, 0.01, 0.10, 7).unwrap();
    assert_eq!(split.train_ids.len() + split.val_ids.len() + split.test_ids.len(), 11_944);
}

#[test]
fn yelpchi_shaped_fixture_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let m = meta("YelpChi", 4_595, 32, &["R-U-R", "R-T-R", "R-S-R"], &["review"]);
    write_fixture(tmp.path(), &m, 668, 8_000, 2);
    let g = load_dataset(tmp.path()).unwrap();
    assert_eq!(g.relation_names(), ["R-U-R", "R-T-R", "R-S-R"]);
    let out = tempfile::tempdir().unwrap();
    save_dataset(&g, out.path()).unwrap();
    let back = load_dataset(out.path()).unwrap();
    assert_eq!(back.stats(), g.stats());
    assert_eq!(back.features(), g.features());
    assert_eq!(back.labels(), g.labels());
}

#[test]
fn out_of_range_edge_names_relation_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let m = meta("tiny", 5, 2, &["a"], &["user"]);
    write_fixture(tmp.path(), &m, 2, 4, 3);
    fs::write(tmp.path().join("edges_a.csv"), "src,dst\n0,1\n2,9\n").unwrap();
    let err = load_dataset(tmp.path()).unwrap_err().to_string();
    assert!(err.contains("`a`") && err.contains("row 3") && err.contains('9'), "{err}");
}

/// Real-data checks; set `MLED_AMAZON_DIR` / `MLED_YELPCHI_DIR` to dataset directories.
fn real_dir(var: &str) -> Option<PathBuf> {
    std::env::var_os(var).map(PathBuf::from).filter(|p| p.join("meta.json").exists())
}

#[test]
fn real_amazon_counts() {
    let Some(dir) = real_dir("MLED_AMAZON_DIR") else { return };
    let s = load_dataset(&dir).unwrap().stats();
    assert_eq!((s.num_nodes, s.fraud), (11_944, 821));
}

#[test]
fn real_yelpchi_counts() {
    let Some(dir) = real_dir("MLED_YELPCHI_DIR") else { return };
    let s = load_dataset(&dir).unwrap().stats();
    assert_eq!((s.num_nodes, s.fraud), (45_954, 6_677));
    let rur = s.relation_edges.iter().find(|(n, _)| n == "R-U-R").unwrap().1;
    assert_eq!(rur, 49_315);
}
