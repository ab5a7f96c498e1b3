//! Dataset directory format.
//!
//! ```text
//! meta.json               DatasetMeta
//! features.csv            N rows × D columns, no header
//! labels.csv              node_id,label   (label_semantics.unlabeled marks missing labels)
//! edges_<relation>.csv    src,dst         (any direction, duplicates allowed)
//! ```
//!
//! `labels.csv` and edge files may carry a header line; it is detected by the
//! first row failing to parse as integers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{DatasetMeta, GraphError, MultiRelationGraph, RelationAdjacency};
use crate::numerics::Tensor2;

pub const META_FILE: &str = "meta.json";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";

pub fn edge_file_name(relation: &str) -> String {
    format!("edges_{relation}.csv")
}

fn load_err(path: &Path, reason: impl Into<String>) -> GraphError {
    GraphError::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_text(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|e| load_err(path, e.to_string()))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

/// Reads integer pairs, skipping a leading header row. Returns `(line, a, b)`.
fn read_int_pairs(path: &Path) -> Result<Vec<(usize, i64, i64)>, GraphError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (idx, record) in csv_reader(&text).records().enumerate() {
        let record = record.map_err(|e| load_err(path, e.to_string()))?;
        let line = idx + 1;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() < 2 {
            return Err(load_err(path, format!("line {line}: expected two columns")));
        }
        match (record[0].parse::<i64>(), record[1].parse::<i64>()) {
            (Ok(a), Ok(b)) => out.push((line, a, b)),
            _ if idx == 0 => continue,
            _ => return Err(load_err(path, format!("line {line}: `{}` is not an integer pair", record.as_slice()))),
        }
    }
    Ok(out)
}

/// Loads and validates a dataset directory, symmetrizing and deduplicating every relation.
pub fn load_dataset(dir: &Path) -> Result<MultiRelationGraph, GraphError> {
    let meta_path = dir.join(META_FILE);
    let meta: DatasetMeta = serde_json::from_str(&read_text(&meta_path)?).map_err(|e| load_err(&meta_path, e.to_string()))?;
    meta.validate()?;
    let n = meta.num_nodes;
    let d = meta.feature_dim;

    let feat_path = dir.join(FEATURES_FILE);
    let text = read_text(&feat_path)?;
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0usize;
    for record in csv_reader(&text).records() {
        let record = record.map_err(|e| load_err(&feat_path, e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != d {
            return Err(load_err(&feat_path, format!("row {rows} has {} columns, expected {d}", record.len())));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| load_err(&feat_path, format!("row {rows}, column {col}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(GraphError::NonFiniteFeature { row: rows, col });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows != n {
        return Err(load_err(&feat_path, format!("{rows} feature rows, meta.json declares {n} nodes")));
    }
    let features = Tensor2::from_vec(n, d, data).expect("row count checked");

    let labels_path = dir.join(LABELS_FILE);
    let sem = &meta.label_semantics;
    let mut labels = vec![0u8; n];
    let mut mask = vec![false; n];
    for (line, node, label) in read_int_pairs(&labels_path)? {
        if node < 0 || node as usize >= n {
            return Err(load_err(&labels_path, format!("line {line}: node id {node} is out of range [0, {n})")));
        }
        let node = node as usize;
        if label == sem.unlabeled {
            mask[node] = false;
        } else if label == sem.benign || label == sem.fraud {
            labels[node] = u8::from(label == sem.fraud);
            mask[node] = true;
        } else {
            return Err(load_err(&labels_path, format!("line {line}: unknown label value {label}")));
        }
    }

    let mut relations = Vec::with_capacity(meta.relation_names.len());
    for name in &meta.relation_names {
        let path = dir.join(edge_file_name(name));
        let mut edges = Vec::new();
        for (line, a, b) in read_int_pairs(&path)? {
            for idx in [a, b] {
                if idx < 0 || idx as usize >= n {
                    return Err(GraphError::EdgeOutOfRange {
                        relation: name.clone(),
                        row: line,
                        index: idx,
                        num_nodes: n,
                    });
                }
            }
            edges.push((a as usize, b as usize));
        }
        relations.push(RelationAdjacency::from_edges(n, &edges));
    }

    MultiRelationGraph::new(meta, relations, features, labels, mask)
}

/// Writes a graph in the directory format. Edges are written once per
/// undirected pair, so loading the result reproduces the same adjacency.
pub fn save_dataset(graph: &MultiRelationGraph, dir: &Path) -> Result<(), GraphError> {
    fs::create_dir_all(dir)?;
    let meta = serde_json::to_string_pretty(graph.meta()).map_err(|e| GraphError::Validation(e.to_string()))?;
    fs::write(dir.join(META_FILE), meta + "\n")?;

    let mut w = BufWriter::new(fs::File::create(dir.join(FEATURES_FILE))?);
    let features = graph.features();
    for r in 0..features.rows() {
        let mut first = true;
        for v in features.row(r) {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            // `Display` for f64 prints the shortest string that parses back to the same bits.
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let sem = &graph.meta().label_semantics;
    let mut w = BufWriter::new(fs::File::create(dir.join(LABELS_FILE))?);
    writeln!(w, "node_id,label")?;
    for i in 0..graph.num_nodes() {
        let v = match graph.label(i) {
            Some(1) => sem.fraud,
            Some(_) => sem.benign,
            None => sem.unlabeled,
        };
        writeln!(w, "{i},{v}")?;
    }
    w.flush()?;

    for (r, name) in graph.relation_names().iter().enumerate() {
        let mut w = BufWriter::new(fs::File::create(dir.join(edge_file_name(name)))?);
        writeln!(w, "src,dst")?;
        for (a, b) in graph.relation(r).undirected_edges() {
            writeln!(w, "{a},{b}")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// SHA-256 over the meta file bytes plus the name and size of every data file.
pub fn dataset_fingerprint(dir: &Path) -> Result<String, GraphError> {
    let meta_path = dir.join(META_FILE);
    let meta_bytes = fs::read(&meta_path).map_err(|e| load_err(&meta_path, e.to_string()))?;
    let meta: DatasetMeta = serde_json::from_slice(&meta_bytes).map_err(|e| load_err(&meta_path, e.to_string()))?;
    let mut files: Vec<PathBuf> = vec![dir.join(FEATURES_FILE), dir.join(LABELS_FILE)];
    files.extend(meta.relation_names.iter().map(|r| dir.join(edge_file_name(r))));
    let mut hasher = Sha256::new();
    hasher.update(&meta_bytes);
    for f in files {
        let len = fs::metadata(&f).map_err(|e| load_err(&f, e.to_string()))?.len();
        let name = f.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        hasher.update(name.as_bytes());
        hasher.update(len.to_le_bytes());
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn fixture(dir: &Path) {
        write(
            dir,
            META_FILE,
            r#"{"name":"fx","num_nodes":4,"feature_dim":2,"relation_names":["A","B"],"node_type_names":["user"]}"#,
        );
        write(dir, FEATURES_FILE, "0.5,1\n-2,3.25\n0,0\n1e-3,7\n");
        write(dir, LABELS_FILE, "node_id,label\n0,0\n1,1\n2,-1\n3,0\n");
        write(dir, &edge_file_name("A"), "src,dst\n0,1\n1,0\n1,2\n2,2\n");
        write(dir, &edge_file_name("B"), "");
    }

    #[test]
    fn loads_fixture_with_empty_relation() {
        let tmp = tempfile::tempdir().unwrap();
        fixture(tmp.path());
        let g = load_dataset(tmp.path()).unwrap();
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.relation(0).neighbors(1), &[0, 2]);
        assert_eq!(g.relation(0).num_edges(), 2);
        assert!((0..4).all(|i| g.relation(1).neighbors(i).is_empty()));
        assert_eq!(g.label(1), Some(1));
        assert_eq!(g.label(2), None);
        assert_eq!(g.features().get(1, 1), 3.25);
    }

    #[test]
    fn missing_file_is_descriptive() {
        let tmp = tempfile::tempdir().unwrap();
        fixture(tmp.path());
        fs::remove_file(tmp.path().join(edge_file_name("B"))).unwrap();
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("edges_B.csv"), "{err}");
    }

    #[test]
    fn out_of_range_edge_names_relation_and_row() {
        let tmp = tempfile::tempdir().unwrap();
        fixture(tmp.path());
        write(tmp.path(), &edge_file_name("B"), "src,dst\n0,1\n3,9\n");
        match load_dataset(tmp.path()) {
            Err(GraphError::EdgeOutOfRange { relation, row, index, .. }) => {
                assert_eq!((relation.as_str(), row, index), ("B", 3, 9));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_feature_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        fixture(tmp.path());
        write(tmp.path(), FEATURES_FILE, "0.5,1\n-2,inf\n0,0\n1,7\n");
        assert!(matches!(load_dataset(tmp.path()), Err(GraphError::NonFiniteFeature { row: 1, col: 1 })));
    }

    #[test]
    fn save_then_load_is_identical() {
        let tmp = tempfile::tempdir().unwrap();
        fixture(tmp.path());
        let g = load_dataset(tmp.path()).unwrap();
        let out = tmp.path().join("copy");
        save_dataset(&g, &out).unwrap();
        let back = load_dataset(&out).unwrap();
        assert_eq!(back, g);
        assert_eq!(dataset_fingerprint(&out).unwrap(), dataset_fingerprint(&out).unwrap());
    }
}
