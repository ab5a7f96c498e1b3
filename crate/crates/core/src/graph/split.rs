use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraphError, MultiRelationGraph};

/// Disjoint train/validation/test partition of the labeled nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
    pub train_ratio: f64,
    pub val_ratio: f64,
}

/// Stratified split: each class is shuffled and cut separately, so every split
/// keeps the global class proportions up to rounding. Each class contributes
/// at least one node to every split; ids within a split are ascending.
pub fn make_split(graph: &MultiRelationGraph, train_ratio: f64, val_ratio: f64, seed: u64) -> Result<SplitAssignment, GraphError> {
    if !(train_ratio > 0.0 && val_ratio > 0.0 && train_ratio + val_ratio < 1.0) {
        return Err(GraphError::Split(format!(
            "need 0 < train_ratio, 0 < val_ratio and train_ratio + val_ratio < 1 (got {train_ratio} and {val_ratio})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut members: Vec<usize> = graph.labeled_nodes().filter(|&i| graph.labels()[i] == class).collect();
        let n = members.len();
        if n < 3 {
            let name = if class == 1 { "fraud" } else { "benign" };
            return Err(GraphError::Split(format!(
                "class {name} has {n} labeled nodes; every split needs one, so at least 3 are required (label more nodes or use a larger graph)"
            )));
        }
        members.shuffle(&mut rng);
        let mut n_train = ((train_ratio * n as f64).round() as usize).max(1);
        let mut n_val = ((val_ratio * n as f64).round() as usize).max(1);
        while n_train + n_val >= n {
            if n_train >= n_val && n_train > 1 {
                n_train -= 1;
            } else {
                n_val -= 1;
            }
        }
        train.extend_from_slice(&members[..n_train]);
        val.extend_from_slice(&members[n_train..n_train + n_val]);
        test.extend_from_slice(&members[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment {
        train_ids: train,
        val_ids: val,
        test_ids: test,
        seed,
        train_ratio,
        val_ratio,
    })
}
