//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{NumericsError, ParameterStore, Tensor2};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per block; blocks smaller than this are checked exhaustively.
    pub samples_per_block: usize,
    /// Lower bound on the relative-error denominator, so coordinates whose true
    /// gradient is ~0 are judged by absolute error against finite-difference noise.
    pub magnitude_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_block: 20,
            magnitude_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares analytic gradients with central differences.
///
/// `loss_fn` must zero or overwrite the store's gradient buffers, populate them
/// with the gradient of the returned loss, and be deterministic.
pub fn gradient_check<F, E>(store: &mut ParameterStore, mut loss_fn: F, cfg: &GradCheckConfig) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut ParameterStore) -> Result<f64, E>,
    E: From<NumericsError>,
{
    store.zero_grads();
    let base = loss_fn(store)?;
    let analytic: Vec<(String, Tensor2)> = store.iter().map(|(n, b)| (n.to_string(), b.grad.clone())).collect();
    store.zero_grads();
    let again = loss_fn(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(NumericsError::NonDeterministic { first: base, second: again }.into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut blocks = Vec::with_capacity(analytic.len());
    for (name, grad) in analytic {
        let n = grad.len();
        let mut coords: Vec<usize> = if n <= cfg.samples_per_block {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.samples_per_block).into_vec()
        };
        coords.sort_unstable();

        let mut check = BlockCheck {
            name: name.clone(),
            coordinates: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in coords {
            let original = store.value(&name)?.data()[idx];
            store.value_mut(&name)?.data_mut()[idx] = original + cfg.step;
            let plus = loss_fn(store)?;
            store.value_mut(&name)?.data_mut()[idx] = original - cfg.step;
            let minus = loss_fn(store)?;
            store.value_mut(&name)?.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(cfg.magnitude_floor);
            let rel = (a - numeric).abs() / denom;
            if !(rel <= check.max_rel_error) {
                check.max_rel_error = rel;
                check.worst_index = idx;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        blocks.push(check);
    }
    // Leave the analytic gradient of the unperturbed point in the store.
    store.zero_grads();
    loss_fn(store)?;

    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    let passed = blocks.iter().all(|b| b.max_rel_error <= cfg.tolerance);
    Ok(GradCheckReport {
        blocks,
        max_rel_error,
        tolerance: cfg.tolerance,
        passed,
    })
}
