use serde::{Deserialize, Serialize};

use super::{NumericsError, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Lists every violated constraint as `(field, reason)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        // lr = 0 is accepted: it turns the optimizer into the identity, which
        // the determinism checks rely on.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            out.push(("learning_rate", format!("must be a finite value >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            out.push(("beta1", format!("must lie in [0, 1), got {}", self.beta1)));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            out.push(("beta2", format!("must lie in [0, 1), got {}", self.beta2)));
        }
        if !(self.epsilon > 0.0) {
            out.push(("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        out
    }
}

/// One bias-corrected Adam update over every unfrozen block, then zeroes all gradients.
///
/// Gradients are checked for finiteness before any block is touched, so a
/// failed step leaves the store as it was.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) -> Result<(), NumericsError> {
    for (name, block) in store.iter() {
        if !block.grad.all_finite() {
            return Err(NumericsError::NonFiniteGradient(name.to_string()));
        }
    }
    store.bump_step();
    let t = store.step_count() as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (_, block) in store.iter_mut() {
        if block.frozen {
            block.grad.fill(0.0);
            continue;
        }
        let g = block.grad.data();
        let m = block.adam_m.data_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = block.adam_v.data_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (block.adam_m.data(), block.adam_v.data());
        let values = block.value.data_mut();
        for i in 0..values.len() {
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        block.grad.fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor2;

    fn scalar_store(v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("x", Tensor2::filled(1, 1, v)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_values_unchanged() {
        let mut s = scalar_store(0.37);
        s.insert("w", Tensor2::filled(2, 3, -1.25)).unwrap();
        let before = s.clone();
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert!(s.values_bitwise_eq(&before));
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² on the first step, so the update is lr·g/(|g|+eps).
        let mut s = scalar_store(1.0);
        s.block_mut("x").unwrap().grad = Tensor2::filled(1, 1, 1.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &cfg).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((s.scalar("x").unwrap() - expected).abs() < 1e-15);
        assert_eq!(s.block("x").unwrap().grad.data(), &[0.0]);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut s = scalar_store(0.5);
        let before = s.clone();
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        for k in 0..5 {
            s.block_mut("x").unwrap().grad = Tensor2::filled(1, 1, 0.3 * k as f64 - 0.4);
            adam_step(&mut s, &cfg).unwrap();
        }
        assert!(s.values_bitwise_eq(&before));
    }

    #[test]
    fn frozen_blocks_do_not_move() {
        let mut s = scalar_store(2.0);
        s.set_frozen("x", true).unwrap();
        s.block_mut("x").unwrap().grad = Tensor2::filled(1, 1, 5.0);
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.scalar("x").unwrap(), 2.0);
        assert_eq!(s.block("x").unwrap().grad.data(), &[0.0]);
    }

    #[test]
    fn non_finite_gradient_names_the_block() {
        let mut s = scalar_store(2.0);
        s.insert("bad.block", Tensor2::zeros(1, 2)).unwrap();
        s.block_mut("bad.block").unwrap().grad = Tensor2::row_vector(&[0.0, f64::NAN]);
        let before = s.clone();
        match adam_step(&mut s, &AdamConfig::default()) {
            Err(NumericsError::NonFiniteGradient(name)) => assert_eq!(name, "bad.block"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(s.values_bitwise_eq(&before));
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut s = scalar_store(0.1);
            s.insert("w", Tensor2::from_rows(&[&[0.2, -0.3], &[1.5, 0.0]])).unwrap();
            for k in 0..10 {
                let kf = k as f64;
                s.block_mut("x").unwrap().grad = Tensor2::filled(1, 1, (kf * 0.7).sin());
                s.block_mut("w").unwrap().grad = Tensor2::from_rows(&[&[kf, -kf], &[0.5, kf.cos()]]);
                adam_step(&mut s, &AdamConfig::default()).unwrap();
            }
            s
        };
        assert!(run().values_bitwise_eq(&run()));
    }

    #[test]
    fn config_violations_are_listed() {
        let bad = AdamConfig {
            learning_rate: -1.0,
            beta1: 1.0,
            beta2: 0.5,
            epsilon: 0.0,
        };
        let fields: Vec<_> = bad.violations().into_iter().map(|(f, _)| f).collect();
        assert_eq!(fields, vec!["learning_rate", "beta1", "epsilon"]);
    }
}
