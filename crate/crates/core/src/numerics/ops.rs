//! Layer primitives with explicit forward and backward passes.

use super::{NumericsError, Tensor2};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// `out[i] = W · x[i] + b` for every row of `x`.
pub fn linear_forward(x: &Tensor2, w: &Tensor2, b: &Tensor2) -> Result<Tensor2, NumericsError> {
    if x.cols() != w.cols() {
        return Err(NumericsError::Shape(format!(
            "linear: input x is {}x{} but weight W is {}x{}",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols()
        )));
    }
    if b.rows() != 1 || b.cols() != w.rows() {
        return Err(NumericsError::Shape(format!(
            "linear: bias b is {}x{}, expected 1x{} to match weight W",
            b.rows(),
            b.cols(),
            w.rows()
        )));
    }
    let mut out = x.matmul_t(w)?;
    let bias = b.row(0);
    for r in 0..out.rows() {
        for (o, &bv) in out.row_mut(r).iter_mut().zip(bias) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Gradients of a linear layer.
pub struct LinearGrads {
    pub dx: Tensor2,
    pub dw: Tensor2,
    pub db: Tensor2,
}

pub fn linear_backward(x: &Tensor2, w: &Tensor2, dout: &Tensor2) -> Result<LinearGrads, NumericsError> {
    let dx = dout.matmul(w)?;
    let dw = dout.t_matmul(x)?;
    let db = dout.sum_rows();
    Ok(LinearGrads { dx, dw, db })
}

#[inline]
pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_grad_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Elementwise `max(x, slope · x)` for `slope ∈ (0, 1)`.
pub fn leaky_relu(x: &Tensor2, slope: f64) -> Tensor2 {
    x.map(|v| leaky_relu_scalar(v, slope))
}

/// Multiplies the upstream gradient by the LeakyReLU derivative at `pre`.
pub fn leaky_relu_backward(pre: &Tensor2, dout: &Tensor2, slope: f64) -> Tensor2 {
    debug_assert!(pre.same_shape(dout));
    let data = pre
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&p, &d)| d * leaky_relu_grad_scalar(p, slope))
        .collect();
    Tensor2::from_vec(pre.rows(), pre.cols(), data).expect("same shape")
}

/// Logistic function in the branch form that never exponentiates a positive number.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_tensor(x: &Tensor2) -> Tensor2 {
    x.map(sigmoid)
}

/// Max-subtracted softmax applied to a slice in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Per-class weights for the cross-entropy mean. `None` means unweighted.
pub type ClassWeights = Option<[f64; 2]>;

/// Mean negative log-likelihood of the target class under a row softmax of
/// two-column logits, and its gradient with respect to the logits.
///
/// With class weights the mean is taken over the summed weights of the batch.
pub fn cross_entropy_loss(
    logits: &Tensor2,
    targets: &[u8],
    weights: ClassWeights,
) -> Result<(f64, Tensor2), NumericsError> {
    if logits.rows() == 0 {
        return Err(NumericsError::EmptyBatch);
    }
    if logits.cols() != 2 || targets.len() != logits.rows() {
        return Err(NumericsError::Shape(format!(
            "cross_entropy: logits {}x{} with {} targets",
            logits.rows(),
            logits.cols(),
            targets.len()
        )));
    }
    let w = weights.unwrap_or([1.0, 1.0]);
    let mut total_weight = 0.0;
    for &t in targets {
        if t > 1 {
            return Err(NumericsError::InvalidTarget(t));
        }
        total_weight += w[t as usize];
    }
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(logits.rows(), 2);
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row[0].max(row[1]);
        let lse = max + ((row[0] - max).exp() + (row[1] - max).exp()).ln();
        let wt = w[t as usize] / total_weight;
        loss += wt * (lse - row[t as usize]);
        let g = grad.row_mut(r);
        for c in 0..2 {
            let p = (row[c] - lse).exp();
            g[c] = wt * (p - if c == t as usize { 1.0 } else { 0.0 });
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn linear_identity_and_hand_product() {
        let x = Tensor2::from_rows(&[&[1.0, 2.0]]);
        let id = linear_forward(&x, &Tensor2::identity(2), &Tensor2::zeros(1, 2)).unwrap();
        assert_eq!(id, x);

        let w = Tensor2::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let b = Tensor2::row_vector(&[0.5, -0.5]);
        let out = linear_forward(&x, &w, &b).unwrap();
        assert_eq!(out.data(), &[3.5, 1.5]);
    }

    #[test]
    fn linear_empty_batch_and_mismatch() {
        let w = Tensor2::zeros(3, 2);
        let out = linear_forward(&Tensor2::zeros(0, 2), &w, &Tensor2::zeros(1, 3)).unwrap();
        assert_eq!(out.shape(), (0, 3));
        let err = linear_forward(&Tensor2::zeros(1, 4), &w, &Tensor2::zeros(1, 3)).unwrap_err();
        assert!(err.to_string().contains("weight W"));
        let err = linear_forward(&Tensor2::zeros(1, 2), &w, &Tensor2::zeros(1, 2)).unwrap_err();
        assert!(err.to_string().contains("bias b"));
    }

    #[test]
    fn leaky_relu_cases() {
        let x = Tensor2::row_vector(&[0.0, -2.0, 3.0]);
        let y = leaky_relu(&x, 0.01);
        assert_eq!(y.data(), &[0.0, -0.02, 3.0]);
    }

    #[test]
    fn sigmoid_cases() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&Tensor2::row_vector(&[1.0, 1.0, 1.0]));
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_rows(&Tensor2::row_vector(&[0.0, LN2]));
        assert!((s.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 2.0 / 3.0).abs() < 1e-15);

        let x = Tensor2::row_vector(&[0.3, -1.2, 2.5]);
        let shifted = x.map(|v| v + 123.0);
        let (a, b) = (softmax_rows(&x), softmax_rows(&shifted));
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let (loss, _) = cross_entropy_loss(&Tensor2::row_vector(&[1000.0, -1000.0]), &[0], None).unwrap();
        assert!(loss.abs() < 1e-9);
        for t in 0..2u8 {
            let (loss, _) = cross_entropy_loss(&Tensor2::row_vector(&[0.0, 0.0]), &[t], None).unwrap();
            assert!((loss - LN2).abs() < 1e-15);
        }
        assert!(matches!(
            cross_entropy_loss(&Tensor2::zeros(0, 2), &[], None),
            Err(NumericsError::EmptyBatch)
        ));
        assert!(cross_entropy_loss(&Tensor2::zeros(1, 2), &[2], None).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for weights in [None, Some([0.3, 2.7])] {
            for _ in 0..20 {
                let b = rng.random_range(1..8);
                let logits = Tensor2::from_vec(b, 2, (0..2 * b).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
                let targets: Vec<u8> = (0..b).map(|_| rng.random_range(0..2)).collect();
                let (_, grad) = cross_entropy_loss(&logits, &targets, weights).unwrap();
                let h = 1e-5;
                for i in 0..logits.len() {
                    let mut plus = logits.clone();
                    plus.data_mut()[i] += h;
                    let mut minus = logits.clone();
                    minus.data_mut()[i] -= h;
                    let fd = (cross_entropy_loss(&plus, &targets, weights).unwrap().0
                        - cross_entropy_loss(&minus, &targets, weights).unwrap().0)
                        / (2.0 * h);
                    let a = grad.data()[i];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    assert!(rel <= 1e-6, "rel err {rel} (analytic {a}, fd {fd})");
                }
            }
        }
    }

    #[test]
    fn linear_backward_matches_hand_values() {
        let x = Tensor2::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let w = Tensor2::from_rows(&[&[0.5, -1.0]]);
        let dout = Tensor2::from_rows(&[&[1.0], &[2.0]]);
        let g = linear_backward(&x, &w, &dout).unwrap();
        assert_eq!(g.dx.data(), &[0.5, -1.0, 1.0, -2.0]);
        assert_eq!(g.dw.data(), &[-1.0, 3.0]);
        assert_eq!(g.db.data(), &[3.0]);
    }
}
