//! Tensor-level building blocks of the network, each with its backward pass.
//! These take raw tensors; the parameter-store plumbing lives in `network`.

use crate::numerics::ops::{leaky_relu_grad_scalar, leaky_relu_scalar};
use crate::numerics::{leaky_relu, leaky_relu_backward, linear_forward, sigmoid, NumericsError, Tensor2};

fn shape_err(msg: String) -> NumericsError {
    NumericsError::Shape(msg)
}

/// Cached activations of a two-layer projection MLP.
#[derive(Debug, Clone)]
pub struct ProjectionCache {
    pub raw: Tensor2,
    pub hidden_pre: Tensor2,
    pub hidden: Tensor2,
    pub out: Tensor2,
    /// Multiply-adds spent, counted from the shapes actually multiplied.
    pub flops: u64,
}

/// `out = W2 · LeakyReLU(W1 · raw + b1) + b2`, row-wise.
pub fn projection_forward(
    raw: &Tensor2,
    w1: &Tensor2,
    b1: &Tensor2,
    w2: &Tensor2,
    b2: &Tensor2,
    slope: f64,
) -> Result<ProjectionCache, NumericsError> {
    let hidden_pre = linear_forward(raw, w1, b1)?;
    let hidden = leaky_relu(&hidden_pre, slope);
    let out = linear_forward(&hidden, w2, b2)?;
    let k = raw.rows() as u64;
    let flops = 2 * k * (w1.rows() as u64 * w1.cols() as u64 + w2.rows() as u64 * w2.cols() as u64);
    Ok(ProjectionCache {
        raw: raw.clone(),
        hidden_pre,
        hidden,
        out,
        flops,
    })
}

pub struct ProjectionGrads {
    pub dw1: Tensor2,
    pub db1: Tensor2,
    pub dw2: Tensor2,
    pub db2: Tensor2,
}

pub fn projection_backward(
    cache: &ProjectionCache,
    w2: &Tensor2,
    dout: &Tensor2,
    slope: f64,
) -> Result<ProjectionGrads, NumericsError> {
    let dw2 = dout.t_matmul(&cache.hidden)?;
    let db2 = dout.sum_rows();
    let dhidden = dout.matmul(w2)?;
    let dpre = leaky_relu_backward(&cache.hidden_pre, &dhidden, slope);
    let dw1 = dpre.t_matmul(&cache.raw)?;
    let db1 = dpre.sum_rows();
    Ok(ProjectionGrads { dw1, db1, dw2, db2 })
}

/// Output of the type-level gate.
#[derive(Debug, Clone)]
pub struct TypeGate {
    /// `B × T` gate logits.
    pub logits: Tensor2,
    /// `B × T` gate values in (0, 1).
    pub beta: Tensor2,
    /// `B × U` averaged gated type embedding.
    pub z: Tensor2,
}

/// `β[b,n] = σ(w·(h[b] + t[n]) + c)` and `z[b] = (1/T) Σ_n β[b,n] t[n]`.
pub fn type_gate_forward(h: &Tensor2, types: &Tensor2, w_gate: &Tensor2, b_gate: f64) -> Result<TypeGate, NumericsError> {
    let u = h.cols();
    if types.cols() != u || w_gate.shape() != (1, u) {
        return Err(shape_err(format!(
            "type gate: h is {}x{}, type embeddings {}x{}, gate weight {}x{}",
            h.rows(),
            u,
            types.rows(),
            types.cols(),
            w_gate.rows(),
            w_gate.cols()
        )));
    }
    let t = types.rows();
    let hg = h.matmul_t(w_gate)?;
    let tg = types.matmul_t(w_gate)?;
    let mut logits = Tensor2::zeros(h.rows(), t);
    for b in 0..h.rows() {
        let row = logits.row_mut(b);
        for n in 0..t {
            row[n] = hg.get(b, 0) + tg.get(n, 0) + b_gate;
        }
    }
    let beta = logits.map(sigmoid);
    let mut z = beta.matmul(types)?;
    let inv_t = 1.0 / t as f64;
    z.data_mut().iter_mut().for_each(|v| *v *= inv_t);
    Ok(TypeGate { logits, beta, z })
}

pub struct TypeGateGrads {
    pub dh: Tensor2,
    pub dtypes: Tensor2,
    pub dw_gate: Tensor2,
    pub db_gate: f64,
}

pub fn type_gate_backward(
    h: &Tensor2,
    types: &Tensor2,
    w_gate: &Tensor2,
    gate: &TypeGate,
    dz: &Tensor2,
) -> Result<TypeGateGrads, NumericsError> {
    let inv_t = 1.0 / types.rows() as f64;
    let mut dbeta = dz.matmul_t(types)?;
    dbeta.data_mut().iter_mut().for_each(|v| *v *= inv_t);
    let mut dtypes = gate.beta.t_matmul(dz)?;
    dtypes.data_mut().iter_mut().for_each(|v| *v *= inv_t);

    let mut dg = dbeta;
    for (g, &b) in dg.data_mut().iter_mut().zip(gate.beta.data()) {
        *g *= b * (1.0 - b);
    }
    // Per-node and per-type sums of the gate-logit gradient.
    let mut by_node = Tensor2::zeros(dg.rows(), 1);
    let mut by_type = Tensor2::zeros(dg.cols(), 1);
    for b in 0..dg.rows() {
        for (n, &v) in dg.row(b).iter().enumerate() {
            by_node.data_mut()[b] += v;
            by_type.data_mut()[n] += v;
        }
    }
    let db_gate = by_node.sum();
    let mut dw_gate = by_node.t_matmul(h)?;
    dw_gate.add_scaled(&by_type.t_matmul(types)?, 1.0)?;
    let dh = by_node.matmul(w_gate)?;
    dtypes.add_scaled(&by_type.matmul(w_gate)?, 1.0)?;
    Ok(TypeGateGrads {
        dh,
        dtypes,
        dw_gate,
        db_gate,
    })
}

/// Output of relation-level attention. Per-relation tensors are `B × U`.
#[derive(Debug, Clone)]
pub struct RelationAttention {
    /// Pre-activation scores `W_att (h[b] + e_r)`.
    pub scores: Vec<Tensor2>,
    /// Attention weights, softmax over relations per node and dimension.
    pub delta: Vec<Tensor2>,
    /// `B × U` attended relation embedding.
    pub m: Tensor2,
}

pub fn relation_attention_forward(
    h: &Tensor2,
    relations: &Tensor2,
    w_att: &Tensor2,
    slope: f64,
) -> Result<RelationAttention, NumericsError> {
    let (bsz, u) = h.shape();
    if relations.cols() != u || w_att.shape() != (u, u) {
        return Err(shape_err(format!(
            "relation attention: h is {}x{}, relation embeddings {}x{}, attention weight {}x{}",
            bsz,
            u,
            relations.rows(),
            relations.cols(),
            w_att.rows(),
            w_att.cols()
        )));
    }
    let r_count = relations.rows();
    let hw = h.matmul_t(w_att)?;
    let rw = relations.matmul_t(w_att)?;
    let mut scores = Vec::with_capacity(r_count);
    for r in 0..r_count {
        let mut s = hw.clone();
        let off = rw.row(r);
        for b in 0..bsz {
            for (v, &o) in s.row_mut(b).iter_mut().zip(off) {
                *v += o;
            }
        }
        scores.push(s);
    }
    let mut delta: Vec<Tensor2> = scores.iter().map(|s| s.map(|x| leaky_relu_scalar(x, slope))).collect();
    let mut m = Tensor2::zeros(bsz, u);
    let mut col = vec![0.0; r_count];
    for i in 0..bsz * u {
        for r in 0..r_count {
            col[r] = delta[r].data()[i];
        }
        crate::numerics::ops::softmax_in_place(&mut col);
        let d = i % u;
        let mut acc = 0.0;
        for r in 0..r_count {
            delta[r].data_mut()[i] = col[r];
            acc += col[r] * relations.get(r, d);
        }
        m.data_mut()[i] = acc;
    }
    Ok(RelationAttention { scores, delta, m })
}

pub struct RelationAttentionGrads {
    pub dh: Tensor2,
    pub drelations: Tensor2,
    pub dw_att: Tensor2,
}

pub fn relation_attention_backward(
    h: &Tensor2,
    relations: &Tensor2,
    w_att: &Tensor2,
    att: &RelationAttention,
    dm: &Tensor2,
    slope: f64,
) -> Result<RelationAttentionGrads, NumericsError> {
    let (bsz, u) = h.shape();
    let r_count = relations.rows();
    let mut drelations = Tensor2::zeros(r_count, u);
    let mut ds: Vec<Tensor2> = (0..r_count).map(|_| Tensor2::zeros(bsz, u)).collect();
    let mut ddelta = vec![0.0; r_count];
    for i in 0..bsz * u {
        let d = i % u;
        let g = dm.data()[i];
        let mut weighted = 0.0;
        for r in 0..r_count {
            let dl = att.delta[r].data()[i];
            ddelta[r] = g * relations.get(r, d);
            weighted += dl * ddelta[r];
            drelations.row_mut(r)[d] += g * dl;
        }
        for r in 0..r_count {
            let dl = att.delta[r].data()[i];
            let dalpha = dl * (ddelta[r] - weighted);
            ds[r].data_mut()[i] = dalpha * leaky_relu_grad_scalar(att.scores[r].data()[i], slope);
        }
    }
    let mut ds_total = Tensor2::zeros(bsz, u);
    let mut ds_colsums = Tensor2::zeros(r_count, u);
    for (r, s) in ds.iter().enumerate() {
        ds_total.add_scaled(s, 1.0)?;
        ds_colsums.row_mut(r).copy_from_slice(s.sum_rows().row(0));
    }
    let mut dw_att = ds_total.t_matmul(h)?;
    dw_att.add_scaled(&ds_colsums.t_matmul(relations)?, 1.0)?;
    let dh = ds_total.matmul(w_att)?;
    drelations.add_scaled(&ds_colsums.matmul(w_att)?, 1.0)?;
    Ok(RelationAttentionGrads { dh, drelations, dw_att })
}

/// Neighborhood bookkeeping for one aggregation layer, in local row indices.
#[derive(Debug, Clone)]
pub struct AggregationLayout {
    /// For each output row, its own row in the input.
    pub self_rows: Vec<usize>,
    /// Per relation, CSR offsets over output rows.
    pub offsets: Vec<Vec<usize>>,
    /// Per relation, input rows of neighbors.
    pub neighbors: Vec<Vec<usize>>,
}

impl AggregationLayout {
    pub fn num_outputs(&self) -> usize {
        self.self_rows.len()
    }

    fn neigh(&self, r: usize, b: usize) -> &[usize] {
        &self.neighbors[r][self.offsets[r][b]..self.offsets[r][b + 1]]
    }
}

#[derive(Debug, Clone)]
pub struct AggregationCache {
    /// Per relation, `outputs × U` neighbor means (zero rows for isolated nodes).
    pub means: Vec<Tensor2>,
    pub pre: Tensor2,
    pub out: Tensor2,
}

/// `out[b] = LeakyReLU(x[self(b)] + (1/R) Σ_r W_r · mean_{j ∈ N_r(b)} x[j])`.
pub fn aggregate_forward(
    x: &Tensor2,
    layout: &AggregationLayout,
    w_agg: &[&Tensor2],
    slope: f64,
) -> Result<AggregationCache, NumericsError> {
    let u = x.cols();
    let r_count = w_agg.len();
    let outs = layout.num_outputs();
    let inv_r = 1.0 / r_count as f64;
    let mut pre = x.gather_rows(&layout.self_rows);
    let mut means = Vec::with_capacity(r_count);
    for (r, w) in w_agg.iter().enumerate() {
        if w.shape() != (u, u) {
            return Err(shape_err(format!(
                "aggregation weight for relation {r} is {}x{}, expected {u}x{u}",
                w.rows(),
                w.cols()
            )));
        }
        let mut mean = Tensor2::zeros(outs, u);
        for b in 0..outs {
            let nb = layout.neigh(r, b);
            if nb.is_empty() {
                continue;
            }
            let dst = mean.row_mut(b);
            for &j in nb {
                for (o, &v) in dst.iter_mut().zip(x.row(j)) {
                    *o += v;
                }
            }
            let inv = 1.0 / nb.len() as f64;
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        pre.add_scaled(&mean.matmul_t(w)?, inv_r)?;
        means.push(mean);
    }
    let out = leaky_relu(&pre, slope);
    Ok(AggregationCache { means, pre, out })
}

pub struct AggregationGrads {
    pub dx: Tensor2,
    pub dw: Vec<Tensor2>,
}

pub fn aggregate_backward(
    input_rows: usize,
    layout: &AggregationLayout,
    w_agg: &[&Tensor2],
    cache: &AggregationCache,
    dout: &Tensor2,
    slope: f64,
) -> Result<AggregationGrads, NumericsError> {
    let u = dout.cols();
    let inv_r = 1.0 / w_agg.len() as f64;
    let dpre = leaky_relu_backward(&cache.pre, dout, slope);
    let mut dx = Tensor2::zeros(input_rows, u);
    for (b, &s) in layout.self_rows.iter().enumerate() {
        for (o, &g) in dx.row_mut(s).iter_mut().zip(dpre.row(b)) {
            *o += g;
        }
    }
    let mut dw = Vec::with_capacity(w_agg.len());
    for (r, w) in w_agg.iter().enumerate() {
        let mut g = dpre.t_matmul(&cache.means[r])?;
        g.data_mut().iter_mut().for_each(|v| *v *= inv_r);
        dw.push(g);
        let dmean = dpre.matmul(w)?;
        for b in 0..layout.num_outputs() {
            let nb = layout.neigh(r, b);
            if nb.is_empty() {
                continue;
            }
            let scale = inv_r / nb.len() as f64;
            let src = dmean.row(b);
            for &j in nb {
                for (o, &v) in dx.row_mut(j).iter_mut().zip(src) {
                    *o += scale * v;
                }
            }
        }
    }
    Ok(AggregationGrads { dx, dw })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor2 {
        Tensor2::from_rows(rows)
    }

    #[test]
    fn gate_at_zero_is_one_half() {
        let h = Tensor2::zeros(3, 4);
        let types = t(&[&[1.0, 2.0, 3.0, 4.0], &[-1.0, 0.0, 1.0, 0.0]]);
        let g = type_gate_forward(&h, &types, &Tensor2::zeros(1, 4), 0.0).unwrap();
        assert!(g.beta.data().iter().all(|&b| b == 0.5));
        // z = 0.5 * mean of the type rows
        assert_eq!(g.z.row(0), &[0.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn attention_with_equal_scores_is_uniform() {
        let h = Tensor2::zeros(2, 3);
        let rel = t(&[&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], &[0.0, 0.0, 0.0]]);
        let a = relation_attention_forward(&h, &rel, &Tensor2::zeros(3, 3), 0.01).unwrap();
        for d in &a.delta {
            assert!(d.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
        assert!((a.m.get(0, 0) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn isolated_node_aggregates_to_self() {
        let x = t(&[&[1.0, -2.0], &[5.0, 5.0]]);
        let layout = AggregationLayout {
            self_rows: vec![0],
            offsets: vec![vec![0, 0]],
            neighbors: vec![vec![]],
        };
        let w = Tensor2::identity(2);
        let c = aggregate_forward(&x, &layout, &[&w], 0.01).unwrap();
        assert_eq!(c.out.row(0), &[1.0, -0.02]);
    }
}
