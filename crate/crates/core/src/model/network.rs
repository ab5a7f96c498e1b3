use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::layers::{
    aggregate_backward, aggregate_forward, projection_backward, projection_forward, relation_attention_backward,
    relation_attention_forward, type_gate_backward, type_gate_forward, AggregationCache, AggregationLayout,
    ProjectionCache, RelationAttention, TypeGate,
};
use super::{ModelConfig, ModelError};
use crate::enhancer::EnhancerEmbeddings;
use crate::graph::MultiRelationGraph;
use crate::numerics::{leaky_relu, leaky_relu_backward, linear_forward, softmax_rows, ParameterStore, Tensor2};

/// Parameter block names.
pub mod names {
    pub const FEATURE_W: &str = "feature.W_h";
    pub const FEATURE_B: &str = "feature.b_h";
    pub const TYPE_W1: &str = "type.W1";
    pub const TYPE_B1: &str = "type.b1";
    pub const TYPE_W2: &str = "type.W2";
    pub const TYPE_B2: &str = "type.b2";
    pub const TYPE_GATE_W: &str = "type.W_gate";
    pub const TYPE_GATE_B: &str = "type.b_gate";
    pub const REL_W1: &str = "relation.W1";
    pub const REL_B1: &str = "relation.b1";
    pub const REL_W2: &str = "relation.W2";
    pub const REL_B2: &str = "relation.b2";
    pub const REL_ATT_W: &str = "relation.W_att";
    pub const FUSION_TYPE: &str = "fusion.w_tp";
    pub const FUSION_REL: &str = "fusion.w_re";
    pub const CLS_W: &str = "classifier.W_f";
    pub const CLS_B: &str = "classifier.b_f";

    pub fn aggregation(relation: usize) -> String {
        format!("backbone.W_agg.{relation}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Glorot,
    Zero,
    One,
}

/// Node sets needed to compute the batch outputs, from the input layer up.
#[derive(Debug, Clone)]
pub struct ReceptiveField {
    /// `node_sets[0]` gets the node-level pipeline; `node_sets[L]` covers the batch. Each is sorted and unique.
    pub node_sets: Vec<Vec<usize>>,
    /// `layouts[l]` maps `node_sets[l]` (input) to `node_sets[l + 1]` (output).
    pub layouts: Vec<AggregationLayout>,
    /// Row of each batch entry within the last node set.
    pub batch_rows: Vec<usize>,
}

impl ReceptiveField {
    pub fn build(graph: &MultiRelationGraph, batch: &[usize], layers: usize) -> Self {
        let mut top: Vec<usize> = batch.to_vec();
        top.sort_unstable();
        top.dedup();
        let mut node_sets = vec![top];
        for _ in 0..layers {
            let current = node_sets.last().expect("non-empty");
            let mut below = current.clone();
            for &v in current {
                for rel in graph.relations() {
                    below.extend_from_slice(rel.neighbors(v));
                }
            }
            below.sort_unstable();
            below.dedup();
            node_sets.push(below);
        }
        node_sets.reverse();
        let pos = |set: &[usize], v: usize| set.binary_search(&v).expect("node in receptive set");
        let mut layouts = Vec::with_capacity(layers);
        for l in 0..layers {
            let (input, output) = (&node_sets[l], &node_sets[l + 1]);
            let self_rows = output.iter().map(|&v| pos(input, v)).collect();
            let mut offsets = Vec::with_capacity(graph.num_relations());
            let mut neighbors = Vec::with_capacity(graph.num_relations());
            for rel in graph.relations() {
                let mut off = Vec::with_capacity(output.len() + 1);
                let mut nb = Vec::new();
                off.push(0);
                for &v in output {
                    nb.extend(rel.neighbors(v).iter().map(|&j| pos(input, j)));
                    off.push(nb.len());
                }
                offsets.push(off);
                neighbors.push(nb);
            }
            layouts.push(AggregationLayout {
                self_rows,
                offsets,
                neighbors,
            });
        }
        let last = node_sets.last().expect("non-empty");
        let batch_rows = batch.iter().map(|&v| pos(last, v)).collect();
        Self {
            node_sets,
            layouts,
            batch_rows,
        }
    }

    pub fn input_nodes(&self) -> &[usize] {
        &self.node_sets[0]
    }
}

#[derive(Debug, Clone)]
pub struct TypeTrace {
    pub projection: ProjectionCache,
    pub gate: TypeGate,
}

#[derive(Debug, Clone)]
pub struct RelationTrace {
    pub projection: ProjectionCache,
    pub attention: RelationAttention,
}

/// Everything the backward pass needs. Node-level tensors are indexed by
/// `field.input_nodes()`; `logits` and `probs` follow the batch order.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch: Vec<usize>,
    pub field: ReceptiveField,
    pub x: Tensor2,
    pub hidden_pre: Tensor2,
    pub hidden: Tensor2,
    pub type_level: Option<TypeTrace>,
    pub relation_level: Option<RelationTrace>,
    pub fused: Tensor2,
    pub aggregation: Vec<AggregationCache>,
    pub rep: Tensor2,
    pub logits: Tensor2,
    pub probs: Tensor2,
    /// Multiply-adds spent projecting enhancer embeddings in this pass.
    pub projection_flops: u64,
    store_step: u64,
    consumed: bool,
}

impl ForwardTrace {
    pub fn fraud_scores(&self) -> Vec<f64> {
        (0..self.probs.rows()).map(|r| self.probs.get(r, 1)).collect()
    }

    /// Normalization checks: attention weights sum to one over relations,
    /// gates lie strictly inside (0, 1), class probabilities sum to one.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(rl) = &self.relation_level {
            let delta = &rl.attention.delta;
            let n = delta.first().map_or(0, Tensor2::len);
            for i in 0..n {
                let s: f64 = delta.iter().map(|d| d.data()[i]).sum();
                if (s - 1.0).abs() > 1e-9 {
                    out.push(format!("attention weights at flat index {i} sum to {s}"));
                }
            }
        }
        if let Some(tl) = &self.type_level {
            for (i, &b) in tl.gate.beta.data().iter().enumerate() {
                if !(b > 0.0 && b < 1.0) {
                    out.push(format!("gate value {b} at flat index {i} is outside (0, 1)"));
                }
            }
        }
        for r in 0..self.probs.rows() {
            let s: f64 = self.probs.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                out.push(format!("class probabilities of batch row {r} sum to {s}"));
            }
        }
        out
    }
}

/// The multi-relation fraud detector: feature map, optional type and relation
/// enhancers, fusion, optional relation-mean backbone, linear classifier.
#[derive(Debug, Clone)]
pub struct Mled {
    cfg: ModelConfig,
}

impl Mled {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn blocks(&self) -> Vec<(String, usize, usize, Init)> {
        let c = &self.cfg;
        let (u, e) = (c.hidden_dim, c.raw_embedding_dim);
        let mut v = vec![
            (names::FEATURE_W.to_string(), u, c.input_dim, Init::Glorot),
            (names::FEATURE_B.to_string(), 1, u, Init::Zero),
        ];
        if c.type_enhancer {
            let l = c.type_bottleneck;
            v.extend([
                (names::TYPE_W1.to_string(), l, e, Init::Glorot),
                (names::TYPE_B1.to_string(), 1, l, Init::Zero),
                (names::TYPE_W2.to_string(), u, l, Init::Glorot),
                (names::TYPE_B2.to_string(), 1, u, Init::Zero),
                (names::TYPE_GATE_W.to_string(), 1, u, Init::Glorot),
                (names::TYPE_GATE_B.to_string(), 1, 1, Init::Zero),
                (names::FUSION_TYPE.to_string(), 1, 1, Init::One),
            ]);
        }
        if c.relation_enhancer {
            let g = c.relation_bottleneck;
            v.extend([
                (names::REL_W1.to_string(), g, e, Init::Glorot),
                (names::REL_B1.to_string(), 1, g, Init::Zero),
                (names::REL_W2.to_string(), u, g, Init::Glorot),
                (names::REL_B2.to_string(), 1, u, Init::Zero),
                (names::REL_ATT_W.to_string(), u, u, Init::Glorot),
                (names::FUSION_REL.to_string(), 1, 1, Init::One),
            ]);
        }
        if c.backbone.layers() > 0 {
            for r in 0..c.num_relations {
                v.push((names::aggregation(r), u, u, Init::Glorot));
            }
        }
        v.push((names::CLS_W.to_string(), 2, u, Init::Glorot));
        v.push((names::CLS_B.to_string(), 1, 2, Init::Zero));
        v
    }

    /// Fresh parameters. Each block draws from its own stream keyed by
    /// `(seed, block name)`, so blocks shared between configurations start
    /// identical regardless of which enhancers are enabled.
    pub fn init_params(&self, seed: u64) -> ParameterStore {
        let mut store = ParameterStore::new();
        for (name, rows, cols, init) in self.blocks() {
            let value = match init {
                Init::Zero => Tensor2::zeros(rows, cols),
                Init::One => Tensor2::filled(rows, cols, 1.0),
                Init::Glorot => {
                    let mut hasher = Sha256::new();
                    hasher.update(seed.to_le_bytes());
                    hasher.update(name.as_bytes());
                    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
                    let a = (6.0 / (rows + cols) as f64).sqrt();
                    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
                    Tensor2::from_vec(rows, cols, data).expect("shape matches")
                }
            };
            store.insert(name, value).expect("block names are unique");
        }
        store
    }

    /// All-zero parameters of the right shapes, including the fusion scalars.
    pub fn zero_params(&self) -> ParameterStore {
        let mut store = ParameterStore::new();
        for (name, rows, cols, _) in self.blocks() {
            store.insert(name, Tensor2::zeros(rows, cols)).expect("block names are unique");
        }
        store
    }

    fn check_embeddings(&self, emb: &EnhancerEmbeddings) -> Result<(), ModelError> {
        let c = &self.cfg;
        if c.type_enhancer && emb.type_raw.shape() != (c.num_types, c.raw_embedding_dim) {
            return Err(ModelError::Input(format!(
                "type embeddings are {}x{}, expected {}x{}",
                emb.type_raw.rows(),
                emb.type_raw.cols(),
                c.num_types,
                c.raw_embedding_dim
            )));
        }
        if c.relation_enhancer && emb.relation_raw.shape() != (c.num_relations, c.raw_embedding_dim) {
            return Err(ModelError::Input(format!(
                "relation embeddings are {}x{}, expected {}x{}",
                emb.relation_raw.rows(),
                emb.relation_raw.cols(),
                c.num_relations,
                c.raw_embedding_dim
            )));
        }
        Ok(())
    }

    /// Projects raw type (`relation = false`) or relation embeddings into the latent space.
    pub fn project_enhancer_embeddings(
        &self,
        store: &ParameterStore,
        raw: &Tensor2,
        relation: bool,
    ) -> Result<ProjectionCache, ModelError> {
        let (w1, b1, w2, b2) = if relation {
            (names::REL_W1, names::REL_B1, names::REL_W2, names::REL_B2)
        } else {
            (names::TYPE_W1, names::TYPE_B1, names::TYPE_W2, names::TYPE_B2)
        };
        Ok(projection_forward(
            raw,
            store.value(w1)?,
            store.value(b1)?,
            store.value(w2)?,
            store.value(b2)?,
            self.cfg.leaky_slope,
        )?)
    }

    /// Returns `(pre-activation, LeakyReLU(W_h x + b_h))`.
    pub fn feature_map(&self, store: &ParameterStore, x: &Tensor2) -> Result<(Tensor2, Tensor2), ModelError> {
        let pre = linear_forward(x, store.value(names::FEATURE_W)?, store.value(names::FEATURE_B)?)?;
        let h = leaky_relu(&pre, self.cfg.leaky_slope);
        Ok((pre, h))
    }

    pub fn type_enhance(&self, store: &ParameterStore, h: &Tensor2, types: &Tensor2) -> Result<TypeGate, ModelError> {
        Ok(type_gate_forward(
            h,
            types,
            store.value(names::TYPE_GATE_W)?,
            store.scalar(names::TYPE_GATE_B)?,
        )?)
    }

    pub fn relation_enhance(
        &self,
        store: &ParameterStore,
        h: &Tensor2,
        relations: &Tensor2,
    ) -> Result<RelationAttention, ModelError> {
        Ok(relation_attention_forward(
            h,
            relations,
            store.value(names::REL_ATT_W)?,
            self.cfg.leaky_slope,
        )?)
    }

    /// `h + w_tp z + w_re m`, with absent terms skipped.
    pub fn fuse(
        &self,
        store: &ParameterStore,
        h: &Tensor2,
        z: Option<&Tensor2>,
        m: Option<&Tensor2>,
    ) -> Result<Tensor2, ModelError> {
        let mut f = h.clone();
        if let Some(z) = z {
            f.add_scaled(z, store.scalar(names::FUSION_TYPE)?)?;
        }
        if let Some(m) = m {
            f.add_scaled(m, store.scalar(names::FUSION_REL)?)?;
        }
        Ok(f)
    }

    /// Returns `(logits, class probabilities)`.
    pub fn classify(&self, store: &ParameterStore, rep: &Tensor2) -> Result<(Tensor2, Tensor2), ModelError> {
        let logits = linear_forward(rep, store.value(names::CLS_W)?, store.value(names::CLS_B)?)?;
        let probs = softmax_rows(&logits);
        Ok((logits, probs))
    }

    fn aggregation_weights<'a>(&self, store: &'a ParameterStore) -> Result<Vec<&'a Tensor2>, ModelError> {
        (0..self.cfg.num_relations)
            .map(|r| store.value(&names::aggregation(r)).map_err(ModelError::from))
            .collect()
    }

    pub fn forward(
        &self,
        store: &ParameterStore,
        graph: &MultiRelationGraph,
        emb: &EnhancerEmbeddings,
        batch: &[usize],
    ) -> Result<ForwardTrace, ModelError> {
        let c = &self.cfg;
        if batch.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        if let Some(&bad) = batch.iter().find(|&&v| v >= graph.num_nodes()) {
            return Err(ModelError::Input(format!(
                "batch node {bad} is out of range for {} nodes",
                graph.num_nodes()
            )));
        }
        if graph.num_relations() != c.num_relations || graph.feature_dim() != c.input_dim {
            return Err(ModelError::Input(format!(
                "graph has {} relations and {} features, model expects {} and {}",
                graph.num_relations(),
                graph.feature_dim(),
                c.num_relations,
                c.input_dim
            )));
        }
        self.check_embeddings(emb)?;

        let layers = c.backbone.layers();
        let field = ReceptiveField::build(graph, batch, layers);
        let x = graph.features().gather_rows(field.input_nodes());
        let (hidden_pre, hidden) = self.feature_map(store, &x)?;

        let mut projection_flops = 0;
        let type_level = if c.type_enhancer {
            let projection = self.project_enhancer_embeddings(store, &emb.type_raw, false)?;
            projection_flops += projection.flops;
            let gate = self.type_enhance(store, &hidden, &projection.out)?;
            Some(TypeTrace { projection, gate })
        } else {
            None
        };
        let relation_level = if c.relation_enhancer {
            let projection = self.project_enhancer_embeddings(store, &emb.relation_raw, true)?;
            projection_flops += projection.flops;
            let attention = self.relation_enhance(store, &hidden, &projection.out)?;
            Some(RelationTrace { projection, attention })
        } else {
            None
        };
        let fused = self.fuse(
            store,
            &hidden,
            type_level.as_ref().map(|t| &t.gate.z),
            relation_level.as_ref().map(|r| &r.attention.m),
        )?;

        let mut aggregation = Vec::with_capacity(layers);
        if layers > 0 {
            let w = self.aggregation_weights(store)?;
            for layout in &field.layouts {
                let input = aggregation.last().map_or(&fused, |a: &AggregationCache| &a.out);
                let cache = aggregate_forward(input, layout, &w, c.leaky_slope)?;
                aggregation.push(cache);
            }
        }
        let top = aggregation.last().map_or(&fused, |a| &a.out);
        let rep = top.gather_rows(&field.batch_rows);
        let (logits, probs) = self.classify(store, &rep)?;

        let trace = ForwardTrace {
            batch: batch.to_vec(),
            field,
            x,
            hidden_pre,
            hidden,
            type_level,
            relation_level,
            fused,
            aggregation,
            rep,
            logits,
            probs,
            projection_flops,
            store_step: store.step_count(),
            consumed: false,
        };
        debug_assert!(trace.invariant_violations().is_empty(), "{:?}", trace.invariant_violations());
        Ok(trace)
    }

    /// Accumulates parameter gradients of a loss with logit gradient `dlogits`.
    /// A trace may be consumed once, and only while the store is unchanged by optimizer steps.
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        trace: &mut ForwardTrace,
        dlogits: &Tensor2,
    ) -> Result<(), ModelError> {
        if trace.consumed {
            return Err(ModelError::StaleTrace("trace was already used for a backward pass".into()));
        }
        if trace.store_step != store.step_count() {
            return Err(ModelError::StaleTrace(format!(
                "trace was recorded at optimizer step {} but parameters are at step {}",
                trace.store_step,
                store.step_count()
            )));
        }
        if dlogits.shape() != trace.logits.shape() {
            return Err(ModelError::Input(format!(
                "logit gradient is {}x{}, logits are {}x{}",
                dlogits.rows(),
                dlogits.cols(),
                trace.logits.rows(),
                trace.logits.cols()
            )));
        }
        trace.consumed = true;
        let c = &self.cfg;
        let slope = c.leaky_slope;

        let w_f = store.value(names::CLS_W)?.clone();
        store.accumulate_grad(names::CLS_W, &dlogits.t_matmul(&trace.rep)?)?;
        store.accumulate_grad(names::CLS_B, &dlogits.sum_rows())?;
        let drep = dlogits.matmul(&w_f)?;

        let top_rows = trace.field.node_sets.last().expect("non-empty").len();
        let mut dtop = Tensor2::zeros(top_rows, c.hidden_dim);
        for (i, &row) in trace.field.batch_rows.iter().enumerate() {
            for (o, &g) in dtop.row_mut(row).iter_mut().zip(drep.row(i)) {
                *o += g;
            }
        }
        let mut dfused = dtop;
        if !trace.aggregation.is_empty() {
            let w: Vec<Tensor2> = self.aggregation_weights(store)?.into_iter().cloned().collect();
            let w_refs: Vec<&Tensor2> = w.iter().collect();
            for l in (0..trace.aggregation.len()).rev() {
                let input_rows = trace.field.node_sets[l].len();
                let g = aggregate_backward(
                    input_rows,
                    &trace.field.layouts[l],
                    &w_refs,
                    &trace.aggregation[l],
                    &dfused,
                    slope,
                )?;
                for (r, dw) in g.dw.iter().enumerate() {
                    store.accumulate_grad(&names::aggregation(r), dw)?;
                }
                dfused = g.dx;
            }
        }

        let mut dh = dfused.clone();
        if let Some(tl) = &trace.type_level {
            let w_tp = store.scalar(names::FUSION_TYPE)?;
            store.accumulate_grad(names::FUSION_TYPE, &Tensor2::filled(1, 1, dfused.dot(&tl.gate.z)))?;
            let mut dz = dfused.clone();
            dz.data_mut().iter_mut().for_each(|v| *v *= w_tp);
            let w_gate = store.value(names::TYPE_GATE_W)?.clone();
            let g = type_gate_backward(&trace.hidden, &tl.projection.out, &w_gate, &tl.gate, &dz)?;
            dh.add_scaled(&g.dh, 1.0)?;
            store.accumulate_grad(names::TYPE_GATE_W, &g.dw_gate)?;
            store.accumulate_grad(names::TYPE_GATE_B, &Tensor2::filled(1, 1, g.db_gate))?;
            let pg = projection_backward(&tl.projection, store.value(names::TYPE_W2)?, &g.dtypes, slope)?;
            store.accumulate_grad(names::TYPE_W1, &pg.dw1)?;
            store.accumulate_grad(names::TYPE_B1, &pg.db1)?;
            store.accumulate_grad(names::TYPE_W2, &pg.dw2)?;
            store.accumulate_grad(names::TYPE_B2, &pg.db2)?;
        }
        if let Some(rl) = &trace.relation_level {
            let w_re = store.scalar(names::FUSION_REL)?;
            store.accumulate_grad(names::FUSION_REL, &Tensor2::filled(1, 1, dfused.dot(&rl.attention.m)))?;
            let mut dm = dfused.clone();
            dm.data_mut().iter_mut().for_each(|v| *v *= w_re);
            let w_att = store.value(names::REL_ATT_W)?.clone();
            let g = relation_attention_backward(&trace.hidden, &rl.projection.out, &w_att, &rl.attention, &dm, slope)?;
            dh.add_scaled(&g.dh, 1.0)?;
            store.accumulate_grad(names::REL_ATT_W, &g.dw_att)?;
            let pg = projection_backward(&rl.projection, store.value(names::REL_W2)?, &g.drelations, slope)?;
            store.accumulate_grad(names::REL_W1, &pg.dw1)?;
            store.accumulate_grad(names::REL_B1, &pg.db1)?;
            store.accumulate_grad(names::REL_W2, &pg.dw2)?;
            store.accumulate_grad(names::REL_B2, &pg.db2)?;
        }

        let dpre = leaky_relu_backward(&trace.hidden_pre, &dh, slope);
        store.accumulate_grad(names::FEATURE_W, &dpre.t_matmul(&trace.x)?)?;
        store.accumulate_grad(names::FEATURE_B, &dpre.sum_rows())?;
        Ok(())
    }

    /// Fraud probabilities for `nodes`, computed in chunks without keeping traces.
    pub fn predict(
        &self,
        store: &ParameterStore,
        graph: &MultiRelationGraph,
        emb: &EnhancerEmbeddings,
        nodes: &[usize],
        chunk: usize,
    ) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(nodes.len());
        for part in nodes.chunks(chunk.max(1)) {
            out.extend(self.forward(store, graph, emb, part)?.fraud_scores());
        }
        Ok(out)
    }

    /// Final representation (classifier input) of each node in `nodes`.
    pub fn representations(
        &self,
        store: &ParameterStore,
        graph: &MultiRelationGraph,
        emb: &EnhancerEmbeddings,
        nodes: &[usize],
        chunk: usize,
    ) -> Result<Tensor2, ModelError> {
        let mut data = Vec::with_capacity(nodes.len() * self.cfg.hidden_dim);
        for part in nodes.chunks(chunk.max(1)) {
            data.extend_from_slice(self.forward(store, graph, emb, part)?.rep.data());
        }
        Ok(Tensor2::from_vec(nodes.len(), self.cfg.hidden_dim, data)?)
    }
}
