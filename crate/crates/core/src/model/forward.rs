//! Batched forward pass. The queries of a batch are stacked vertically:
//! node-level states have `batch · n` rows and attribute-side states have
//! `batch · d` rows, so every sparse operator is applied block-diagonally.

use std::sync::Arc;

use super::infer::FusedGraphBlock;
use super::params::{Affine, BnSlot, Gcn, Model, Weights};
use super::Aggregation;
use crate::error::{Error, Result};
use crate::graph::{query_distances, AttributedGraph, NormalizedViews};
use crate::linalg::{Csr, Matrix};
use crate::nn::{dropout_mask, Mode, BN_EPS};
use crate::querygen::{build_structure_seed, one_hot_attrs, Query};
use crate::rng::{unit, Rng};
use crate::tape::{BatchStats, Reduce, Tape, Var};

/// Per-query model inputs: the structure seed and the multi-hot query
/// attribute vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    pub seed: Vec<f64>,
    pub attrs: Vec<f64>,
}

impl QueryInput {
    pub fn new(graph: &AttributedGraph, nodes: &[usize], attrs: &[usize]) -> Result<Self> {
        let dist = query_distances(graph, nodes)?;
        Ok(Self {
            seed: build_structure_seed(&dist),
            attrs: one_hot_attrs(attrs, graph.d())?,
        })
    }

    pub fn from_query(graph: &AttributedGraph, query: &Query) -> Result<Self> {
        Self::new(graph, &query.nodes, &query.attrs)
    }
}

/// Tape handles of one layer's outputs; `None` for disabled parts.
#[derive(Debug, Clone, Default)]
pub struct LayerVars {
    pub e_g: Option<Var>,
    pub e_s: Option<Var>,
    pub e_a: Option<Var>,
    pub h_ff: Option<Var>,
    pub h_f: Option<Var>,
    pub h_g: Option<Var>,
    pub h_s: Option<Var>,
}

#[derive(Debug)]
pub struct BnUpdate {
    pub layer: usize,
    pub slot: BnSlot,
    pub stats: BatchStats,
}

#[derive(Debug)]
pub struct Forward {
    /// Stacked predictions, `batch · n` rows.
    pub z: Var,
    pub batch: usize,
    pub mode: Mode,
    pub layers: Vec<LayerVars>,
    pub bn_updates: Vec<BnUpdate>,
    pub weights: Weights<Var>,
}

/// Query-independent graph-encoder outputs, reused across inference calls.
#[derive(Debug, Clone)]
pub struct GraphCache {
    pub e_g: Vec<Matrix>,
    pub h_g: Vec<Option<Matrix>>,
    /// Per hidden layer, the graph block of the fused state when fusion
    /// concatenates and feeds back.
    pub fused: Vec<Option<FusedGraphBlock>>,
}

/// Values of one layer for a single query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerTrace {
    pub e_g: Option<Matrix>,
    pub e_s: Option<Matrix>,
    pub e_a: Option<Matrix>,
    pub h_ff: Option<Matrix>,
    pub h_f: Option<Matrix>,
    pub h_g: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub z: Vec<f64>,
    pub mode: Mode,
}

impl ForwardTrace {
    /// Concatenated last-layer encoder outputs of the enabled encoders.
    pub fn embedding(&self) -> Result<Matrix> {
        if self.mode != Mode::Infer {
            return Err(Error::Precondition(
                "embeddings are exported from inference traces only".into(),
            ));
        }
        let last = self.layers.last().expect("trace has layers");
        let parts: Vec<&Matrix> = [&last.e_g, &last.e_s, &last.e_a]
            .into_iter()
            .flatten()
            .collect();
        Ok(Matrix::hstack(&parts))
    }
}

struct Ctx<'a> {
    model: &'a Model,
    views: &'a NormalizedViews,
    batch: usize,
    mode: Mode,
    rng: Option<&'a mut Rng>,
    bn_updates: Vec<BnUpdate>,
}

impl Ctx<'_> {
    fn rate(&self) -> f64 {
        match self.mode {
            Mode::Train => self.model.config.dropout,
            Mode::Infer => 0.0,
        }
    }

    fn dropout(&mut self, tape: &mut Tape, x: Var) -> Var {
        let rate = self.rate();
        if rate == 0.0 {
            return x;
        }
        let (r, c) = tape.value(x).shape();
        let rng = self
            .rng
            .as_deref_mut()
            .expect("train mode needs a dropout stream");
        let mask = dropout_mask(r, c, rate, rng);
        tape.mul_const(x, mask)
    }

    fn batch_norm(
        &mut self,
        tape: &mut Tape,
        x: Var,
        affine: &Affine<Var>,
        layer: usize,
        slot: BnSlot,
    ) -> Var {
        match self.mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(x, affine.gamma, affine.beta, BN_EPS);
                self.bn_updates.push(BnUpdate { layer, slot, stats });
                y
            }
            Mode::Infer => {
                let rs = self.model.running[layer]
                    .slot(slot)
                    .expect("batch norm without running statistics");
                tape.batch_norm_infer(x, affine.gamma, affine.beta, &rs.mean, &rs.var, BN_EPS)
            }
        }
    }

    /// Stacked and, in train mode, dropped-out copies of the normalized
    /// feature matrix, with the transpose needed for the backward pass.
    fn stacked_features(&mut self) -> (Arc<Csr>, Arc<Csr>) {
        let f = &self.views.f_hat;
        let rate = self.rate();
        if self.batch == 1 && rate == 0.0 {
            return (Arc::clone(f), Arc::clone(&self.views.f_hat_t));
        }
        let parts: Vec<Csr> = (0..self.batch)
            .map(|_| {
                if rate == 0.0 {
                    return (**f).clone();
                }
                let rng = self
                    .rng
                    .as_deref_mut()
                    .expect("train mode needs a dropout stream");
                let keep = 1.0 / (1.0 - rate);
                f.map_values(|_, _, v| if unit(rng) < rate { 0.0 } else { v * keep })
            })
            .collect();
        let stacked = Csr::vstack(&parts);
        let t = stacked.transpose();
        (Arc::new(stacked), Arc::new(t))
    }
}

/// `blockdiag(s) · x · w`, multiplying in the cheaper order.
fn sparse_dense(
    tape: &mut Tape,
    s: &Arc<Csr>,
    s_t: &Arc<Csr>,
    blocks: usize,
    x: Var,
    w: Var,
) -> Var {
    let k = tape.value(x).cols();
    let m = tape.value(w).cols();
    let nnz = (s.nnz() * blocks) as u128;
    let (k, m) = (k as u128, m as u128);
    let sparse_first = nnz * k + (blocks * s.rows()) as u128 * k * m;
    let dense_first = (blocks * s.cols()) as u128 * k * m + nnz * m;
    if sparse_first <= dense_first {
        let sx = tape.spmm(s, s_t, blocks, x);
        tape.matmul(sx, w)
    } else {
        let xw = tape.matmul(x, w);
        tape.spmm(s, s_t, blocks, xw)
    }
}

fn convolve(tape: &mut Tape, a_hat: &Arc<Csr>, blocks: usize, x: Var, g: &Gcn<Var>) -> Var {
    let prop = sparse_dense(tape, a_hat, a_hat, blocks, x, g.w);
    let own = tape.matmul(x, g.w_self);
    let sum = tape.add(prop, own);
    tape.add_row(sum, g.b)
}

fn replicate(m: &Matrix, times: usize) -> Matrix {
    if times == 1 {
        return m.clone();
    }
    let parts: Vec<&Matrix> = (0..times).map(|_| m).collect();
    Matrix::vstack(&parts)
}

impl Model {
    pub(super) fn check_views(&self, views: &NormalizedViews) -> Result<()> {
        if views.d != self.d {
            return Err(Error::Compatibility(format!(
                "model expects {} attributes, graph has {}",
                self.d, views.d
            )));
        }
        Ok(())
    }

    /// Graph-encoder outputs in inference mode.
    pub fn graph_cache(&self, views: &NormalizedViews) -> Result<Option<GraphCache>> {
        self.check_views(views)?;
        if !self.config.components.graph_encoder {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let weights = self.weights.map(|m| tape.constant(m.clone()));
        let mut ctx = Ctx {
            model: self,
            views,
            batch: 1,
            mode: Mode::Infer,
            rng: None,
            bn_updates: Vec::new(),
        };
        let outs = graph_encoder(&mut tape, &mut ctx, &weights);
        let e_g: Vec<Matrix> = outs.iter().map(|(e, _)| tape.value(*e).clone()).collect();
        let fused = self.fused_graph_blocks(views, &e_g);
        Ok(Some(GraphCache {
            e_g,
            h_g: outs
                .iter()
                .map(|(_, h)| h.map(|h| tape.value(h).clone()))
                .collect(),
            fused,
        }))
    }

    /// Runs the network on a batch of queries. With `track` the weights are
    /// recorded as trainable leaves. `rng` supplies dropout masks and is
    /// required in train mode. A `cache` is used only in inference mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        views: &NormalizedViews,
        inputs: &[QueryInput],
        mode: Mode,
        rng: Option<&mut Rng>,
        cache: Option<&GraphCache>,
        track: bool,
    ) -> Result<Forward> {
        self.check_views(views)?;
        if inputs.is_empty() {
            return Err(Error::Precondition("empty query batch".into()));
        }
        if mode == Mode::Train && rng.is_none() && self.config.dropout > 0.0 {
            return Err(Error::Precondition(
                "train mode needs a dropout stream".into(),
            ));
        }
        let (n, d) = (views.n, views.d);
        for q in inputs {
            if q.seed.len() != n || q.attrs.len() != d {
                return Err(Error::Shape(format!(
                    "query input of sizes ({}, {}) for a graph with n={n}, d={d}",
                    q.seed.len(),
                    q.attrs.len()
                )));
            }
        }
        let batch = inputs.len();
        let config = &self.config;
        let comp = config.components;
        let weights = self.weights.map(|m| {
            if track {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        });
        let mut ctx = Ctx {
            model: self,
            views,
            batch,
            mode,
            rng,
            bn_updates: Vec::new(),
        };

        let graph_outs: Vec<(Var, Option<Var>)> = if !comp.graph_encoder {
            Vec::new()
        } else if let (Some(c), Mode::Infer) = (cache, mode) {
            c.e_g
                .iter()
                .zip(&c.h_g)
                .map(|(e, h)| {
                    let e = tape.constant(replicate(e, batch));
                    let h = h.as_ref().map(|h| tape.constant(replicate(h, batch)));
                    (e, h)
                })
                .collect()
        } else {
            graph_encoder(tape, &mut ctx, &weights)
        };

        let seeds: Vec<f64> = inputs.iter().flat_map(|q| q.seed.iter().copied()).collect();
        let attrs: Vec<f64> = inputs
            .iter()
            .flat_map(|q| q.attrs.iter().copied())
            .collect();
        let mut i_s = comp
            .structure_encoder
            .then(|| tape.constant(Matrix::from_vec(batch * n, 1, seeds)));
        let mut h_f = comp
            .attribute_encoder
            .then(|| tape.constant(Matrix::from_vec(batch * d, 1, attrs)));

        let layers_n = config.layers();
        let mut layers = Vec::with_capacity(layers_n);
        let mut z = None;
        for l in 0..layers_n {
            let w = &weights.layers[l];
            let last = l + 1 == layers_n;
            let mut out = LayerVars::default();
            if let Some(&(e, h)) = graph_outs.get(l) {
                out.e_g = Some(e);
                out.h_g = h;
            }

            if let (Some(x), Some(g)) = (i_s, &w.structure) {
                let x = ctx.dropout(tape, x);
                out.e_s = Some(convolve(tape, &views.a_hat, batch, x, g));
            }

            if let (Some(state), Some(w_v)) = (h_f, w.w_v) {
                let x = ctx.dropout(tape, state);
                out.e_a = Some(sparse_dense(tape, &views.b_v, &views.b_f, batch, x, w_v));
            }

            let parts: Vec<Var> = [out.e_g, out.e_s, out.e_a].into_iter().flatten().collect();
            let fused = match config.aggregation {
                Aggregation::Concat if parts.len() > 1 => tape.concat(&parts),
                Aggregation::Concat => parts[0],
                Aggregation::Sum => tape.reduce(&parts, Reduce::Sum),
                Aggregation::Mean => tape.reduce(&parts, Reduce::Mean),
                Aggregation::Max => tape.reduce(&parts, Reduce::Max),
                Aggregation::Min => tape.reduce(&parts, Reduce::Min),
            };
            let activated = tape.relu(fused);

            if last {
                out.h_ff = Some(activated);
                let logits = tape.matmul(activated, weights.w_out);
                let logits = tape.add_row(logits, weights.b_out);
                z = Some(tape.sigmoid(logits));
                layers.push(out);
                break;
            }

            // inputs of the next structure layer and of this layer's attribute side
            let (next_s, attr_in) = if comp.feature_fusion {
                let h_ff = match &w.bn_fusion {
                    Some(a) => ctx.batch_norm(tape, activated, a, l, BnSlot::Fusion),
                    None => activated,
                };
                out.h_ff = Some(h_ff);
                (Some(h_ff), Some(h_ff))
            } else {
                out.h_ff = Some(activated);
                let h_s = match (out.e_s, &w.bn_structure) {
                    (Some(e_s), Some(a)) => {
                        let r = tape.relu(e_s);
                        Some(ctx.batch_norm(tape, r, a, l, BnSlot::Structure))
                    }
                    _ => None,
                };
                out.h_s = h_s;
                let h_v = out.e_a.map(|e_a| tape.relu(e_a));
                (h_s, h_v)
            };

            if let (Some(state), Some(w_self), Some(bn), Some(i_f)) =
                (h_f, w.w_f_self, &w.bn_attr, attr_in)
            {
                let x = ctx.dropout(tape, i_f);
                let gathered = tape.spmm(&views.b_f, &views.b_v, batch, x);
                let own = tape.matmul(state, w_self);
                let sum = tape.add(gathered, own);
                let r = tape.relu(sum);
                let next = ctx.batch_norm(tape, r, bn, l, BnSlot::Attr);
                out.h_f = Some(next);
                h_f = Some(next);
            }
            i_s = next_s.filter(|_| comp.structure_encoder);
            layers.push(out);
        }

        Ok(Forward {
            z: z.expect("at least one layer"),
            batch,
            mode,
            layers,
            bn_updates: ctx.bn_updates,
            weights,
        })
    }

    /// Applies the batch statistics of a train-mode forward to the running
    /// statistics.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate], momentum: f64) {
        for u in updates {
            self.running[u.layer]
                .slot_mut(u.slot)
                .expect("update for a missing batch norm")
                .update(&u.stats, momentum);
        }
    }

    /// One inference-mode pass for a single query.
    pub fn trace(
        &self,
        views: &NormalizedViews,
        input: &QueryInput,
        cache: Option<&GraphCache>,
    ) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let fwd = self.forward(
            &mut tape,
            views,
            std::slice::from_ref(input),
            Mode::Infer,
            None,
            cache,
            false,
        )?;
        Ok(fwd.trace(&tape, 0, views))
    }

    /// Inference-mode membership scores for one query.
    pub fn scores(
        &self,
        views: &NormalizedViews,
        input: &QueryInput,
        cache: Option<&GraphCache>,
    ) -> Result<Vec<f64>> {
        self.infer(views, input, cache)
    }
}

/// The query-independent encoder: `(E_G, H_G)` for every layer; `H_G` is
/// absent at the last layer.
fn graph_encoder(
    tape: &mut Tape,
    ctx: &mut Ctx<'_>,
    weights: &Weights<Var>,
) -> Vec<(Var, Option<Var>)> {
    let layers_n = ctx.model.config.layers();
    let batch = ctx.batch;
    let a_hat = Arc::clone(&ctx.views.a_hat);
    let mut outs = Vec::with_capacity(layers_n);
    let mut h_g: Option<Var> = None;
    for l in 0..layers_n {
        let w = &weights.layers[l];
        let g = w.graph.as_ref().expect("graph encoder weights");
        let e_g = match h_g {
            None => {
                let (f, f_t) = ctx.stacked_features();
                let fw = tape.spmm(&f, &f_t, 1, g.w);
                let prop = tape.spmm(&a_hat, &a_hat, batch, fw);
                let own = tape.spmm(&f, &f_t, 1, g.w_self);
                let sum = tape.add(prop, own);
                tape.add_row(sum, g.b)
            }
            Some(h) => {
                let x = ctx.dropout(tape, h);
                convolve(tape, &a_hat, batch, x, g)
            }
        };
        let next = match &w.bn_graph {
            Some(bn) => {
                let r = tape.relu(e_g);
                Some(ctx.batch_norm(tape, r, bn, l, BnSlot::Graph))
            }
            None => None,
        };
        outs.push((e_g, next));
        h_g = next;
    }
    outs
}

impl Forward {
    /// Values of query `b` of the batch.
    pub fn trace(&self, tape: &Tape, b: usize, views: &NormalizedViews) -> ForwardTrace {
        let (n, d) = (views.n, views.d);
        let node = |v: Option<Var>| v.map(|v| tape.value(v).row_block(b * n, n));
        let attr = |v: Option<Var>| v.map(|v| tape.value(v).row_block(b * d, d));
        let layers = self
            .layers
            .iter()
            .map(|l| LayerTrace {
                e_g: node(l.e_g),
                e_s: node(l.e_s),
                e_a: node(l.e_a),
                h_ff: node(l.h_ff),
                h_f: attr(l.h_f),
                h_g: node(l.h_g),
            })
            .collect();
        ForwardTrace {
            layers,
            z: tape.value(self.z).row_block(b * n, n).into_vec(),
            mode: self.mode,
        }
    }

    /// Stacked predictions as a flat vector.
    pub fn predictions<'t>(&self, tape: &'t Tape) -> &'t [f64] {
        tape.value(self.z).data()
    }
}
