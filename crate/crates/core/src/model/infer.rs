//! Tape-free single-query inference. Computes the same values as an
//! inference-mode [`Model::forward`] but updates buffers in place and keeps
//! only the states the next layer reads.
//!
//! Under concatenation the graph columns of a fed-back fused state do not
//! depend on the query, so they and their products with the next layer's
//! weights come precomputed in the [`GraphCache`].

use super::forward::{GraphCache, QueryInput};
use super::params::{Affine, Gcn, Model};
use super::Aggregation;
use crate::error::{Error, Result};
use crate::graph::NormalizedViews;
use crate::linalg::{Csr, Matrix};
use crate::nn::{RunningStats, BN_EPS};
use crate::tape::{relu, sigmoid};

/// Query-independent leading columns of a hidden fused state.
#[derive(Debug, Clone)]
pub struct FusedGraphBlock {
    /// Batch-normalized graph columns, `n × c_G`.
    pub h: Matrix,
    /// `B_F · h`, present when the attribute side reads the fused state.
    pub b_f_h: Option<Matrix>,
    /// Next structure layer split into the rows that read `h` (already
    /// multiplied by it) and the remaining rows.
    pub structure: Option<SplitGcn>,
}

#[derive(Debug, Clone)]
pub struct SplitGcn {
    pub h_w: Matrix,
    pub h_w_self: Matrix,
    pub w_rest: Matrix,
    pub w_self_rest: Matrix,
}

fn relu_in_place(m: &mut Matrix) {
    m.data_mut().iter_mut().for_each(|x| *x = relu(*x));
}

fn add_bias(m: &mut Matrix, b: &Matrix) {
    let b = b.data();
    for i in 0..m.rows() {
        for (x, b) in m.row_mut(i).iter_mut().zip(b) {
            *x += b;
        }
    }
}

/// Normalizes the columns of `m` with channels `offset..` of the norm.
fn batch_norm_in_place(
    m: &mut Matrix,
    affine: &Affine<Matrix>,
    stats: Option<&RunningStats>,
    offset: usize,
) {
    let stats = stats.expect("batch norm without running statistics");
    let cols = offset..offset + m.cols();
    let inv_std: Vec<f64> = stats.var[cols.clone()]
        .iter()
        .map(|v| 1.0 / (v + BN_EPS).sqrt())
        .collect();
    let mean = &stats.mean[cols.clone()];
    let (g, b) = (
        &affine.gamma.data()[cols.clone()],
        &affine.beta.data()[cols],
    );
    for i in 0..m.rows() {
        for (j, x) in m.row_mut(i).iter_mut().enumerate() {
            *x = (*x - mean[j]) * inv_std[j] * g[j] + b[j];
        }
    }
}

/// `out += s · x · w`, multiplying in the cheaper order.
fn sparse_dense_acc(s: &Csr, x: &Matrix, w: &Matrix, out: &mut Matrix) {
    let (k, m, nnz) = (x.cols() as u128, w.cols() as u128, s.nnz() as u128);
    let sparse_first = nnz * k + s.rows() as u128 * k * m;
    let dense_first = s.cols() as u128 * k * m + nnz * m;
    if sparse_first <= dense_first {
        s.matmul(x).matmul_acc(w, out);
    } else {
        s.matmul_acc(&x.matmul(w), out);
    }
}

/// A node-level layer input, whole or as cached graph columns followed by
/// query-dependent ones.
enum State<'a> {
    Whole(Matrix),
    Split {
        block: &'a FusedGraphBlock,
        rest: Matrix,
    },
}

fn convolve(a_hat: &Csr, x: &State<'_>, g: &Gcn<Matrix>) -> Matrix {
    let mut out = match x {
        State::Whole(x) => {
            let mut out = x.matmul(&g.w_self);
            sparse_dense_acc(a_hat, x, &g.w, &mut out);
            out
        }
        State::Split { block, rest } => {
            let split = block.structure.as_ref().expect("split structure weights");
            let mut xw = split.h_w.clone();
            rest.matmul_acc(&split.w_rest, &mut xw);
            let mut out = split.h_w_self.clone();
            rest.matmul_acc(&split.w_self_rest, &mut out);
            a_hat.matmul_acc(&xw, &mut out);
            out
        }
    };
    add_bias(&mut out, &g.b);
    out
}

fn fuse(parts: &[&Matrix], aggregation: Aggregation) -> Matrix {
    if aggregation == Aggregation::Concat {
        return Matrix::hstack(parts);
    }
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        let dst = out.data_mut();
        match aggregation {
            Aggregation::Sum | Aggregation::Mean => {
                dst.iter_mut().zip(p.data()).for_each(|(o, x)| *o += x)
            }
            Aggregation::Max => dst.iter_mut().zip(p.data()).for_each(|(o, &x)| {
                if x > *o {
                    *o = x
                }
            }),
            Aggregation::Min => dst.iter_mut().zip(p.data()).for_each(|(o, &x)| {
                if x < *o {
                    *o = x
                }
            }),
            Aggregation::Concat => unreachable!(),
        }
    }
    if aggregation == Aggregation::Mean {
        let k = 1.0 / parts.len() as f64;
        out.data_mut().iter_mut().for_each(|x| *x *= k);
    }
    out
}

impl Model {
    /// Graph blocks of the fed-back fused states, one slot per layer.
    pub(super) fn fused_graph_blocks(
        &self,
        views: &NormalizedViews,
        e_g: &[Matrix],
    ) -> Vec<Option<FusedGraphBlock>> {
        let comp = self.config.components;
        let layers = self.config.layers();
        (0..layers)
            .map(|l| {
                let w = &self.weights.layers[l];
                let bn = w.bn_fusion.as_ref()?;
                if self.config.aggregation != Aggregation::Concat || l + 1 == layers {
                    return None;
                }
                let mut h = e_g.get(l)?.clone();
                relu_in_place(&mut h);
                batch_norm_in_place(&mut h, bn, self.running[l].fusion.as_ref(), 0);
                let c = h.cols();
                let b_f_h = w.w_f_self.as_ref().map(|_| views.b_f.matmul(&h));
                let structure = self.weights.layers[l + 1]
                    .structure
                    .as_ref()
                    .filter(|_| comp.structure_encoder)
                    .map(|g| {
                        let rest = g.w.rows() - c;
                        SplitGcn {
                            h_w: h.matmul(&g.w.row_block(0, c)),
                            h_w_self: h.matmul(&g.w_self.row_block(0, c)),
                            w_rest: g.w.row_block(c, rest),
                            w_self_rest: g.w_self.row_block(c, rest),
                        }
                    });
                Some(FusedGraphBlock {
                    h,
                    b_f_h,
                    structure,
                })
            })
            .collect()
    }

    pub(super) fn infer(
        &self,
        views: &NormalizedViews,
        input: &QueryInput,
        cache: Option<&GraphCache>,
    ) -> Result<Vec<f64>> {
        self.check_views(views)?;
        if input.seed.len() != views.n || input.attrs.len() != views.d {
            return Err(Error::Shape(format!(
                "query input of sizes ({}, {}) for a graph with n={}, d={}",
                input.seed.len(),
                input.attrs.len(),
                views.n,
                views.d
            )));
        }
        let config = &self.config;
        let comp = config.components;
        let owned;
        let cache = match cache {
            None if comp.graph_encoder => {
                owned = self.graph_cache(views)?;
                owned.as_ref()
            }
            c => c.filter(|_| comp.graph_encoder),
        };
        let mut i_s = comp
            .structure_encoder
            .then(|| State::Whole(Matrix::column(&input.seed)));
        let mut h_f = comp.attribute_encoder.then(|| Matrix::column(&input.attrs));
        let layers = config.layers();
        for l in 0..layers {
            let w = &self.weights.layers[l];
            let stats = &self.running[l];
            let e_s = match (&i_s, &w.structure) {
                (Some(x), Some(g)) => Some(convolve(&views.a_hat, x, g)),
                _ => None,
            };
            let e_a = match (&h_f, &w.w_v) {
                (Some(x), Some(w_v)) => {
                    let mut out = Matrix::zeros(views.n, w_v.cols());
                    sparse_dense_acc(&views.b_v, x, w_v, &mut out);
                    Some(out)
                }
                _ => None,
            };
            let block = cache.and_then(|c| c.fused.get(l)).and_then(Option::as_ref);

            if l + 1 == layers {
                let parts: Vec<&Matrix> = [cache.map(|c| &c.e_g[l]), e_s.as_ref(), e_a.as_ref()]
                    .into_iter()
                    .flatten()
                    .collect();
                let mut act = fuse(&parts, config.aggregation);
                relu_in_place(&mut act);
                let mut logits = act.matmul(&self.weights.w_out);
                add_bias(&mut logits, &self.weights.b_out);
                return Ok(logits.into_vec().into_iter().map(sigmoid).collect());
            }

            let (next_s, attr_own) = if let Some(block) = block {
                let parts: Vec<&Matrix> =
                    [e_s.as_ref(), e_a.as_ref()].into_iter().flatten().collect();
                let mut rest = Matrix::hstack(&parts);
                relu_in_place(&mut rest);
                let bn = w
                    .bn_fusion
                    .as_ref()
                    .expect("fused block without batch norm");
                batch_norm_in_place(&mut rest, bn, stats.fusion.as_ref(), block.h.cols());
                (Some(State::Split { block, rest }), None)
            } else if comp.feature_fusion {
                let parts: Vec<&Matrix> = [cache.map(|c| &c.e_g[l]), e_s.as_ref(), e_a.as_ref()]
                    .into_iter()
                    .flatten()
                    .collect();
                let mut act = fuse(&parts, config.aggregation);
                relu_in_place(&mut act);
                if let Some(a) = &w.bn_fusion {
                    batch_norm_in_place(&mut act, a, stats.fusion.as_ref(), 0);
                }
                (Some(State::Whole(act)), None)
            } else {
                let h_s = match (e_s, &w.bn_structure) {
                    (Some(mut e), Some(a)) => {
                        relu_in_place(&mut e);
                        batch_norm_in_place(&mut e, a, stats.structure.as_ref(), 0);
                        Some(State::Whole(e))
                    }
                    _ => None,
                };
                let h_v = e_a.map(|mut e| {
                    relu_in_place(&mut e);
                    e
                });
                (h_s, h_v)
            };
            if let (Some(state), Some(w_self), Some(bn)) = (&h_f, &w.w_f_self, &w.bn_attr) {
                let gathered = match (comp.feature_fusion, &next_s) {
                    (false, _) => attr_own.as_ref().map(|h_v| views.b_f.matmul(h_v)),
                    (true, Some(State::Whole(x))) => Some(views.b_f.matmul(x)),
                    (true, Some(State::Split { block, rest })) => {
                        let b_f_h = block.b_f_h.as_ref().expect("cached attribute gather");
                        Some(Matrix::hstack(&[b_f_h, &views.b_f.matmul(rest)]))
                    }
                    (true, None) => None,
                };
                if let Some(mut next) = gathered {
                    state.matmul_acc(w_self, &mut next);
                    relu_in_place(&mut next);
                    batch_norm_in_place(&mut next, bn, stats.attr.as_ref(), 0);
                    h_f = Some(next);
                }
            }
            i_s = next_s.filter(|_| comp.structure_encoder);
        }
        unreachable!("the last layer returns")
    }
}
