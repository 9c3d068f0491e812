//! Reverse-mode gradient tape over [`Matrix`] values.
//!
//! Operations are recorded in execution order; [`Tape::backward`] walks them
//! in exact reverse order. Only the primitives the network needs are
//! provided.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{Csr, Matrix};

/// Clamp applied to predictions inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
    Min,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Block-diagonal sparse constant times a tracked dense matrix.
    SpMM {
        transpose: Arc<Csr>,
        blocks: usize,
        input: Var,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Matrix),
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Reduce {
        inputs: Vec<Var>,
        kind: Reduce,
        /// For max/min: index into `inputs` of the selected entry.
        winner: Vec<u8>,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    BatchNormInfer {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    Bce {
        input: Var,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Per-channel batch statistics produced by a train-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over the batch rows.
    pub var: Vec<f64>,
    pub count: usize,
}

fn check_finite_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| {
        std::env::var("QDCS_CHECK_FINITE")
            .map(|v| v == "1")
            .unwrap_or(false)
    })
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; untracked values have none.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        if check_finite_enabled() {
            assert!(
                value.all_finite(),
                "non-finite value produced by {:?}",
                std::mem::discriminant(&op)
            );
        }
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: receives a gradient.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let tracked = self.any_tracked(&[a, b]);
        self.push(value, Op::MatMul(a, b), tracked)
    }

    /// `diag(matrix, …, matrix) · input` with `blocks` diagonal copies.
    pub fn spmm(
        &mut self,
        matrix: &Arc<Csr>,
        transpose: &Arc<Csr>,
        blocks: usize,
        input: Var,
    ) -> Var {
        debug_assert_eq!(matrix.rows(), transpose.cols());
        let value = matrix.matmul_blocks(self.value(input), blocks);
        let tracked = self.any_tracked(&[input]);
        self.push(
            value,
            Op::SpMM {
                transpose: Arc::clone(transpose),
                blocks,
                input,
            },
            tracked,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let tracked = self.any_tracked(&[a, b]);
        self.push(value, Op::Add(a, b), tracked)
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "bias must be a row vector");
        assert_eq!(r.cols(), self.value(a).cols(), "bias width mismatch");
        let bias = r.data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        let tracked = self.any_tracked(&[a, row]);
        self.push(value, Op::AddRow(a, row), tracked)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        let value = self.value(a).zip_map(&mask, |x, m| x * m);
        let tracked = self.any_tracked(&[a]);
        self.push(value, Op::MulConst(a, mask), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(relu);
        let tracked = self.any_tracked(&[a]);
        self.push(value, Op::Relu(a), tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let tracked = self.any_tracked(&[a]);
        self.push(value, Op::Sigmoid(a), tracked)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::hstack(&mats);
        let tracked = self.any_tracked(parts);
        self.push(value, Op::Concat(parts.to_vec()), tracked)
    }

    /// Entry-wise reduction over equally shaped inputs.
    pub fn reduce(&mut self, parts: &[Var], kind: Reduce) -> Var {
        assert!(!parts.is_empty() && parts.len() < 256);
        let shape = self.value(parts[0]).shape();
        for &p in parts {
            assert_eq!(self.value(p).shape(), shape, "reduce shape mismatch");
        }
        let len = shape.0 * shape.1;
        let mut out = self.value(parts[0]).clone();
        let mut winner = Vec::new();
        match kind {
            Reduce::Sum | Reduce::Mean => {
                for &p in &parts[1..] {
                    out.add_assign(self.value(p));
                }
                if kind == Reduce::Mean {
                    out = out.scale(1.0 / parts.len() as f64);
                }
            }
            Reduce::Max | Reduce::Min => {
                winner = vec![0u8; len];
                for (k, &p) in parts.iter().enumerate().skip(1) {
                    let src = self.value(p).data();
                    let dst = out.data_mut();
                    for idx in 0..len {
                        let better = match kind {
                            Reduce::Max => src[idx] > dst[idx],
                            _ => src[idx] < dst[idx],
                        };
                        if better {
                            dst[idx] = src[idx];
                            winner[idx] = k as u8;
                        }
                    }
                }
            }
        }
        let tracked = self.any_tracked(parts);
        self.push(
            out,
            Op::Reduce {
                inputs: parts.to_vec(),
                kind,
                winner,
            },
            tracked,
        )
    }

    /// Batch normalization using the statistics of the rows of `input`.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, BatchStats) {
        let x = self.value(input);
        let (rows, cols) = x.shape();
        assert!(rows > 0, "batch norm over zero rows");
        let mean: Vec<f64> = x.column_sums().iter().map(|s| s / rows as f64).collect();
        let mut var = vec![0.0; cols];
        for i in 0..rows {
            for ((v, &xv), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *v += (xv - m) * (xv - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let normalized = standardize(x, &mean, &inv_std);
        let value = affine(&normalized, self.value(gamma), self.value(beta));
        let tracked = self.any_tracked(&[input, gamma, beta]);
        let stats = BatchStats {
            mean,
            var,
            count: rows,
        };
        let var_out = self.push(
            value,
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            tracked,
        );
        (var_out, stats)
    }

    /// Batch normalization using fixed running statistics.
    pub fn batch_norm_infer(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Var {
        let x = self.value(input);
        let cols = x.cols();
        assert_eq!(mean.len(), cols, "batch norm channel mismatch");
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let normalized = standardize(x, &mean, &inv_std);
        let value = affine(&normalized, self.value(gamma), self.value(beta));
        let tracked = self.any_tracked(&[input, gamma, beta]);
        self.push(
            value,
            Op::BatchNormInfer {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            tracked,
        )
    }

    /// Summed binary cross-entropy of a column of predictions against 0/1
    /// targets; predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, input: Var, target: &[f64]) -> Result<Var> {
        let z = self.value(input);
        if z.cols() != 1 || z.rows() != target.len() {
            return Err(Error::Shape(format!(
                "bce: prediction {}x{} against {} targets",
                z.rows(),
                z.cols(),
                target.len()
            )));
        }
        if target.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Precondition("bce targets must be 0 or 1".into()));
        }
        let loss = bce_sum(z.data(), target);
        let tracked = self.any_tracked(&[input]);
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::Bce {
                input,
                target: target.to_vec(),
            },
            tracked,
        ))
    }

    /// Sum of several `1 × 1` losses.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        self.reduce(parts, Reduce::Sum)
    }

    /// Gradients of the scalar `loss` with respect to every tracked value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Precondition(
                "backward on a value not recorded on this tape".into(),
            ));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Precondition(
                "backward requires a scalar loss".into(),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.is_tracked(*a) {
                        accumulate(&mut grads, *a, g.matmul_t(self.value(*b)));
                    }
                    if self.is_tracked(*b) {
                        accumulate(&mut grads, *b, self.value(*a).t_matmul(&g));
                    }
                }
                Op::SpMM {
                    transpose,
                    blocks,
                    input,
                    ..
                } => {
                    if self.is_tracked(*input) {
                        accumulate(&mut grads, *input, transpose.matmul_blocks(&g, *blocks));
                    }
                }
                Op::Add(a, b) => {
                    if self.is_tracked(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.is_tracked(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.is_tracked(*row) {
                        let sums = g.column_sums();
                        accumulate(&mut grads, *row, Matrix::from_vec(1, sums.len(), sums));
                    }
                    if self.is_tracked(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::MulConst(a, mask) => {
                    accumulate(&mut grads, *a, g.zip_map(mask, |x, m| x * m));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    accumulate(
                        &mut grads,
                        *a,
                        g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                    );
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    accumulate(&mut grads, *a, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.is_tracked(p) {
                            accumulate(&mut grads, p, g.column_block(offset, w));
                        }
                        offset += w;
                    }
                }
                Op::Reduce {
                    inputs,
                    kind,
                    winner,
                } => match kind {
                    Reduce::Sum => {
                        for &p in inputs {
                            if self.is_tracked(p) {
                                accumulate(&mut grads, p, g.clone());
                            }
                        }
                    }
                    Reduce::Mean => {
                        let share = g.scale(1.0 / inputs.len() as f64);
                        for &p in inputs {
                            if self.is_tracked(p) {
                                accumulate(&mut grads, p, share.clone());
                            }
                        }
                    }
                    Reduce::Max | Reduce::Min => {
                        for (k, &p) in inputs.iter().enumerate() {
                            if !self.is_tracked(p) {
                                continue;
                            }
                            let mut part = Matrix::zeros(g.rows(), g.cols());
                            for (idx, (dst, &src)) in
                                part.data_mut().iter_mut().zip(g.data()).enumerate()
                            {
                                if winner[idx] as usize == k {
                                    *dst = src;
                                }
                            }
                            accumulate(&mut grads, p, part);
                        }
                    }
                },
                Op::BatchNormTrain {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let (rows, cols) = g.shape();
                    let gamma_v = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; cols];
                    let mut dbeta = vec![0.0; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            let gv = g.get(i, j);
                            dgamma[j] += gv * normalized.get(i, j);
                            dbeta[j] += gv;
                        }
                    }
                    if self.is_tracked(*input) {
                        let n = rows as f64;
                        let mut dx = Matrix::zeros(rows, cols);
                        for i in 0..rows {
                            for j in 0..cols {
                                let dxhat = g.get(i, j) * gamma_v[j];
                                let sum_dxhat = dbeta[j] * gamma_v[j];
                                let sum_dxhat_xhat = dgamma[j] * gamma_v[j];
                                dx.set(
                                    i,
                                    j,
                                    inv_std[j] / n
                                        * (n * dxhat
                                            - sum_dxhat
                                            - normalized.get(i, j) * sum_dxhat_xhat),
                                );
                            }
                        }
                        accumulate(&mut grads, *input, dx);
                    }
                    if self.is_tracked(*gamma) {
                        accumulate(&mut grads, *gamma, Matrix::from_vec(1, cols, dgamma));
                    }
                    if self.is_tracked(*beta) {
                        accumulate(&mut grads, *beta, Matrix::from_vec(1, cols, dbeta));
                    }
                }
                Op::BatchNormInfer {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let (rows, cols) = g.shape();
                    let gamma_v = self.value(*gamma).data();
                    if self.is_tracked(*input) {
                        let dx = Matrix::from_fn(rows, cols, |i, j| {
                            g.get(i, j) * gamma_v[j] * inv_std[j]
                        });
                        accumulate(&mut grads, *input, dx);
                    }
                    if self.is_tracked(*gamma) {
                        let mut dgamma = vec![0.0; cols];
                        for i in 0..rows {
                            for j in 0..cols {
                                dgamma[j] += g.get(i, j) * normalized.get(i, j);
                            }
                        }
                        accumulate(&mut grads, *gamma, Matrix::from_vec(1, cols, dgamma));
                    }
                    if self.is_tracked(*beta) {
                        let sums = g.column_sums();
                        accumulate(&mut grads, *beta, Matrix::from_vec(1, cols, sums));
                    }
                }
                Op::Bce { input, target } => {
                    let scale = g.get(0, 0);
                    let z = self.value(*input).data();
                    let dz: Vec<f64> = z
                        .iter()
                        .zip(target)
                        .map(|(&zi, &yi)| scale * bce_derivative(zi, yi))
                        .collect();
                    accumulate(&mut grads, *input, Matrix::from_vec(dz.len(), 1, dz));
                }
            }
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn affine(normalized: &Matrix, gamma: &Matrix, beta: &Matrix) -> Matrix {
    let cols = normalized.cols();
    assert_eq!(gamma.shape(), (1, cols), "batch norm scale width mismatch");
    assert_eq!(beta.shape(), (1, cols), "batch norm shift width mismatch");
    let (g, b) = (gamma.data(), beta.data());
    let mut out = normalized.clone();
    for i in 0..out.rows() {
        for ((x, g), b) in out.row_mut(i).iter_mut().zip(g).zip(b) {
            *x = *x * g + b;
        }
    }
    out
}

fn standardize(x: &Matrix, mean: &[f64], inv_std: &[f64]) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for ((v, m), s) in out.row_mut(i).iter_mut().zip(mean).zip(inv_std) {
            *v = (*v - m) * s;
        }
    }
    out
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Summed binary cross-entropy with the prediction clamp.
pub fn bce_sum(z: &[f64], y: &[f64]) -> f64 {
    z.iter()
        .zip(y)
        .map(|(&zi, &yi)| {
            let zc = zi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if yi == 1.0 {
                -zc.ln()
            } else {
                -(1.0 - zc).ln()
            }
        })
        .sum()
}

fn bce_derivative(z: f64, y: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&z) {
        return 0.0;
    }
    if y == 1.0 {
        -1.0 / z
    } else {
        1.0 / (1.0 - z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-5;
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            let mut plus = x.clone();
            plus.set(i, j, x.get(i, j) + h);
            let mut minus = x.clone();
            minus.set(i, j, x.get(i, j) - h);
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4))
            .fold(0.0, f64::max)
    }

    fn pseudo(rows: usize, cols: usize, salt: u64) -> Matrix {
        let mut state = salt
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        Matrix::from_fn(rows, cols, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn activations() {
        assert_eq!(relu(-1.0), 0.0);
        assert_eq!(relu(2.0), 2.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn bce_values() {
        assert!((bce_sum(&[0.5], &[1.0]) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_sum(&[1.0 - BCE_EPS], &[1.0]) < 1e-6);
        assert!((bce_sum(&[0.5, 0.5], &[0.0, 1.0]) - 2.0 * 2f64.ln()).abs() < 1e-15);
        // exact 0/1 predictions are clamped rather than producing infinities
        assert!(bce_sum(&[0.0, 1.0], &[1.0, 0.0]).is_finite());
    }

    #[test]
    fn bce_rejects_non_binary_targets() {
        let mut tape = Tape::new();
        let z = tape.param(Matrix::column(&[0.3]));
        assert!(tape.bce(z, &[0.5]).is_err());
    }

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        // loss = sum(x · W) with x fixed => dW[i][j] = sum over rows of x[., i]
        let x = pseudo(3, 2, 1);
        let w = pseudo(2, 4, 2);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(w.clone());
        let y = tape.matmul(xv, wv);
        let ones_r = tape.constant(Matrix::filled(1, 3, 1.0));
        let col = tape.matmul(ones_r, y);
        let ones_c = tape.constant(Matrix::filled(4, 1, 1.0));
        let loss = tape.matmul(col, ones_c);
        let grads = tape.backward(loss).unwrap();
        let expected = Matrix::from_fn(2, 4, |i, _| (0..3).map(|r| x.get(r, i)).sum());
        assert!(grads.get(wv).unwrap().max_abs_diff(&expected) < 1e-12);
        assert!(grads.get(xv).is_none());
        let fd = numeric_grad(&w, |w| x.matmul(w).sum());
        assert!(rel_err(grads.get(wv).unwrap(), &fd) < 1e-4);
    }

    #[test]
    fn independent_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::column(&[0.2]));
        let unused = tape.param(Matrix::column(&[0.7]));
        let z = tape.sigmoid(a);
        let loss = tape.bce(z, &[1.0]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads
            .get(unused)
            .map_or(true, |g| g.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::zeros(2, 2));
        assert!(tape.backward(a).is_err());
        assert!(Tape::new().backward(Var(3)).is_err());
    }

    /// Gradient check for a composition exercising every primitive.
    #[test]
    fn primitives_match_finite_differences() {
        let sparse = Arc::new(Csr::from_triplets(
            3,
            3,
            &[
                (0, 0, 0.5),
                (0, 1, 0.4),
                (1, 0, 0.4),
                (1, 1, 0.3),
                (1, 2, 0.2),
                (2, 1, 0.2),
                (2, 2, 0.9),
            ],
        ));
        let sparse_t = Arc::new(sparse.transpose());
        let x0 = pseudo(6, 2, 3);
        let w0 = pseudo(2, 3, 4);
        let gamma0 = Matrix::from_rows(&[vec![1.2, 0.8, 1.1]]);
        let beta0 = Matrix::from_rows(&[vec![0.1, -0.2, 0.05]]);
        let head0 = pseudo(6, 1, 5);
        let mask = Matrix::from_fn(6, 3, |i, j| if (i + j) % 3 == 0 { 0.0 } else { 2.0 });
        let target: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();

        let run =
            |x: &Matrix, w: &Matrix, gamma: &Matrix, beta: &Matrix, head: &Matrix, grads: bool| {
                let mut tape = Tape::new();
                let xv = tape.param(x.clone());
                let wv = tape.param(w.clone());
                let gv = tape.param(gamma.clone());
                let bv = tape.param(beta.clone());
                let hv = tape.param(head.clone());
                let xw = tape.matmul(xv, wv);
                let prop = tape.spmm(&sparse, &sparse_t, 2, xw);
                let summed = tape.add(prop, xw);
                let dropped = tape.mul_const(summed, mask.clone());
                let act = tape.relu(dropped);
                let (normed, _) = tape.batch_norm_train(act, gv, bv, 1e-5);
                let maxed = tape.reduce(&[normed, summed], Reduce::Max);
                let meaned = tape.reduce(&[maxed, normed], Reduce::Mean);
                let cat = tape.concat(&[meaned, xv]);
                let bias_row = tape.constant(Matrix::from_rows(&[vec![0.1, 0.0, -0.1, 0.2, 0.3]]));
                let shifted = tape.add_row(cat, bias_row);
                let head_t = tape.constant(Matrix::filled(5, 1, 0.3));
                let logits = tape.matmul(shifted, head_t);
                let logits = tape.add(logits, hv);
                let z = tape.sigmoid(logits);
                let loss = tape.bce(z, &target).unwrap();
                let value = tape.value(loss).get(0, 0);
                let g = grads.then(|| {
                    let gr = tape.backward(loss).unwrap();
                    [xv, wv, gv, bv, hv].map(|v| gr.get(v).unwrap().clone())
                });
                (value, g)
            };

        let (_, analytic) = run(&x0, &w0, &gamma0, &beta0, &head0, true);
        let analytic = analytic.unwrap();
        let fds = [
            numeric_grad(&x0, |x| run(x, &w0, &gamma0, &beta0, &head0, false).0),
            numeric_grad(&w0, |w| run(&x0, w, &gamma0, &beta0, &head0, false).0),
            numeric_grad(&gamma0, |g| run(&x0, &w0, g, &beta0, &head0, false).0),
            numeric_grad(&beta0, |b| run(&x0, &w0, &gamma0, b, &head0, false).0),
            numeric_grad(&head0, |h| run(&x0, &w0, &gamma0, &beta0, h, false).0),
        ];
        for (a, fd) in analytic.iter().zip(&fds) {
            assert!(rel_err(a, fd) < 1e-4, "analytic {a:?} vs numeric {fd:?}");
        }
    }

    #[test]
    fn batch_norm_infer_gradient() {
        let x0 = pseudo(4, 2, 9);
        let gamma = Matrix::from_rows(&[vec![1.5, 0.5]]);
        let beta = Matrix::from_rows(&[vec![0.0, 0.1]]);
        let run = |x: &Matrix| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let g = tape.constant(gamma.clone());
            let b = tape.constant(beta.clone());
            let y = tape.batch_norm_infer(xv, g, b, &[0.1, -0.2], &[0.5, 2.0], 1e-5);
            let s = tape.sigmoid(y);
            let ones = tape.constant(Matrix::filled(2, 1, 0.5));
            let z = tape.matmul(s, ones);
            let loss = tape.bce(z, &[1.0, 0.0, 1.0, 0.0]).unwrap();
            (
                tape.value(loss).get(0, 0),
                tape.backward(loss).unwrap().get(xv).unwrap().clone(),
            )
        };
        let (_, g) = run(&x0);
        let fd = numeric_grad(&x0, |x| run(x).0);
        assert!(rel_err(&g, &fd) < 1e-4);
    }
}
