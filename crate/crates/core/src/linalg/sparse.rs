use serde::{Deserialize, Serialize};

use super::Matrix;

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within each row and no stored
/// value is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that end up zero are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut row_of = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            assert!(
                r < rows && c < cols,
                "triplet ({r},{c}) outside {rows}x{cols}"
            );
            if let (Some(&lr), Some(&lc)) = (row_of.last(), indices.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            row_of.push(r);
            indices.push(c);
            values.push(v);
        }
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for ((r, c), v) in row_of.into_iter().zip(indices).zip(values) {
            if v != 0.0 {
                indptr[r + 1] += 1;
                keep_idx.push(c);
                keep_val.push(v);
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            rows,
            cols,
            indptr,
            indices: keep_idx,
            values: keep_val,
        }
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), &triplets)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs stored in row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                let slot = next[j];
                indices[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        Csr {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }

    /// Same sparsity pattern with each value replaced by `f(row, col, value)`.
    /// Results that are zero are dropped.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Csr {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                triplets.push((i, j, f(i, j, v)));
            }
        }
        Csr::from_triplets(self.rows, self.cols, &triplets)
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn vstack(parts: &[Csr]) -> Csr {
        assert!(!parts.is_empty());
        let cols = parts[0].cols;
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack column mismatch");
            let base = indices.len();
            indices.extend_from_slice(&p.indices);
            values.extend_from_slice(&p.values);
            indptr.extend(p.indptr[1..].iter().map(|&o| o + base));
            rows += p.rows;
        }
        Csr {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// `self · x`, skipping empty rows.
    pub fn matmul(&self, x: &Matrix) -> Matrix {
        self.matmul_blocks(x, 1)
    }

    /// Product with the block-diagonal matrix `diag(self, …, self)` made of
    /// `blocks` copies: `x` has `blocks · self.cols()` rows and the output
    /// has `blocks · self.rows()` rows.
    pub fn matmul_blocks(&self, x: &Matrix, blocks: usize) -> Matrix {
        assert_eq!(
            x.rows(),
            blocks * self.cols,
            "sparse matmul shape mismatch: {} blocks of {}x{} · {}x{}",
            blocks,
            self.rows,
            self.cols,
            x.rows(),
            x.cols()
        );
        let mut out = Matrix::zeros(blocks * self.rows, x.cols());
        self.accumulate(x, blocks, &mut out);
        out
    }

    /// `out += self · x`.
    pub fn matmul_acc(&self, x: &Matrix, out: &mut Matrix) {
        assert_eq!(
            (x.rows(), out.rows(), out.cols()),
            (self.cols, self.rows, x.cols()),
            "sparse matmul_acc shape mismatch"
        );
        self.accumulate(x, 1, out);
    }

    fn accumulate(&self, x: &Matrix, blocks: usize, out: &mut Matrix) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at run time.
            return unsafe { self.accumulate_avx2(x, blocks, out) };
        }
        self.accumulate_scalar(x, blocks, out)
    }

    /// Same loop compiled with wider vectors; mul and add stay separate so
    /// results match the scalar path bit for bit.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn accumulate_avx2(&self, x: &Matrix, blocks: usize, out: &mut Matrix) {
        self.accumulate_scalar(x, blocks, out)
    }

    /// Walks the columns in tiles so the gathered rows of `x` stay in cache.
    #[inline(always)]
    fn accumulate_scalar(&self, x: &Matrix, blocks: usize, out: &mut Matrix) {
        const TILE: usize = 128;
        let width = x.cols();
        let (xs, os) = (x.data(), out.data_mut());
        for start in (0..width).step_by(TILE) {
            let end = (start + TILE).min(width);
            for b in 0..blocks {
                let in_base = b * self.cols;
                let out_base = b * self.rows;
                for i in 0..self.rows {
                    let span = self.indptr[i]..self.indptr[i + 1];
                    if span.is_empty() {
                        continue;
                    }
                    let o = (out_base + i) * width;
                    let out_row = &mut os[o + start..o + end];
                    for (&j, &v) in self.indices[span.clone()].iter().zip(&self.values[span]) {
                        let s = (in_base + j) * width;
                        for (o, &s) in out_row.iter_mut().zip(&xs[s + start..s + end]) {
                            *o += v * s;
                        }
                    }
                }
            }
        }
    }

    /// Column sums weighted by a per-row factor: `(wᵀ · self)`.
    pub fn t_matvec(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &wi) in w.iter().enumerate() {
            for (j, v) in self.row(i) {
                out[j] += wi * v;
            }
        }
        out
    }
}
