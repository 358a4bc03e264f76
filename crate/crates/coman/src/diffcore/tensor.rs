//! Dense row-major f64 tensors with numpy-style broadcasting.
//!
//! Shapes are ranks 0..=2 in practice (scalars, vectors, matrices); the
//! broadcasting helpers are written generically over rank so nothing here
//! needs to change if a rank-3 op ever shows up.

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::SizeMismatch {
                op: "Tensor::new",
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Identity matrix, n x n.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Uniform samples in [lo, hi), seeded by the caller's RNG.
    pub fn rand_uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single element of a scalar-like tensor (any shape with one entry).
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combine against another tensor of identical shape.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "zip_map",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::SizeMismatch {
                op: "reshape",
                shape,
                expected,
                got: self.data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let (n, m) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..n {
            for j in 0..m {
                out.data[j * n + i] = self.data[i * m + j];
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (n, k, m) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Tensor::zeros(&[n, m]);
        // ikj loop order keeps the inner accesses sequential in memory.
        for i in 0..n {
            let row_out = &mut out.data[i * m..(i + 1) * m];
            for kk in 0..k {
                let a = self.data[i * k + kk];
                if a == 0.0 {
                    continue;
                }
                let row_b = &other.data[kk * m..(kk + 1) * m];
                for j in 0..m {
                    row_out[j] += a * row_b[j];
                }
            }
        }
        Ok(out)
    }

    /// Concatenate two matrices column-wise (row counts must match).
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.as_matrix(), other.as_matrix());
        if a.0 != b.0 {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (n, ca, cb) = (a.0, a.1, b.1);
        let mut out = Tensor::zeros(&[n, ca + cb]);
        for i in 0..n {
            out.data[i * (ca + cb)..i * (ca + cb) + ca]
                .copy_from_slice(&self.data[i * ca..(i + 1) * ca]);
            out.data[i * (ca + cb) + ca..(i + 1) * (ca + cb)]
                .copy_from_slice(&other.data[i * cb..(i + 1) * cb]);
        }
        Ok(out)
    }

    /// Contiguous column range of a matrix (or element range of a vector).
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (n, c) = self.as_matrix();
        if start > end || end > c {
            return Err(Error::SizeMismatch {
                op: "slice",
                shape: self.shape.clone(),
                expected: c,
                got: end,
            });
        }
        let w = end - start;
        let mut out = Tensor::zeros(&[n, w]);
        for i in 0..n {
            out.data[i * w..(i + 1) * w]
                .copy_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Ok(out)
    }

    /// Row sums of a matrix, shape [n, 1].
    pub fn sum_rows(&self) -> Tensor {
        let (n, c) = self.as_matrix();
        let mut out = Tensor::zeros(&[n, 1]);
        for i in 0..n {
            out.data[i] = self.data[i * c..(i + 1) * c].iter().sum();
        }
        out
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Tensor {
        let (n, c) = self.as_matrix();
        let mut out = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let row = &self.data[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out.data[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out.data[i * c + j] /= z;
            }
        }
        out
    }

    /// Interpret as (rows, cols): matrices as-is, vectors as a single row,
    /// scalars as 1 x 1.
    pub fn as_matrix(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    // ---- broadcasting -----------------------------------------------------

    /// Shape both operands broadcast to, or a shape-mismatch error.
    pub fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
        let rank = a.len().max(b.len());
        let mut out = vec![0usize; rank];
        for i in 0..rank {
            let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
            let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
            if da != db && da != 1 && db != 1 {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                });
            }
            out[i] = da.max(db);
        }
        Ok(out)
    }

    fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
        let offset = target.len() - shape.len();
        let mut strides = vec![0usize; target.len()];
        let mut acc = 1usize;
        for i in (0..shape.len()).rev() {
            strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
            acc *= shape[i];
        }
        strides
    }

    /// Elementwise binary op with broadcasting.
    pub fn broadcast_zip(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape == other.shape {
            return self.zip_map(other, f);
        }
        let target = Tensor::broadcast_shape(&self.shape, &other.shape, op)?;
        let sa = Tensor::broadcast_strides(&self.shape, &target);
        let sb = Tensor::broadcast_strides(&other.shape, &target);
        let n: usize = target.iter().product();
        let mut out = Tensor::zeros(&target);
        let rank = target.len();
        let mut idx = vec![0usize; rank];
        for flat in 0..n {
            let (mut oa, mut ob) = (0usize, 0usize);
            for d in 0..rank {
                oa += idx[d] * sa[d];
                ob += idx[d] * sb[d];
            }
            out.data[flat] = f(self.data[oa], other.data[ob]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < target[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }

    /// Materialize this tensor at a broadcast-compatible target shape.
    pub fn broadcast_to(&self, target: &[usize]) -> Result<Tensor> {
        let joint = Tensor::broadcast_shape(&self.shape, target, "broadcast")?;
        if joint != target {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: self.shape.clone(),
                rhs: target.to_vec(),
            });
        }
        let zero = Tensor::zeros(target);
        self.broadcast_zip(&zero, "broadcast", |a, _| a)
    }

    /// Sum a gradient at `target_rank`/broadcast shape back down to `shape`.
    /// Inverse of broadcasting: reduces over every expanded dimension.
    pub fn reduce_to_shape(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let rank = self.shape.len();
        let offset = rank - shape.len();
        let strides = Tensor::broadcast_strides(shape, &self.shape);
        let n_out: usize = shape.iter().product();
        let mut out = Tensor::zeros(shape);
        let mut idx = vec![0usize; rank];
        for flat in 0..self.data.len() {
            let mut o = 0usize;
            for d in offset..rank {
                o += idx[d] * strides[d];
            }
            let _ = n_out;
            out.data[o] += self.data[flat];
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < self.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }
}
