//! Fixed sparse linear maps `y = S x`.
//!
//! Pooling, upsampling, embedding lookup and concatenation are all linear in
//! the tensor being differentiated, so each is expressed as a map whose adjoint
//! is the transposed map. Higher derivatives then come for free.

use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    /// CSR over output elements.
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMap {
    /// Builds from per-output-element lists of `(input index, weight)`.
    pub fn from_rows<I>(in_shape: &[usize], out_shape: &[usize], rows: I) -> Self
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = (usize, f64)>,
    {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (c, v) in row {
                debug_assert!(c < numel(in_shape));
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        assert_eq!(row_ptr.len() - 1, numel(out_shape), "one row per output element");
        Self { in_shape: in_shape.to_vec(), out_shape: out_shape.to_vec(), row_ptr, cols, vals }
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.shape(), self.in_shape.as_slice());
        let xd = x.data();
        let data = self
            .row_ptr
            .windows(2)
            .map(|w| (w[0]..w[1]).map(|p| self.vals[p] * xd[self.cols[p]]).sum())
            .collect();
        Tensor::from_parts(self.out_shape.clone(), data)
    }

    pub fn apply_transpose(&self, y: &Tensor) -> Tensor {
        debug_assert_eq!(y.shape(), self.out_shape.as_slice());
        let mut out = vec![0.0; numel(&self.in_shape)];
        for (r, w) in self.row_ptr.windows(2).enumerate() {
            let yv = y.data()[r];
            for p in w[0]..w[1] {
                out[self.cols[p]] += self.vals[p] * yv;
            }
        }
        Tensor::from_parts(self.in_shape.clone(), out)
    }
}
