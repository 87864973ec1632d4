//! Dense row-major `f64` tensors.
//!
//! Broadcasting aligns trailing axes; an axis broadcasts iff one of the two
//! extents is 1. A scalar is a tensor of shape `[1]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} elements]", self.shape, self.data.len())
        }
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return shape_err("shape must have at least one axis");
    }
    if shape.iter().any(|&d| d == 0) {
        return shape_err(format!("shape {shape:?} has a zero extent"));
    }
    Ok(())
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(shape),
                data.len()
            ));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![v; numel(shape)] })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    /// Same shape, every element zero. Infallible because `self` is already valid.
    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != self.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn transpose2d(&self) -> Result<Self> {
        let [m, n] = self.shape[..] else {
            return shape_err(format!("transpose expects a matrix, got {:?}", self.shape));
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self { shape: vec![n, m], data: out })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise binary op under the broadcast rule.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Self { shape: self.shape.clone(), data });
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape)?;
        // Fast path: one operand repeats along leading axes only.
        if self.shape == out_shape && is_trailing(&other.shape, &out_shape) {
            let data = self.data.chunks(other.data.len()).flat_map(|c| c.iter().zip(&other.data).map(|(&a, &b)| f(a, b))).collect();
            return Ok(Self { shape: out_shape, data });
        }
        if other.shape == out_shape && is_trailing(&self.shape, &out_shape) {
            let data = other.data.chunks(self.data.len()).flat_map(|c| self.data.iter().zip(c).map(|(&a, &b)| f(a, b))).collect();
            return Ok(Self { shape: out_shape, data });
        }
        let ia = BroadcastIndex::new(&self.shape, &out_shape);
        let ib = BroadcastIndex::new(&other.shape, &out_shape);
        let n = numel(&out_shape);
        let mut data = Vec::with_capacity(n);
        let mut counter = vec![0usize; out_shape.len()];
        let (mut oa, mut ob) = (0usize, 0usize);
        for _ in 0..n {
            data.push(f(self.data[oa], other.data[ob]));
            // Odometer increment over the output index.
            for ax in (0..out_shape.len()).rev() {
                counter[ax] += 1;
                oa += ia.strides[ax];
                ob += ib.strides[ax];
                if counter[ax] < out_shape[ax] {
                    break;
                }
                oa -= ia.strides[ax] * out_shape[ax];
                ob -= ib.strides[ax] * out_shape[ax];
                counter[ax] = 0;
            }
        }
        Ok(Self { shape: out_shape, data })
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        let target = broadcast_shape(&self.shape, shape)?;
        if target != shape {
            return shape_err(format!("cannot broadcast {:?} to {shape:?}", self.shape));
        }
        let zeros = Tensor::zeros(shape)?;
        zeros.zip_with(self, |_, b| b)
    }

    /// Sums over every axis where `shape` (left-padded with ones) has extent 1
    /// and `self` does not, then reshapes to `shape`. Inverse of broadcasting.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let target = broadcast_shape(shape, &self.shape)?;
        if target != self.shape {
            return shape_err(format!("cannot sum {:?} down to {shape:?}", self.shape));
        }
        let mut out = vec![0.0; numel(shape)];
        if is_trailing(shape, &self.shape) {
            for chunk in self.data.chunks(out.len()) {
                for (o, v) in out.iter_mut().zip(chunk) {
                    *o += v;
                }
            }
            return Ok(Self { shape: shape.to_vec(), data: out });
        }
        let map = BroadcastIndex::new(shape, &self.shape);
        let mut counter = vec![0usize; self.shape.len()];
        let mut o = 0usize;
        for &v in &self.data {
            out[o] += v;
            for ax in (0..self.shape.len()).rev() {
                counter[ax] += 1;
                o += map.strides[ax];
                if counter[ax] < self.shape[ax] {
                    break;
                }
                o -= map.strides[ax] * self.shape[ax];
                counter[ax] = 0;
            }
        }
        Ok(Self { shape: shape.to_vec(), data: out })
    }

    /// Sum over the given axes, keeping them with extent 1.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Self> {
        if let Some(&bad) = axes.iter().find(|&&a| a >= self.rank()) {
            return shape_err(format!("axis {bad} out of range for {:?}", self.shape));
        }
        let kept: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        self.sum_to(&kept)
    }
}

/// True when `small`, minus leading unit axes, equals the trailing axes of
/// `full`, so it repeats contiguously across `full`.
fn is_trailing(small: &[usize], full: &[usize]) -> bool {
    let lead = small.iter().take_while(|&&d| d == 1).count();
    let core = &small[lead..];
    core.len() <= full.len() && full[full.len() - core.len()..] == *core && !core.is_empty()
}

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err(format!("shapes {a:?} and {b:?} are not broadcastable")),
        };
    }
    Ok(out)
}

/// Per-output-axis element strides into a (possibly broadcast) source tensor.
struct BroadcastIndex {
    strides: Vec<usize>,
}

impl BroadcastIndex {
    fn new(src: &[usize], out: &[usize]) -> Self {
        let pad = out.len() - src.len();
        let mut strides = vec![0; out.len()];
        let mut acc = 1;
        for ax in (0..out.len()).rev() {
            if ax >= pad {
                let d = src[ax - pad];
                strides[ax] = if d == 1 { 0 } else { acc };
                acc *= d;
            }
        }
        Self { strides }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    /// Independent broadcast oracle: explicit multi-index arithmetic.
    fn brute_broadcast_add(a: &Tensor, b: &Tensor) -> Tensor {
        let out = broadcast_shape(a.shape(), b.shape()).unwrap();
        let n = numel(&out);
        let mut data = vec![0.0; n];
        for (flat, slot) in data.iter_mut().enumerate() {
            let mut idx = vec![0; out.len()];
            let mut r = flat;
            for ax in (0..out.len()).rev() {
                idx[ax] = r % out[ax];
                r /= out[ax];
            }
            let lookup = |src: &Tensor| {
                let pad = out.len() - src.rank();
                let mut off = 0;
                for ax in 0..src.rank() {
                    let d = src.shape()[ax];
                    let i = if d == 1 { 0 } else { idx[ax + pad] };
                    off = off * d + i;
                }
                src.data()[off]
            };
            *slot = lookup(a) + lookup(b);
        }
        Tensor::new(&out, data).unwrap()
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[], vec![]).is_err());
        assert!(Tensor::zeros(&[2, 0]).is_err());
    }

    #[test]
    fn row_broadcast() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2], &[10., 20.]);
        let c = a.zip_with(&b, |x, y| x + y).unwrap();
        assert_eq!(c, t(&[2, 2], &[11., 22., 13., 24.]));
        assert_eq!(c, brute_broadcast_add(&a, &b));
    }

    #[test]
    fn general_broadcast_matches_oracle() {
        let a = t(&[2, 1, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[4, 1], &[0.5, 1.5, 2.5, 3.5]);
        let c = a.zip_with(&b, |x, y| x + y).unwrap();
        assert_eq!(c.shape(), &[2, 4, 3]);
        assert_eq!(c, brute_broadcast_add(&a, &b));
    }

    #[test]
    fn incompatible_shapes() {
        let a = t(&[2, 3], &[0.; 6]);
        let b = t(&[2], &[0.; 2]);
        assert!(a.zip_with(&b, |x, y| x + y).is_err());
    }

    #[test]
    fn row_broadcast_matches_index_arithmetic() {
        let a = Tensor::new(&[2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        for small in [vec![4], vec![1, 4], vec![3, 4], vec![1, 3, 4]] {
            let n = numel(&small);
            let b = Tensor::new(&small, (0..n).map(|i| 100.0 * i as f64).collect()).unwrap();
            let ab = a.zip_with(&b, |x, y| x - y).unwrap();
            let ba = b.zip_with(&a, |x, y| x - y).unwrap();
            let summed = a.sum_to(&small).unwrap();
            for i in 0..24 {
                let j = i % n;
                assert_eq!(ab.data()[i], i as f64 - 100.0 * j as f64);
                assert_eq!(ba.data()[i], 100.0 * j as f64 - i as f64);
            }
            for j in 0..n {
                let want: f64 = (0..24).filter(|i| i % n == j).map(|i| i as f64).sum();
                assert_eq!(summed.data()[j], want, "{small:?}");
            }
        }
    }

    #[test]
    fn sum_to_inverts_broadcast() {
        let g = Tensor::ones(&[3, 4]).unwrap();
        assert_eq!(g.sum_to(&[4]).unwrap(), t(&[4], &[3.; 4]));
        assert_eq!(g.sum_to(&[3, 1]).unwrap(), t(&[3, 1], &[4.; 3]));
        assert_eq!(g.sum_to(&[1]).unwrap(), t(&[1], &[12.]));
    }

    #[test]
    fn transpose() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(a.transpose2d().unwrap(), t(&[3, 2], &[1., 4., 2., 5., 3., 6.]));
    }
}
