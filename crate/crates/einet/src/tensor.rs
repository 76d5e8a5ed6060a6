//! Dense row-major tensors.
//!
//! Every value flowing through the detector is a [`Tensor`]: images are
//! `3×H×W`, feature maps `C×H×W`, channel descriptors `C×1×1`, spatial maps
//! `1×H×W`, losses `[1]`. Values are required to stay finite; a NaN or Inf
//! is treated as an error state, not a number.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![S::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    /// Builds a tensor, checking the element count and rejecting non-finite
    /// payloads and zero extents.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape("from_vec", format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} wants {} values, got {}", shape, expected, data.len()),
            ));
        }
        let t = Tensor { shape: shape.to_vec(), data };
        t.check_finite("from_vec")?;
        Ok(t)
    }

    /// Like `from_vec` but trusted (no finiteness scan); used by internal
    /// kernels whose inputs were already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::shape("item", format!("expected 1 element, got {}", self.data.len())));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(op, "non-finite value encountered"))
        }
    }

    /// Dimensions of a rank-3 `C×H×W` tensor.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            other => Err(Error::shape(op, format!("expected rank-3 tensor, got shape {other:?}"))),
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> S {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, factor: S) -> Tensor<S> {
        self.map(|v| v * factor)
    }

    /// Converts element type, rounding through `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| T::from_f64(Scalar::to_f64(v))).collect() }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    /// Broadcast-compatible output shape: same rank, each axis equal or 1 on
    /// one side. No implicit reshape.
    pub fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
        if a.len() != b.len() {
            return Err(Error::shape(op, format!("rank mismatch: {a:?} vs {b:?}")));
        }
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                if x == y || x == 1 || y == 1 {
                    Ok(x.max(y))
                } else {
                    Err(Error::shape(op, format!("incompatible shapes {a:?} vs {b:?}")))
                }
            })
            .collect()
    }

    /// Elementwise combine with singleton-axis broadcasting.
    pub fn zip_broadcast(&self, other: &Tensor<S>, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let out_shape = Self::broadcast_shape(&self.shape, &other.shape, op)?;
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor { shape: out_shape, data });
        }
        let n: usize = out_shape.iter().product();
        let rank = out_shape.len();
        let sa = strides_with_broadcast(&self.shape, &out_shape);
        let sb = strides_with_broadcast(&other.shape, &out_shape);
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        for _ in 0..n {
            let mut ia = 0;
            let mut ib = 0;
            for d in 0..rank {
                ia += idx[d] * sa[d];
                ib += idx[d] * sb[d];
            }
            data.push(f(self.data[ia], other.data[ib]));
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Tensor { shape: out_shape, data })
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip_broadcast(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip_broadcast(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip_broadcast(other, "mul", |a, b| a * b)
    }

    /// Sums `self` down to `target` shape, inverting a broadcast. Used by
    /// backward passes of broadcasting ops.
    pub fn reduce_to_shape(&self, target: &[usize]) -> Result<Tensor<S>> {
        if self.shape == target {
            return Ok(self.clone());
        }
        if self.shape.len() != target.len() {
            return Err(Error::shape("reduce_to_shape", format!("rank mismatch: {:?} vs {target:?}", self.shape)));
        }
        let rank = target.len();
        let mut out = Tensor::zeros(target);
        let st = strides_with_broadcast(target, &self.shape);
        let mut idx = vec![0usize; rank];
        for &v in &self.data {
            let mut it = 0;
            for d in 0..rank {
                it += idx[d] * st[d];
            }
            out.data[it] += v;
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < self.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }
}

/// Row-major strides, with zero stride on broadcast (size-1) axes.
fn strides_with_broadcast(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out_shape[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}
