//! Dense rank-4 tensors and the closed set of differentiable kernels the
//! fusion network is built from.
//!
//! Every kernel is a pair of free functions: a forward pass that returns its
//! output (plus whatever it needs to remember) and a backward pass that maps
//! an upstream gradient to input gradients and accumulates parameter
//! gradients. There is no general tape; the network wires the pairs together.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod crop;
pub mod depthwise;
pub mod dropout;
pub mod optim;
pub mod se;

use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::scalar::Scalar;

/// Row-major `(batch, channel, height, width)` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for h in 0..shape[2] {
                    for w in 0..shape[3] {
                        data.push(f([b, c, h, w]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Spatial plane size `height * width`.
    #[inline]
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: T) {
        let o = self.offset(b, c, h, w);
        self.data[o] = v;
    }

    /// All channels of one batch item.
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.shape[1] * self.plane();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.shape[1] * self.plane();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// One spatial plane.
    pub fn plane_slice(&self, b: usize, c: usize) -> &[T] {
        let p = self.plane();
        let o = (b * self.shape[1] + c) * p;
        &self.data[o..o + p]
    }

    pub fn plane_slice_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let p = self.plane();
        let o = (b * self.shape[1] + c) * p;
        &mut self.data[o..o + p]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_same_shape("add", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::of(x.to_f64_lossy())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let mut shape = first.shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.expect_same_shape("stack", t)?;
            data.extend_from_slice(&t.data);
        }
        shape[0] *= items.len();
        Ok(Self { shape, data })
    }

    /// Copies batch item `b` into a standalone tensor with batch 1.
    pub fn slice_item(&self, b: usize) -> Self {
        Self {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.item(b).to_vec(),
        }
    }

    pub(crate) fn expect_same_shape(&self, op: &'static str, other: &Tensor<T>) -> Result<()> {
        let axes = [Axis::Batch, Axis::Channel, Axis::Height, Axis::Width];
        for (i, axis) in axes.into_iter().enumerate() {
            if self.shape[i] != other.shape[i] {
                return Err(Error::shape(op, axis, self.shape[i], other.shape[i]));
            }
        }
        Ok(())
    }
}

/// A learnable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
            trainable: self.trainable,
        }
    }
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, dropout off.
    Eval,
    /// Running statistics, dropout active.
    Mc,
}

impl Mode {
    pub fn uses_batch_stats(self) -> bool {
        matches!(self, Mode::Train)
    }

    pub fn dropout_active(self) -> bool {
        matches!(self, Mode::Train | Mode::Mc)
    }
}

/// Sum with eight interleaved accumulators; the order is fixed, so results
/// are reproducible, and the independent chains vectorise.
#[inline]
pub(crate) fn lane_sum<T: Scalar>(v: &[T]) -> T {
    lane_fold(v.len(), |i| v[i])
}

/// `sum(a[i] * b[i])` with the same accumulation scheme as [`lane_sum`].
#[inline]
pub(crate) fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    lane_fold(n, |i| a[i] * b[i])
}

#[inline(always)]
fn lane_fold<T: Scalar>(n: usize, f: impl Fn(usize) -> T) -> T {
    let mut lanes = [T::zero(); 8];
    let full = n / 8 * 8;
    let mut i = 0;
    while i < full {
        for (l, lane) in lanes.iter_mut().enumerate() {
            *lane += f(i + l);
        }
        i += 8;
    }
    for (l, j) in (full..n).enumerate() {
        lanes[l] += f(j);
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
        + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
}
