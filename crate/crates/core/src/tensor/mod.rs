//! Dense NCHW tensors and the hand-written layers the pose network needs.
//!
//! There is no computation graph: every layer is a pair of free functions
//! (`*_forward` / `*_backward`) and the caller threads the caches through.
//! Parameters carry their own gradient buffers, which are allocated the first
//! time a backward pass writes to them.

mod conv;
mod gradcheck;
mod layers;
mod optim;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

pub use conv::{conv2d_backward, conv2d_forward, ConvParams};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{
    channel_dropout_backward, channel_dropout_forward, concat_channels, maxpool2_backward,
    maxpool2_forward, relu_backward, relu_forward, split_channels, DropoutMask, Mode, PoolCache,
};
pub use optim::{LrGroups, ParamRef, Sgd};

/// Scalar type a [`Tensor`] can hold. Implemented for `f32` (training) and
/// `f64` (gradient checking).
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// The strides and extents must address memory inside `a`, `b` and `c`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A dense row-major array with an optional gradient buffer of the same shape.
///
/// Rank-4 tensors use the layout `[batch, channel, row, col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor extents must be positive: {shape:?}"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("extents must be positive: {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first access.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Both buffers at once, for optimizers that read one and write the other.
    pub(crate) fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    /// Extents of a rank-4 tensor as `[n, c, h, w]`.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::Shape(format!(
                "expected a rank-4 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    /// Returns an error naming `context` if any value is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: None,
        }
    }

    /// Element-wise sum; shapes must agree exactly.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Copy of batch item `n` as a tensor with batch extent 1.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        let [nb, c, h, w] = self.dims4()?;
        if n >= nb {
            return Err(Error::Shape(format!("batch index {n} out of {nb}")));
        }
        let plane = c * h * w;
        Tensor::from_vec(&[1, c, h, w], self.data[n * plane..(n + 1) * plane].to_vec())
    }

    /// Stacks rank-4 tensors with batch extent 1 along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let [_, c, h, w] = first.dims4()?;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for item in items {
            if item.shape != [1, c, h, w] {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    item.shape, first.shape
                )));
            }
            data.extend_from_slice(&item.data);
        }
        Tensor::from_vec(&[items.len(), c, h, w], data)
    }
}

/// Feeds the sign pattern (`v > 0`) of `t` into `h`. Used to fingerprint
/// which side of each relu kink a forward pass landed on.
pub fn hash_signs<T: Real>(t: &Tensor<T>, h: &mut impl std::hash::Hasher) {
    for chunk in t.data().chunks(64) {
        let bits = chunk
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &v)| acc | (((v > T::zero()) as u64) << i));
        h.write_u64(bits);
    }
}

/// Flat offset of `[n, c, y, x]` in a rank-4 tensor of extents `dims`.
#[inline]
pub fn offset4(dims: [usize; 4], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * dims[1] + c) * dims[2] + y) * dims[3] + x
}
