//! Minimal differentiable numeric core.
//!
//! Everything here operates on dense five-dimensional [`Tensor`]s laid out
//! as `(batch, channels, depth, height, width)` with width varying fastest.
//! Each forward operation has an explicit backward companion; there is no
//! general autodiff graph. The graph executor in [`crate::nets`] wires these
//! primitives together.
//!
//! All kernels are generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks. Reductions
//! are performed in a fixed order, so results do not depend on the number
//! of worker threads.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

pub mod activation;
pub mod conv;
pub mod cross;
pub mod dropout;
pub mod gradcheck;
pub mod linear;
pub mod norm;
pub mod pool;

pub use activation::{activation, activation_backward, softmax2, Activation};
pub use conv::{
    conv3d_dense, conv3d_dense_backward, transpose_conv3d, transpose_conv3d_backward,
    DenseKernel3D, KernelGrads, Padding,
};
pub use cross::{conv3d_cross, conv3d_cross_backward, materialize_cross, CrossGrads, CrossKernel3D};
pub use dropout::dropout;
pub use gradcheck::{grad_check, GradCheckReport};
pub use linear::{linear, linear_backward, LinearGrads, LinearParams};
pub use norm::{batchnorm, batchnorm_backward, BatchNormCache, BatchNormGrads, BatchNormState};
pub use pool::{maxpool3d, maxpool3d_backward, MaxPoolIndices};

/// Floating point element type of a tensor.
pub trait Real:
    Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C ← αAB + βC` on strided matrices (raw `matrixmultiply` call).
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices, with `c` not aliasing `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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
    unsafe fn gemm_raw(
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
    #[inline(always)]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
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
    #[inline(always)]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Whether a layer runs with training-time behaviour (batch statistics,
/// active dropout) or inference behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Five-dimensional tensor shape: batch, channels, depth, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, depth: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            depth,
            height,
            width,
        }
    }

    /// Shape of a batch of cubic single-extent volumes.
    pub const fn cube(batch: usize, channels: usize, side: usize) -> Self {
        Shape::new(batch, channels, side, side, side)
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.spatial_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial_len(&self) -> usize {
        self.depth * self.height * self.width
    }

    /// `[depth, height, width]`.
    pub fn spatial(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub fn with_spatial(&self, spatial: [usize; 3]) -> Shape {
        Shape::new(self.batch, self.channels, spatial[0], spatial[1], spatial[2])
    }

    pub fn with_channels(&self, channels: usize) -> Shape {
        Shape {
            channels,
            ..*self
        }
    }

    pub fn as_array(&self) -> [usize; 5] {
        [self.batch, self.channels, self.depth, self.height, self.width]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}x{}",
            self.batch, self.channels, self.depth, self.height, self.width
        )
    }
}

/// Dense tensor with contiguous storage in width-fastest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Self {
        Tensor {
            shape,
            data: (0..shape.len()).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Spatial plane of one (batch, channel) pair.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let s = self.shape.spatial_len();
        let start = (n * self.shape.channels + c) * s;
        &self.data[start..start + s]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let s = self.shape.spatial_len();
        let start = (n * self.shape.channels + c) * s;
        &mut self.data[start..start + s]
    }

    /// All channels of one batch item.
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.shape.channels * self.shape.spatial_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn map_in_place(&mut self, f: impl Fn(T) -> T) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Concatenates tensors along the channel axis. All inputs must agree in
    /// batch and spatial extent.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?
            .shape;
        for p in parts {
            if p.shape.batch != first.batch || p.shape.spatial() != first.spatial() {
                return Err(Error::shape(format!(
                    "concat mismatch: {} vs {first}",
                    p.shape
                )));
            }
        }
        let channels = parts.iter().map(|p| p.shape.channels).sum();
        let shape = first.with_channels(channels);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..first.batch {
            for p in parts {
                data.extend_from_slice(p.item(n));
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat_channels`] for gradients.
    pub fn split_channels(&self, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
        if widths.iter().sum::<usize>() != self.shape.channels {
            return Err(Error::shape(format!(
                "split widths {widths:?} do not cover {} channels",
                self.shape.channels
            )));
        }
        let s = self.shape.spatial_len();
        let mut out: Vec<Tensor<T>> = widths
            .iter()
            .map(|&c| Tensor::zeros(self.shape.with_channels(c)))
            .collect();
        for n in 0..self.shape.batch {
            let item = self.item(n);
            let mut offset = 0;
            for (part, &c) in out.iter_mut().zip(widths) {
                let len = c * s;
                part.data[n * len..(n + 1) * len].copy_from_slice(&item[offset..offset + len]);
                offset += len;
            }
        }
        Ok(out)
    }

    /// Stacks single-item tensors into one batch.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack of zero tensors"))?
            .shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first {
                return Err(Error::shape(format!("stack mismatch: {} vs {first}", t.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape {
                batch: first.batch * items.len(),
                ..first
            },
            data,
        })
    }

    /// Extracts batch item `n` as a single-item tensor.
    pub fn select(&self, n: usize) -> Tensor<T> {
        Tensor {
            shape: Shape {
                batch: 1,
                ..self.shape
            },
            data: self.item(n).to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "add mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// Row-major view of a matrix stored in a slice: `rows × cols` with the
/// given row stride, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            stride: cols,
            transposed: false,
        }
    }

    /// The same storage read as its transpose.
    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.stride as isize)
        } else {
            (self.stride as isize, 1)
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.stride + self.cols <= self.data.len()
    }
}

/// `c ← a·b + beta·c`, where `c` is `m×n` row-major with row stride `ldc`.
pub(crate) fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T], ldc: usize) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert!(k == k2 && a.fits() && b.fits() && n <= ldc, "gemm operands do not conform");
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * ldc + n <= c.len(), "gemm output too small");
    let ((rsa, csa), (rsb, csb)) = (a.strides(), b.strides());
    // SAFETY: bounds checked above; `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        )
    }
}

/// `y += a * x` over equal-length slices.
#[inline(always)]
pub(crate) fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    let n = y.len().min(x.len());
    let (y, x) = (&mut y[..n], &x[..n]);
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with eight independent accumulators, so the compiler can
/// vectorise it. The reduction order is fixed.
#[inline(always)]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (ca, cb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_recovers_parts() {
        let a = Tensor::<f32>::from_fn(Shape::new(2, 1, 2, 2, 2), |i| i as f32);
        let b = Tensor::<f32>::from_fn(Shape::new(2, 3, 2, 2, 2), |i| -(i as f32));
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), Shape::new(2, 4, 2, 2, 2));
        assert_eq!(cat.plane(1, 0), a.plane(1, 0));
        assert_eq!(cat.plane(1, 2), b.plane(1, 1));
        let parts = cat.split_channels(&[1, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn from_vec_rejects_length_mismatch() {
        assert!(Tensor::<f32>::from_vec(Shape::cube(1, 1, 2), vec![0.0; 7]).is_err());
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }
}
