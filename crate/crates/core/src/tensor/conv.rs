//! Dense 3D convolution, its strided form and the stride-2 transposed
//! convolution used by the decoder.
//!
//! The three raw primitives (forward, input gradient, weight gradient) are
//! tiled im2col + GEMM. The transposed convolution is expressed through the same primitives: its
//! forward pass is the input gradient of a strided convolution and vice
//! versa.

use rayon::prelude::*;

use super::{gemm, Mat, Real, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Symmetric zero padding of `k / 2` on every side (odd `k` only).
    Same,
    Valid,
}

impl Padding {
    pub fn amount(self, k: usize) -> usize {
        match self {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        }
    }
}

/// Weights of shape `(out_channels, in_channels, k, k, k)` plus optional
/// per-output-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseKernel3D<T = f32> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub size: usize,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> DenseKernel3D<T> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        size: usize,
        weights: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        let expected = out_channels * in_channels * size * size * size;
        if weights.len() != expected {
            return Err(Error::shape(format!(
                "kernel {out_channels}x{in_channels}x{size}^3 needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::shape(format!(
                    "bias length {} != out channels {out_channels}",
                    b.len()
                )));
            }
        }
        Ok(DenseKernel3D {
            out_channels,
            in_channels,
            size,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, size: usize, with_bias: bool) -> Self {
        DenseKernel3D {
            out_channels,
            in_channels,
            size,
            weights: vec![T::zero(); out_channels * in_channels * size * size * size],
            bias: with_bias.then(|| vec![T::zero(); out_channels]),
        }
    }

    pub fn taps(&self) -> usize {
        self.size * self.size * self.size
    }

    #[inline]
    pub fn index(&self, o: usize, i: usize, kz: usize, ky: usize, kx: usize) -> usize {
        (((o * self.in_channels + i) * self.size + kz) * self.size + ky) * self.size + kx
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Kernel with input and output channel roles exchanged; bias dropped.
    pub fn swap_channels(&self) -> Self {
        DenseKernel3D {
            out_channels: self.in_channels,
            in_channels: self.out_channels,
            size: self.size,
            weights: swap_channel_axes(&self.weights, self.out_channels, self.in_channels, self.taps()),
            bias: None,
        }
    }
}

fn swap_channel_axes<T: Real>(w: &[T], outer: usize, inner: usize, taps: usize) -> Vec<T> {
    let mut out = vec![T::zero(); w.len()];
    for o in 0..outer {
        for i in 0..inner {
            let src = (o * inner + i) * taps;
            let dst = (i * outer + o) * taps;
            out[dst..dst + taps].copy_from_slice(&w[src..src + taps]);
        }
    }
    out
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct KernelGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub inp: [usize; 3],
    pub out: [usize; 3],
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let total = n + 2 * pad;
    (total >= k).then(|| (total - k) / stride + 1)
}

impl Geom {
    pub fn new(inp: [usize; 3], k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = out_extent(inp[a], k, stride, pad).ok_or_else(|| {
                Error::shape(format!(
                    "spatial extent {inp:?} too small for kernel {k} with padding {pad}"
                ))
            })?;
        }
        Ok(Geom {
            inp,
            out,
            k,
            stride,
            pad,
        })
    }
}

/// Output indices `o` in `[lo, hi)` with `0 <= o * s + off < n_in`.
#[inline]
pub(crate) fn valid_range(n_out: usize, n_in: usize, s: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(s)
    };
    let last = n_in as isize - 1 - off;
    let hi = if last < 0 {
        0
    } else {
        (last as usize / s + 1).min(n_out)
    };
    (lo, hi.max(lo))
}

/// Output voxels per im2col tile, sized so the column buffer stays near
/// 1 MiB of `f32`.
fn tile_len(rows: usize, plane: usize) -> usize {
    (262_144 / rows.max(1)).max(64).min(plane.max(1))
}

/// Visits the output-row segments covering flattened output voxels
/// `[p0, p1)`: `(offset into the tile, oz, oy, ox0, ox1)`.
fn for_each_segment(g: &Geom, p0: usize, p1: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let [_, oh, ow] = g.out;
    let mut p = p0;
    while p < p1 {
        let (oz, oy, ox0) = (p / (oh * ow), (p / ow) % oh, p % ow);
        let ox1 = ow.min(ox0 + (p1 - p));
        f(p - p0, oz, oy, ox0, ox1);
        p += ox1 - ox0;
    }
}

/// Input row index for output row `o` and kernel offset, if inside.
#[inline]
fn source(o: usize, kk: usize, g: &Geom, n: usize) -> Option<usize> {
    let i = (o * g.stride + kk) as isize - g.pad as isize;
    (i >= 0 && (i as usize) < n).then_some(i as usize)
}

/// Column matrix of one batch item: row `i·k³ + tap`, column = output
/// voxel `p0 + j`.
fn im2col<T: Real>(xn: &[T], in_c: usize, g: &Geom, p0: usize, p1: usize, col: &mut [T]) {
    let [id, ih, iw] = g.inp;
    let (k, s) = (g.k, g.stride);
    let len = p1 - p0;
    let mut r = 0;
    for i in 0..in_c {
        let xi = &xn[i * id * ih * iw..(i + 1) * id * ih * iw];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[r * len..(r + 1) * len];
                    let offx = kx as isize - g.pad as isize;
                    let (x0, x1) = valid_range(g.out[2], iw, s, offx);
                    for_each_segment(g, p0, p1, |j, oz, oy, ox0, ox1| {
                        let seg = &mut row[j..j + ox1 - ox0];
                        let (Some(iz), Some(iy)) = (source(oz, kz, g, id), source(oy, ky, g, ih)) else {
                            seg.fill(T::zero());
                            return;
                        };
                        let xrow = &xi[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                        let (a, b) = (x0.clamp(ox0, ox1), x1.clamp(ox0, ox1));
                        seg[..a - ox0].fill(T::zero());
                        seg[b - ox0..].fill(T::zero());
                        if a >= b {
                            return;
                        }
                        if s == 1 {
                            let src = (a as isize + offx) as usize;
                            seg[a - ox0..b - ox0].copy_from_slice(&xrow[src..src + (b - a)]);
                        } else {
                            for ox in a..b {
                                seg[ox - ox0] = xrow[((ox * s) as isize + offx) as usize];
                            }
                        }
                    });
                    r += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a column matrix into `gx`.
fn col2im<T: Real>(col: &[T], in_c: usize, g: &Geom, p0: usize, p1: usize, gx: &mut [T]) {
    let [id, ih, iw] = g.inp;
    let (k, s) = (g.k, g.stride);
    let len = p1 - p0;
    let mut r = 0;
    for i in 0..in_c {
        let gi = &mut gx[i * id * ih * iw..(i + 1) * id * ih * iw];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[r * len..(r + 1) * len];
                    let offx = kx as isize - g.pad as isize;
                    let (x0, x1) = valid_range(g.out[2], iw, s, offx);
                    for_each_segment(g, p0, p1, |j, oz, oy, ox0, ox1| {
                        let (Some(iz), Some(iy)) = (source(oz, kz, g, id), source(oy, ky, g, ih)) else {
                            return;
                        };
                        let grow = &mut gi[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                        let (a, b) = (x0.clamp(ox0, ox1), x1.clamp(ox0, ox1));
                        if a >= b {
                            return;
                        }
                        let seg = &row[j + a - ox0..j + b - ox0];
                        if s == 1 {
                            let dst = (a as isize + offx) as usize;
                            for (d, &v) in grow[dst..dst + (b - a)].iter_mut().zip(seg) {
                                *d += v;
                            }
                        } else {
                            for (ox, &v) in (a..b).zip(seg) {
                                grow[((ox * s) as isize + offx) as usize] += v;
                            }
                        }
                    });
                    r += 1;
                }
            }
        }
    }
}

/// Forward convolution as tiled im2col + GEMM, parallel over batch items.
pub(crate) fn conv_forward_raw<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    bias: Option<&[T]>,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let in_c = xs.channels;
    let rows = in_c * k * k * k;
    debug_assert_eq!(w.len(), out_c * rows);
    let g = Geom::new(xs.spatial(), k, stride, pad)?;
    let oshape = Shape::new(xs.batch, out_c, g.out[0], g.out[1], g.out[2]);
    let mut out = Tensor::zeros(oshape);
    let plane = oshape.spatial_len();
    if plane == 0 || out_c == 0 {
        return Ok(out);
    }
    let tile = tile_len(rows, plane);
    out.data_mut()
        .par_chunks_mut(out_c * plane)
        .enumerate()
        .for_each(|(n, on)| {
            for (o, op) in on.chunks_mut(plane).enumerate() {
                op.fill(bias.map_or(T::zero(), |b| b[o]));
            }
            let mut col = vec![T::zero(); rows * tile];
            for p0 in (0..plane).step_by(tile) {
                let p1 = (p0 + tile).min(plane);
                let len = p1 - p0;
                im2col(x.item(n), in_c, &g, p0, p1, &mut col);
                gemm(
                    Mat::new(w, out_c, rows),
                    Mat::new(&col[..rows * len], rows, len),
                    T::one(),
                    &mut on[p0..],
                    plane,
                );
            }
        });
    Ok(out)
}

/// Gradient with respect to the input; `gy` has `out_c` channels and the
/// returned tensor has `in_c` channels of extent `g.inp`.
pub(crate) fn conv_backward_input_raw<T: Real>(gy: &Tensor<T>, w: &[T], in_c: usize, g: &Geom) -> Tensor<T> {
    let gs = gy.shape();
    let out_c = gs.channels;
    let rows = in_c * g.k * g.k * g.k;
    let plane = g.out.iter().product::<usize>();
    let mut gx = Tensor::zeros(Shape::new(gs.batch, in_c, g.inp[0], g.inp[1], g.inp[2]));
    let item = gx.shape().channels * gx.shape().spatial_len();
    if plane == 0 || item == 0 {
        return gx;
    }
    let tile = tile_len(rows, plane);
    gx.data_mut().par_chunks_mut(item).enumerate().for_each(|(n, gxn)| {
        let gyn = gy.item(n);
        let mut col = vec![T::zero(); rows * tile];
        for p0 in (0..plane).step_by(tile) {
            let p1 = (p0 + tile).min(plane);
            let len = p1 - p0;
            let gyt = Mat {
                data: &gyn[p0..],
                rows: out_c,
                cols: len,
                stride: plane,
                transposed: false,
            };
            gemm(Mat::new(w, out_c, rows).t(), gyt, T::zero(), &mut col[..rows * len], len);
            col2im(&col[..rows * len], in_c, g, p0, p1, gxn);
        }
    });
    gx
}

/// Gradient with respect to weights `(out_c, in_c, k^3)` and bias. Items
/// are reduced in order in `f64`.
pub(crate) fn conv_backward_weight_raw<T: Real>(x: &Tensor<T>, gy: &Tensor<T>, g: &Geom) -> (Vec<T>, Vec<T>) {
    let xs = x.shape();
    let in_c = xs.channels;
    let out_c = gy.shape().channels;
    let rows = in_c * g.k * g.k * g.k;
    let plane = g.out.iter().product::<usize>();
    let tile = tile_len(rows, plane);
    let per_item: Vec<Vec<T>> = (0..xs.batch)
        .into_par_iter()
        .map(|n| {
            let mut gw = vec![T::zero(); out_c * rows];
            if plane == 0 {
                return gw;
            }
            let gyn = gy.item(n);
            let mut col = vec![T::zero(); rows * tile];
            for p0 in (0..plane).step_by(tile) {
                let p1 = (p0 + tile).min(plane);
                let len = p1 - p0;
                im2col(x.item(n), in_c, g, p0, p1, &mut col);
                let gyt = Mat {
                    data: &gyn[p0..],
                    rows: out_c,
                    cols: len,
                    stride: plane,
                    transposed: false,
                };
                gemm(gyt, Mat::new(&col[..rows * len], rows, len).t(), T::one(), &mut gw, rows);
            }
            gw
        })
        .collect();
    let mut acc = vec![0.0f64; out_c * rows];
    for gw in &per_item {
        for (a, v) in acc.iter_mut().zip(gw) {
            *a += v.as_f64();
        }
    }
    let gb = (0..out_c)
        .map(|o| {
            let s: f64 = (0..xs.batch).map(|n| gy.plane(n, o).iter().map(|v| v.as_f64()).sum::<f64>()).sum();
            T::lit(s)
        })
        .collect();
    (acc.into_iter().map(T::lit).collect(), gb)
}

fn check_input<T: Real>(x: &Tensor<T>, kernel: &DenseKernel3D<T>, what: &str) -> Result<()> {
    if x.shape().channels != kernel.in_channels {
        return Err(Error::shape(format!(
            "{what}: input has {} channels, kernel expects {}",
            x.shape().channels,
            kernel.in_channels
        )));
    }
    Ok(())
}

fn check_padding(size: usize, padding: Padding) -> Result<()> {
    if padding == Padding::Same && size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "same padding needs an odd kernel size, got {size}"
        )));
    }
    Ok(())
}

/// Cross-correlation of `x` with `kernel` (the deep-learning convention).
pub fn conv3d_dense<T: Real>(
    x: &Tensor<T>,
    kernel: &DenseKernel3D<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    check_input(x, kernel, "conv3d_dense")?;
    check_padding(kernel.size, padding)?;
    conv_forward_raw(
        x,
        &kernel.weights,
        kernel.bias.as_deref(),
        kernel.out_channels,
        kernel.size,
        stride,
        padding.amount(kernel.size),
    )
}

pub fn conv3d_dense_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &DenseKernel3D<T>,
    stride: usize,
    padding: Padding,
    gy: &Tensor<T>,
) -> Result<KernelGrads<T>> {
    check_input(x, kernel, "conv3d_dense_backward")?;
    let g = Geom::new(x.shape().spatial(), kernel.size, stride, padding.amount(kernel.size))?;
    let expected = Shape::new(
        x.shape().batch,
        kernel.out_channels,
        g.out[0],
        g.out[1],
        g.out[2],
    );
    if gy.shape() != expected {
        return Err(Error::shape(format!(
            "output gradient {} does not match forward output {expected}",
            gy.shape()
        )));
    }
    let input = conv_backward_input_raw(gy, &kernel.weights, kernel.in_channels, &g);
    let (weights, bias) = conv_backward_weight_raw(x, gy, &g);
    Ok(KernelGrads {
        input,
        weights,
        bias: kernel.bias.as_ref().map(|_| bias),
    })
}

fn check_transpose<T: Real>(x: &Tensor<T>, kernel: &DenseKernel3D<T>) -> Result<()> {
    if kernel.size != 2 {
        return Err(Error::invalid(format!(
            "transposed convolution supports k = 2 only, got {}",
            kernel.size
        )));
    }
    check_input(x, kernel, "transpose_conv3d")
}

/// Stride-2, `k = 2` transposed convolution. The kernel maps its
/// `in_channels` (consumed) to `out_channels` (produced); every output
/// extent is exactly twice the input's.
///
/// This is the adjoint of `conv3d_dense(·, kernel.swap_channels(), 2, Valid)`.
pub fn transpose_conv3d<T: Real>(x: &Tensor<T>, kernel: &DenseKernel3D<T>) -> Result<Tensor<T>> {
    check_transpose(x, kernel)?;
    let [d, h, w] = x.shape().spatial();
    let g = Geom::new([2 * d, 2 * h, 2 * w], 2, 2, 0)?;
    let swapped = kernel.swap_channels();
    let mut out = conv_backward_input_raw(x, &swapped.weights, kernel.out_channels, &g);
    if let Some(b) = &kernel.bias {
        let s = out.shape();
        for n in 0..s.batch {
            for (c, &bv) in b.iter().enumerate() {
                out.plane_mut(n, c).iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

pub fn transpose_conv3d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &DenseKernel3D<T>,
    gy: &Tensor<T>,
) -> Result<KernelGrads<T>> {
    check_transpose(x, kernel)?;
    let xs = x.shape();
    let expected = Shape::new(
        xs.batch,
        kernel.out_channels,
        2 * xs.depth,
        2 * xs.height,
        2 * xs.width,
    );
    if gy.shape() != expected {
        return Err(Error::shape(format!(
            "output gradient {} does not match transposed output {expected}",
            gy.shape()
        )));
    }
    let g = Geom::new(gy.shape().spatial(), 2, 2, 0)?;
    let swapped = kernel.swap_channels();
    let input = conv_forward_raw(gy, &swapped.weights, None, kernel.in_channels, 2, 2, 0)?;
    let (gw_swapped, _) = conv_backward_weight_raw(gy, x, &g);
    let weights = swap_channel_axes(&gw_swapped, kernel.in_channels, kernel.out_channels, 8);
    let bias = kernel.bias.as_ref().map(|_| {
        (0..kernel.out_channels)
            .map(|c| {
                let s: f64 = (0..xs.batch)
                    .flat_map(|n| gy.plane(n, c).iter().map(|v| v.as_f64()))
                    .sum();
                T::lit(s)
            })
            .collect()
    });
    Ok(KernelGrads {
        input,
        weights,
        bias,
    })
}
