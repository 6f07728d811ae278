//! Cross-constrained convolution: every `(out, in)` channel pair carries
//! three 1D filters, one along each axis, whose sum forms a `len^3` kernel
//! that is zero off the three axis-aligned lines through its centre.
//!
//! The centre taps of the three filters are independent parameters and add
//! up at the shared centre voxel, so a pair costs exactly `3 * len`
//! parameters instead of `len^3`.
//!
//! The convolution is evaluated directly as three shifted-copy sweeps
//! (stride 1, same padding); [`materialize_cross`] produces the equivalent
//! dense kernel and is what the equivalence tests compare against.

use rayon::prelude::*;

use super::conv::valid_range;
use super::{axpy, dot, DenseKernel3D, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CrossKernel3D<T = f32> {
    pub out_channels: usize,
    pub in_channels: usize,
    /// Filter length (odd).
    pub len: usize,
    /// Filter along width, indexed `[out][in][tap]`.
    pub fx: Vec<T>,
    /// Filter along height.
    pub fy: Vec<T>,
    /// Filter along depth.
    pub fz: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> CrossKernel3D<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, len: usize, with_bias: bool) -> Self {
        let n = out_channels * in_channels * len;
        CrossKernel3D {
            out_channels,
            in_channels,
            len,
            fx: vec![T::zero(); n],
            fy: vec![T::zero(); n],
            fz: vec![T::zero(); n],
            bias: with_bias.then(|| vec![T::zero(); out_channels]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.len.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "cross filter length must be odd, got {}",
                self.len
            )));
        }
        let n = self.out_channels * self.in_channels * self.len;
        if self.fx.len() != n || self.fy.len() != n || self.fz.len() != n {
            return Err(Error::shape(format!(
                "cross filters must each hold {n} taps"
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::shape("cross bias length mismatch"));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        3 * self.fx.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    #[inline]
    fn base(&self, o: usize, i: usize) -> usize {
        (o * self.in_channels + i) * self.len
    }
}

#[derive(Clone, Debug)]
pub struct CrossGrads<T = f32> {
    pub input: Tensor<T>,
    pub fx: Vec<T>,
    pub fy: Vec<T>,
    pub fz: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Dense `len^3` kernel equal to the sum of the three line filters.
pub fn materialize_cross<T: Real>(kc: &CrossKernel3D<T>) -> DenseKernel3D<T> {
    let k = kc.len;
    let c = k / 2;
    let mut dense = DenseKernel3D::zeros(kc.out_channels, kc.in_channels, k, kc.bias.is_some());
    dense.bias = kc.bias.clone();
    for o in 0..kc.out_channels {
        for i in 0..kc.in_channels {
            let b = kc.base(o, i);
            for t in 0..k {
                let ix = dense.index(o, i, c, c, t);
                dense.weights[ix] += kc.fx[b + t];
                let iy = dense.index(o, i, c, t, c);
                dense.weights[iy] += kc.fy[b + t];
                let iz = dense.index(o, i, t, c, c);
                dense.weights[iz] += kc.fz[b + t];
            }
        }
    }
    dense
}

fn check<T: Real>(x: &Tensor<T>, kc: &CrossKernel3D<T>) -> Result<()> {
    kc.validate()?;
    if x.shape().channels != kc.in_channels {
        return Err(Error::shape(format!(
            "conv3d_cross: input has {} channels, kernel expects {}",
            x.shape().channels,
            kc.in_channels
        )));
    }
    Ok(())
}

/// Stride-1, same-padded convolution with a cross-constrained kernel.
pub fn conv3d_cross<T: Real>(x: &Tensor<T>, kc: &CrossKernel3D<T>) -> Result<Tensor<T>> {
    check(x, kc)?;
    let xs = x.shape();
    let [d, h, w] = xs.spatial();
    let plane = xs.spatial_len();
    let out_c = kc.out_channels;
    let centre = (kc.len / 2) as isize;
    let mut out = Tensor::zeros(xs.with_channels(out_c));
    if plane == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, op)| {
            let (n, o) = (idx / out_c, idx % out_c);
            op.fill(kc.bias.as_ref().map_or(T::zero(), |b| b[o]));
            for i in 0..kc.in_channels {
                let xi = x.plane(n, i);
                let base = kc.base(o, i);
                for t in 0..kc.len {
                    let off = t as isize - centre;
                    // depth: whole slabs shift
                    let wz = kc.fz[base + t];
                    let (z0, z1) = valid_range(d, d, 1, off);
                    if wz != T::zero() && z0 < z1 {
                        let src = (z0 as isize + off) as usize * h * w;
                        axpy(&mut op[z0 * h * w..z1 * h * w], wz, &xi[src..src + (z1 - z0) * h * w]);
                    }
                    // height: contiguous row blocks within each slab
                    let wy = kc.fy[base + t];
                    let (y0, y1) = valid_range(h, h, 1, off);
                    if wy != T::zero() && y0 < y1 {
                        for z in 0..d {
                            let dst = z * h * w + y0 * w;
                            let src = z * h * w + (y0 as isize + off) as usize * w;
                            let len = (y1 - y0) * w;
                            axpy(&mut op[dst..dst + len], wy, &xi[src..src + len]);
                        }
                    }
                    // width: shifted rows
                    let wx = kc.fx[base + t];
                    let (x0, x1) = valid_range(w, w, 1, off);
                    if wx != T::zero() && x0 < x1 {
                        let src0 = (x0 as isize + off) as usize;
                        for row in 0..d * h {
                            let r = row * w;
                            axpy(&mut op[r + x0..r + x1], wx, &xi[r + src0..r + src0 + (x1 - x0)]);
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn conv3d_cross_backward<T: Real>(
    x: &Tensor<T>,
    kc: &CrossKernel3D<T>,
    gy: &Tensor<T>,
) -> Result<CrossGrads<T>> {
    check(x, kc)?;
    let xs = x.shape();
    if gy.shape() != xs.with_channels(kc.out_channels) {
        return Err(Error::shape(format!(
            "output gradient {} does not match cross conv output",
            gy.shape()
        )));
    }
    let [d, h, w] = xs.spatial();
    let plane = xs.spatial_len();
    let (in_c, out_c, len) = (kc.in_channels, kc.out_channels, kc.len);
    let centre = (len / 2) as isize;

    let mut gx = Tensor::zeros(xs);
    if plane > 0 {
        gx.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, gp)| {
                let (n, i) = (idx / in_c, idx % in_c);
                for o in 0..out_c {
                    let g = gy.plane(n, o);
                    let base = kc.base(o, i);
                    for t in 0..len {
                        let off = t as isize - centre;
                        let wz = kc.fz[base + t];
                        let (z0, z1) = valid_range(d, d, 1, off);
                        if wz != T::zero() && z0 < z1 {
                            let dst = (z0 as isize + off) as usize * h * w;
                            let n_el = (z1 - z0) * h * w;
                            axpy(&mut gp[dst..dst + n_el], wz, &g[z0 * h * w..z1 * h * w]);
                        }
                        let wy = kc.fy[base + t];
                        let (y0, y1) = valid_range(h, h, 1, off);
                        if wy != T::zero() && y0 < y1 {
                            for z in 0..d {
                                let src = z * h * w + y0 * w;
                                let dst = z * h * w + (y0 as isize + off) as usize * w;
                                let n_el = (y1 - y0) * w;
                                axpy(&mut gp[dst..dst + n_el], wy, &g[src..src + n_el]);
                            }
                        }
                        let wx = kc.fx[base + t];
                        let (x0, x1) = valid_range(w, w, 1, off);
                        if wx != T::zero() && x0 < x1 {
                            let dst0 = (x0 as isize + off) as usize;
                            for row in 0..d * h {
                                let r = row * w;
                                axpy(&mut gp[r + dst0..r + dst0 + (x1 - x0)], wx, &g[r + x0..r + x1]);
                            }
                        }
                    }
                }
            });
    }

    type Acc = (Vec<f64>, Vec<f64>, Vec<f64>, f64);
    let per_o: Vec<Acc> = (0..out_c)
        .into_par_iter()
        .map(|o| {
            let mut ax = vec![0.0; in_c * len];
            let mut ay = vec![0.0; in_c * len];
            let mut az = vec![0.0; in_c * len];
            let mut ab = 0.0;
            for n in 0..xs.batch {
                let g = gy.plane(n, o);
                ab += g.iter().map(|v| v.as_f64()).sum::<f64>();
                for i in 0..in_c {
                    let xi = x.plane(n, i);
                    for t in 0..len {
                        let off = t as isize - centre;
                        let (z0, z1) = valid_range(d, d, 1, off);
                        if z0 < z1 {
                            let src = (z0 as isize + off) as usize * h * w;
                            az[i * len + t] += dot(&g[z0 * h * w..z1 * h * w], &xi[src..src + (z1 - z0) * h * w])
                                .as_f64();
                        }
                        let (y0, y1) = valid_range(h, h, 1, off);
                        if y0 < y1 {
                            let n_el = (y1 - y0) * w;
                            for z in 0..d {
                                let dst = z * h * w + y0 * w;
                                let src = z * h * w + (y0 as isize + off) as usize * w;
                                ay[i * len + t] += dot(&g[dst..dst + n_el], &xi[src..src + n_el]).as_f64();
                            }
                        }
                        let (x0, x1) = valid_range(w, w, 1, off);
                        if x0 < x1 {
                            let src0 = (x0 as isize + off) as usize;
                            let mut acc = 0.0;
                            for row in 0..d * h {
                                let r = row * w;
                                acc += dot(&g[r + x0..r + x1], &xi[r + src0..r + src0 + (x1 - x0)]).as_f64();
                            }
                            ax[i * len + t] += acc;
                        }
                    }
                }
            }
            (ax, ay, az, ab)
        })
        .collect();

    let mut fx = Vec::with_capacity(out_c * in_c * len);
    let mut fy = Vec::with_capacity(out_c * in_c * len);
    let mut fz = Vec::with_capacity(out_c * in_c * len);
    let mut gb = Vec::with_capacity(out_c);
    for (ax, ay, az, ab) in per_o {
        fx.extend(ax.into_iter().map(T::lit));
        fy.extend(ay.into_iter().map(T::lit));
        fz.extend(az.into_iter().map(T::lit));
        gb.push(T::lit(ab));
    }
    Ok(CrossGrads {
        input: gx,
        fx,
        fy,
        fz,
        bias: kc.bias.as_ref().map(|_| gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{conv3d_dense, Padding, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cross(o: usize, i: usize, rng: &mut ChaCha8Rng) -> CrossKernel3D<f32> {
        let mut kc = CrossKernel3D::zeros(o, i, 7, true);
        for v in kc.fx.iter_mut().chain(&mut kc.fy).chain(&mut kc.fz) {
            *v = rng.random_range(-1.0..1.0);
        }
        for b in kc.bias.as_mut().unwrap() {
            *b = rng.random_range(-1.0..1.0);
        }
        kc
    }

    #[test]
    fn zero_filters_materialize_to_zero() {
        let kc = CrossKernel3D::<f32>::zeros(2, 3, 7, false);
        let d = materialize_cross(&kc);
        assert_eq!(d.size, 7);
        assert!(d.weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centre_impulses_sum_to_three() {
        let mut kc = CrossKernel3D::<f32>::zeros(1, 1, 7, false);
        kc.fx[3] = 1.0;
        kc.fy[3] = 1.0;
        kc.fz[3] = 1.0;
        let d = materialize_cross(&kc);
        let c = d.index(0, 0, 3, 3, 3);
        for (ix, &v) in d.weights.iter().enumerate() {
            assert_eq!(v, if ix == c { 3.0 } else { 0.0 });
        }
    }

    #[test]
    fn materialized_support_is_the_three_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kc = random_cross(2, 2, &mut rng);
        let d = materialize_cross(&kc);
        for o in 0..2 {
            for i in 0..2 {
                let mut nonzero = 0;
                let mut total = 0.0f64;
                for z in 0..7 {
                    for y in 0..7 {
                        for x in 0..7 {
                            let v = d.weights[d.index(o, i, z, y, x)];
                            let on_line = [z == 3 && y == 3, z == 3 && x == 3, y == 3 && x == 3]
                                .iter()
                                .any(|&b| b);
                            if !on_line {
                                assert_eq!(v, 0.0);
                            }
                            if v != 0.0 {
                                nonzero += 1;
                            }
                            total += v as f64;
                        }
                    }
                }
                assert!(nonzero <= 19);
                let b = (o * 2 + i) * 7;
                let expect: f64 = (0..7)
                    .map(|t| (kc.fx[b + t] + kc.fy[b + t] + kc.fz[b + t]) as f64)
                    .sum();
                assert!((total - expect).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut kc = random_cross(3, 2, &mut rng);
        kc.bias = None;
        let x = Tensor::<f32>::zeros(Shape::cube(1, 2, 6));
        let y = conv3d_cross(&x, &kc).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_dense_on_materialized_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for shape in [Shape::new(2, 3, 5, 9, 6), Shape::cube(1, 2, 3), Shape::new(1, 1, 12, 1, 4)] {
            let kc = random_cross(2, shape.channels, &mut rng);
            let x = Tensor::<f32>::from_fn(shape, |_| rng.random_range(-1.0..1.0));
            let fast = conv3d_cross(&x, &kc).unwrap();
            let dense = conv3d_dense(&x, &materialize_cross(&kc), 1, Padding::Same).unwrap();
            assert!(fast.max_abs_diff(&dense) <= 1e-5, "{shape}");
        }
    }

    #[test]
    fn parameter_count_is_linear_in_length() {
        let kc = CrossKernel3D::<f32>::zeros(96, 96, 7, true);
        assert_eq!(kc.parameter_count(), 96 * 96 * 21 + 96);
        let dense = materialize_cross(&kc);
        assert_eq!(dense.parameter_count(), 96 * 96 * 343 + 96);
    }
}
