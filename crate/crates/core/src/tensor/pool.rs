use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Winning input offset (within its plane) for every pooled output voxel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxPoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<u32>,
}

/// Non-overlapping max pooling with a cubic `window`. Every spatial extent
/// must be a multiple of the window; the caller pads beforehand.
///
/// Ties go to the first voxel in width-fastest scan order of the block.
pub fn maxpool3d<T: Real>(x: &Tensor<T>, window: usize) -> Result<(Tensor<T>, MaxPoolIndices)> {
    let s = x.shape();
    if window == 0 {
        return Err(Error::invalid("pool window must be positive"));
    }
    let [d, h, w] = s.spatial();
    if d % window != 0 || h % window != 0 || w % window != 0 {
        return Err(Error::shape(format!(
            "maxpool window {window} does not divide spatial extent {d}x{h}x{w}"
        )));
    }
    let (od, oh, ow) = (d / window, h / window, w / window);
    let oshape = s.with_spatial([od, oh, ow]);
    let mut out = Tensor::zeros(oshape);
    let mut argmax = vec![0u32; oshape.len()];
    let oplane = oshape.spatial_len();
    for n in 0..s.batch {
        for c in 0..s.channels {
            let xp = x.plane(n, c);
            let base = (n * s.channels + c) * oplane;
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_ix = 0usize;
                        let mut first = true;
                        for dz in 0..window {
                            for dy in 0..window {
                                let row = ((oz * window + dz) * h + oy * window + dy) * w + ox * window;
                                for dx in 0..window {
                                    let v = xp[row + dx];
                                    if first || v > best {
                                        best = v;
                                        best_ix = row + dx;
                                        first = false;
                                    }
                                }
                            }
                        }
                        let oi = base + (oz * oh + oy) * ow + ox;
                        out.data_mut()[oi] = best;
                        argmax[oi] = best_ix as u32;
                    }
                }
            }
        }
    }
    Ok((
        out,
        MaxPoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

/// Routes each output gradient to the input voxel that won the forward max.
pub fn maxpool3d_backward<T: Real>(indices: &MaxPoolIndices, gy: &Tensor<T>) -> Result<Tensor<T>> {
    if gy.len() != indices.argmax.len() {
        return Err(Error::shape("maxpool gradient does not match pooled output"));
    }
    let s = indices.input_shape;
    let plane = s.spatial_len();
    let oplane = gy.shape().spatial_len();
    let mut gx = Tensor::zeros(s);
    for (oi, (&g, &ix)) in gy.data().iter().zip(&indices.argmax).enumerate() {
        let p = oi / oplane;
        gx.data_mut()[p * plane + ix as usize] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_volume_pools_to_constant() {
        let x = Tensor::<f32>::filled(Shape::cube(1, 2, 4), 0.7);
        let (y, _) = maxpool3d(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::cube(1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn block_of_zero_to_seven_gives_seven() {
        let x = Tensor::<f32>::from_fn(Shape::cube(1, 1, 2), |i| i as f32);
        let (y, ix) = maxpool3d(&x, 2).unwrap();
        assert_eq!(y.data(), &[7.0]);
        assert_eq!(ix.argmax, vec![7]);
    }

    #[test]
    fn odd_extent_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 3, 4));
        assert!(matches!(maxpool3d(&x, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_block_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::from_fn(Shape::cube(1, 2, 4), |_| rng.random_range(-1.0..1.0));
        let (y, _) = maxpool3d(&x, 2).unwrap();
        for c in 0..2 {
            let p = x.plane(0, c);
            for oz in 0..2 {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let mut m = f32::NEG_INFINITY;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    m = m.max(p[((oz * 2 + dz) * 4 + oy * 2 + dy) * 4 + ox * 2 + dx]);
                                }
                            }
                        }
                        assert_eq!(y.plane(0, c)[(oz * 2 + oy) * 2 + ox], m);
                    }
                }
            }
        }
    }

    #[test]
    fn ties_route_gradient_to_first_voxel() {
        let x = Tensor::<f32>::filled(Shape::cube(1, 1, 2), 1.0);
        let (_, ix) = maxpool3d(&x, 2).unwrap();
        let g = maxpool3d_backward(&ix, &Tensor::filled(Shape::cube(1, 1, 1), 5.0)).unwrap();
        assert_eq!(g.data()[0], 5.0);
        assert!(g.data()[1..].iter().all(|&v| v == 0.0));
    }
}
