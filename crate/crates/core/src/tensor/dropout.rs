use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mode, Real, Tensor};
use crate::error::{Error, Result};

/// Inverted dropout. In train mode each value is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode and
/// `rate == 0` are the identity. Returns the multiplicative mask used (if
/// any) for the backward pass.
pub fn dropout<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::from_vec(x.shape(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, gy: &Tensor<T>) -> Result<Tensor<T>> {
    match mask {
        None => Ok(gy.clone()),
        Some(m) => {
            if m.len() != gy.len() {
                return Err(Error::shape("dropout mask does not match gradient"));
            }
            let data = gy.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::from_vec(gy.shape(), data)
        }
    }
}
