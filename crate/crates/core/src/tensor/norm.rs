use super::{Mode, Real, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel batch normalisation parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T = f32> {
    pub mode: Mode,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T = f32> {
    pub input: Tensor<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

fn check<T: Real>(x: &Tensor<T>, state: &BatchNormState<T>) -> Result<()> {
    let s = x.shape();
    if s.channels != state.channels() {
        return Err(Error::shape(format!(
            "batchnorm: input has {} channels, state has {}",
            s.channels,
            state.channels()
        )));
    }
    if s.spatial_len() == 0 || s.batch == 0 {
        return Err(Error::shape(format!("batchnorm over empty extent {s}")));
    }
    Ok(())
}

/// Train mode normalises with batch statistics (over batch and space) and
/// updates the running estimates; eval mode applies the running estimates.
pub fn batchnorm<T: Real>(
    x: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    check(x, state)?;
    let s = x.shape();
    let count = (s.batch * s.spatial_len()) as f64;
    let mut stats = Vec::with_capacity(s.channels);
    for c in 0..s.channels {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0;
                for n in 0..s.batch {
                    sum += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for n in 0..s.batch {
                    sq += x
                        .plane(n, c)
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / count;
                let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                let m = state.momentum;
                state.running_mean[c] = T::lit((1.0 - m) * state.running_mean[c].as_f64() + m * mean);
                state.running_var[c] = T::lit((1.0 - m) * state.running_var[c].as_f64() + m * unbiased);
                (mean, var)
            }
            Mode::Eval => (state.running_mean[c].as_f64(), state.running_var[c].as_f64()),
        };
        stats.push((mean, 1.0 / (var + state.eps).sqrt()));
    }
    Ok(apply(x, state, mode, &stats))
}

/// Eval-mode forward without touching the state.
pub fn batchnorm_eval<T: Real>(x: &Tensor<T>, state: &BatchNormState<T>) -> Result<Tensor<T>> {
    let mut y = x.clone();
    batchnorm_eval_in_place(&mut y, state)?;
    Ok(y)
}

/// Eval-mode normalisation overwriting `x`.
pub fn batchnorm_eval_in_place<T: Real>(x: &mut Tensor<T>, state: &BatchNormState<T>) -> Result<()> {
    check(x, state)?;
    let s = x.shape();
    for c in 0..state.channels() {
        let inv = 1.0 / (state.running_var[c].as_f64() + state.eps).sqrt();
        // y = g·(x - m)·inv + b, folded into one multiply-add
        let a = state.scale[c].as_f64() * inv;
        let (a, b) = (T::lit(a), T::lit(state.shift[c].as_f64() - a * state.running_mean[c].as_f64()));
        for n in 0..s.batch {
            for v in x.plane_mut(n, c) {
                *v = a * *v + b;
            }
        }
    }
    Ok(())
}

fn apply<T: Real>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: Mode,
    stats: &[(f64, f64)],
) -> (Tensor<T>, BatchNormCache<T>) {
    let s = x.shape();
    let mut y = Tensor::zeros(s);
    let mut x_hat = Tensor::zeros(s);
    for n in 0..s.batch {
        for (c, &(mean, inv)) in stats.iter().enumerate() {
            let (g, b) = (state.scale[c], state.shift[c]);
            let m = T::lit(mean);
            let inv_t = T::lit(inv);
            let xp = x.plane(n, c);
            let hp = x_hat.plane_mut(n, c);
            for (h, &v) in hp.iter_mut().zip(xp) {
                *h = (v - m) * inv_t;
            }
            let hp = x_hat.plane(n, c);
            for (o, &h) in y.plane_mut(n, c).iter_mut().zip(hp) {
                *o = g * h + b;
            }
        }
    }
    let inv_std = stats.iter().map(|&(_, i)| i).collect();
    (y, BatchNormCache { mode, x_hat, inv_std })
}

pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    state: &BatchNormState<T>,
    gy: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let s = cache.x_hat.shape();
    if gy.shape() != s {
        return Err(Error::shape("batchnorm gradient shape mismatch"));
    }
    let count = (s.batch * s.spatial_len()) as f64;
    let mut gx = Tensor::zeros(s);
    let mut gscale = Vec::with_capacity(s.channels);
    let mut gshift = Vec::with_capacity(s.channels);
    for c in 0..s.channels {
        let mut sum_g = 0.0;
        let mut sum_gh = 0.0;
        for n in 0..s.batch {
            for (&g, &h) in gy.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                sum_g += g.as_f64();
                sum_gh += g.as_f64() * h.as_f64();
            }
        }
        gscale.push(T::lit(sum_gh));
        gshift.push(T::lit(sum_g));
        let k = state.scale[c].as_f64() * cache.inv_std[c];
        for n in 0..s.batch {
            let gp = gy.plane(n, c);
            let hp = cache.x_hat.plane(n, c);
            let out = gx.plane_mut(n, c);
            match cache.mode {
                Mode::Train => {
                    let mg = sum_g / count;
                    let mgh = sum_gh / count;
                    for ((o, &g), &h) in out.iter_mut().zip(gp).zip(hp) {
                        *o = T::lit(k * (g.as_f64() - mg - h.as_f64() * mgh));
                    }
                }
                Mode::Eval => {
                    let kt = T::lit(k);
                    for (o, &g) in out.iter_mut().zip(gp) {
                        *o = kt * g;
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: gx,
        scale: gscale,
        shift: gshift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_standardises_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::from_fn(Shape::cube(3, 2, 5), |i| {
            rng.random_range(-2.0..5.0) + (i % 2) as f32 * 3.0
        });
        let mut st = BatchNormState::new(2);
        let (y, _) = batchnorm(&x, &mut st, Mode::Train).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.plane(n, c).iter().map(|&v| v as f64)).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
        assert!(st.running_var.iter().all(|&v| v >= 0.0));
        assert!(st.running_mean.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn eval_mode_is_the_running_affine_map() {
        let x = Tensor::<f64>::from_fn(Shape::cube(2, 2, 3), |i| i as f64 * 0.1 - 1.0);
        let mut st = BatchNormState::new(2);
        st.running_mean = vec![0.3, -0.2];
        st.running_var = vec![2.0, 0.5];
        st.scale = vec![1.5, -0.7];
        st.shift = vec![0.1, 0.4];
        let (y, _) = batchnorm(&x, &mut st, Mode::Eval).unwrap();
        for n in 0..2 {
            for c in 0..2 {
                for (&o, &v) in y.plane(n, c).iter().zip(x.plane(n, c)) {
                    let e = st.scale[c] * (v - st.running_mean[c]) / (st.running_var[c] + st.eps).sqrt()
                        + st.shift[c];
                    assert!((o - e).abs() < 1e-12);
                }
            }
        }
        assert_eq!(st.running_mean, vec![0.3, -0.2]);
    }

    #[test]
    fn channel_mismatch_and_empty_extent_rejected() {
        let mut st = BatchNormState::<f32>::new(3);
        let x = Tensor::<f32>::zeros(Shape::cube(1, 2, 2));
        assert!(batchnorm(&x, &mut st, Mode::Train).is_err());
        let empty = Tensor::<f32>::zeros(Shape::new(1, 3, 0, 2, 2));
        assert!(batchnorm(&empty, &mut st, Mode::Train).is_err());
    }
}
