use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub decay_factor: f64,
    /// The rate is multiplied by `decay_factor` for epochs after this one.
    pub decay_after: usize,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn localization() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            epochs: 5,
            decay_factor: 0.1,
            decay_after: 3,
            batch_size: 200,
        }
    }

    pub fn segmentation() -> Self {
        SgdConfig {
            batch_size: 4,
            ..Self::localization()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.momentum, self.weight_decay]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !positive || self.learning_rate == 0.0 {
            return Err(Error::Config("learning rate must be positive; momentum and weight decay non-negative".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config(format!("decay factor {} outside (0, 1)", self.decay_factor)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Rate for a 1-based epoch.
pub fn lr_at_epoch(epoch: usize, cfg: &SgdConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(Error::invalid(format!("epoch {epoch} outside 1..={}", cfg.epochs)));
    }
    Ok(if epoch > cfg.decay_after {
        cfg.learning_rate * cfg.decay_factor
    } else {
        cfg.learning_rate
    })
}

/// One velocity buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub velocity: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &[&[T]]) -> Self {
        OptimizerState {
            velocity: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }
}

/// `v ← μv + (g + wd·p)`, `p ← p − lr·v`. A non-finite gradient aborts the
/// step before anything changes.
pub fn sgd_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    cfg: &SgdConfig,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(format!(
            "{} parameter tensors, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::shape(format!("tensor {i}: parameter, gradient and velocity lengths differ")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter tensor {i}")));
        }
    }
    let (mu, wd) = (T::lit(cfg.momentum), T::lit(cfg.weight_decay));
    let lr = T::lit(lr);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((pj, &gj), vj) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vj = mu * *vj + (gj + wd * *pj);
            *pj -= lr * *vj;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let cfg = SgdConfig::localization();
        let lrs: Vec<f64> = (1..=5).map(|e| lr_at_epoch(e, &cfg).unwrap()).collect();
        assert_eq!(lrs, vec![0.01, 0.01, 0.01, 0.001, 0.001]);
        assert!(lr_at_epoch(0, &cfg).is_err());
        assert!(lr_at_epoch(6, &cfg).is_err());
    }

    #[test]
    fn two_step_trace() {
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::localization()
        };
        let mut p = vec![1.0f64];
        let mut st = OptimizerState::new(&[&p]);
        let g = vec![vec![1.0f64]];
        sgd_step(&mut [p.as_mut_slice()], &g, &cfg, &mut st, 0.1).unwrap();
        assert_eq!(p[0], 0.9);
        sgd_step(&mut [p.as_mut_slice()], &g, &cfg, &mut st, 0.1).unwrap();
        assert_eq!(p[0], 0.71);
    }

    #[test]
    fn nan_gradient_aborts() {
        let cfg = SgdConfig::localization();
        let mut p = vec![1.0f32, 2.0];
        let mut st = OptimizerState::new(&[&p]);
        let err = sgd_step(&mut [p.as_mut_slice()], &[vec![0.5, f32::NAN]], &cfg, &mut st, 0.1);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p, vec![1.0, 2.0]);
    }
}
