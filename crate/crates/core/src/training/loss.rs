use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Channel of the positive ("contains the cavity") class in classifier
/// logits; channel 0 is the negative class.
pub const POSITIVE_CLASS: usize = 1;

pub const LOG_CLAMP: f64 = 1e-12;
pub const DICE_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            positive: 1.2,
            negative: 1.0,
        }
    }
}

/// Two-class softmax probability of the positive class.
pub fn positive_probability(logits: [f64; 2]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

/// `-w_label · ln(max(softmax(logits)[label], 1e-12))` and its gradient with
/// respect to the two logits.
pub fn weighted_cross_entropy(logits: [f64; 2], positive: bool, w: ClassWeights) -> (f64, [f64; 2]) {
    let p1 = positive_probability(logits);
    let p = [1.0 - p1, p1];
    let (label, weight) = if positive {
        (POSITIVE_CLASS, w.positive)
    } else {
        (1 - POSITIVE_CLASS, w.negative)
    };
    let pt = p[label];
    if pt < LOG_CLAMP {
        // the clamp is flat here
        return (-weight * LOG_CLAMP.ln(), [0.0; 2]);
    }
    let mut g = [weight * p[0], weight * p[1]];
    g[label] -= weight;
    (-weight * pt.ln(), g)
}

/// Mean weighted cross entropy over a `(B, 2, 1, 1, 1)` batch of logits.
pub fn weighted_cross_entropy_batch<T: Real>(
    logits: &Tensor<T>,
    positive: &[bool],
    w: ClassWeights,
) -> Result<(f64, Tensor<T>)> {
    let s = logits.shape();
    if s.channels * s.spatial_len() != 2 || s.batch != positive.len() {
        return Err(Error::shape(format!(
            "cross entropy expects (B, 2) logits for {} labels, got {s}",
            positive.len()
        )));
    }
    let scale = 1.0 / s.batch as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(s);
    for (n, &pos) in positive.iter().enumerate() {
        let l = logits.item(n);
        let (loss, g) = weighted_cross_entropy([l[0].as_f64(), l[1].as_f64()], pos, w);
        total += loss;
        let gi = &mut grad.data_mut()[2 * n..2 * n + 2];
        gi[0] = T::lit(g[0] * scale);
        gi[1] = T::lit(g[1] * scale);
    }
    Ok((total * scale, grad))
}

/// Numerator and denominator of the soft Dice coefficient.
fn dice_terms<T: Real>(probs: &[T], mask: &[T], eps: f64) -> Result<(f64, f64)> {
    if probs.len() != mask.len() {
        return Err(Error::shape(format!(
            "dice over {} probabilities and {} mask voxels",
            probs.len(),
            mask.len()
        )));
    }
    let (mut inter, mut sp, mut sm) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &m) in probs.iter().zip(mask) {
        let (p, m) = (p.as_f64(), m.as_f64());
        inter += p * m;
        sp += p;
        sm += m;
    }
    Ok((2.0 * inter + eps, sp + sm + eps))
}

/// Soft Dice coefficient `(2⟨p,m⟩ + ε) / (Σp + Σm + ε)`.
pub fn soft_dsc<T: Real>(probs: &[T], mask: &[T], eps: f64) -> Result<f64> {
    let (num, den) = dice_terms(probs, mask, eps)?;
    Ok(num / den)
}

/// Soft Dice loss `1 - DSC` and its gradient `-(2 m_j D - N) / D²`.
pub fn dice_loss<T: Real>(probs: &[T], mask: &[T], eps: f64) -> Result<(f64, Vec<T>)> {
    let (num, den) = dice_terms(probs, mask, eps)?;
    let grad = mask
        .iter()
        .map(|&m| T::lit(-(2.0 * m.as_f64() * den - num) / (den * den)))
        .collect();
    Ok((1.0 - num / den, grad))
}

/// Dice loss averaged over the items of a batch.
pub fn dice_loss_batch<T: Real>(probs: &Tensor<T>, mask: &Tensor<T>, eps: f64) -> Result<(f64, Tensor<T>)> {
    let s = probs.shape();
    if mask.shape() != s {
        return Err(Error::shape(format!("dice over {s} and {}", mask.shape())));
    }
    let scale = 1.0 / s.batch.max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for n in 0..s.batch {
        let (l, g) = dice_loss(probs.item(n), mask.item(n), eps)?;
        total += l;
        grad.extend(g.into_iter().map(|v| T::lit(v.as_f64() * scale)));
    }
    Ok((total * scale, Tensor::from_vec(s, grad)?))
}
