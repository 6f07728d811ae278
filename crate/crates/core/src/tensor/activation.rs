use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Two-way softmax across the channel axis; requires exactly 2 channels.
    Softmax2,
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    // split by sign so neither branch overflows
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Real>(x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    match kind {
        Activation::Relu => Ok(x.map(|v| if v > T::zero() { v } else { T::zero() })),
        Activation::Sigmoid => Ok(x.map(sigmoid)),
        Activation::Softmax2 => softmax2(x),
    }
}

/// Probabilities for a pair of logits stored as channels 0 and 1.
/// Elementwise activations overwriting `x`; softmax is not elementwise
/// and is rejected.
pub fn activation_in_place<T: Real>(x: &mut Tensor<T>, kind: Activation) -> Result<()> {
    match kind {
        Activation::Relu => x.map_in_place(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => x.map_in_place(sigmoid),
        Activation::Softmax2 => return Err(Error::invalid("softmax2 cannot run in place")),
    }
    Ok(())
}

pub fn softmax2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.channels != 2 {
        return Err(Error::shape(format!(
            "softmax2 needs exactly 2 logit channels, got {}",
            s.channels
        )));
    }
    let mut y = Tensor::zeros(s);
    for n in 0..s.batch {
        let (a, b) = (x.plane(n, 0), x.plane(n, 1));
        let mut p1 = Vec::with_capacity(a.len());
        for (&la, &lb) in a.iter().zip(b) {
            // p0 = 1 / (1 + e^(b - a))
            p1.push(sigmoid(lb - la));
        }
        for (o, &p) in y.plane_mut(n, 1).iter_mut().zip(&p1) {
            *o = p;
        }
        for (o, &p) in y.plane_mut(n, 0).iter_mut().zip(&p1) {
            *o = T::one() - p;
        }
    }
    Ok(y)
}

/// Backward pass expressed in terms of the forward output `y`.
pub fn activation_backward<T: Real>(kind: Activation, y: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != gy.shape() {
        return Err(Error::shape("activation gradient shape mismatch"));
    }
    let out = match kind {
        Activation::Relu => {
            let data = y
                .data()
                .iter()
                .zip(gy.data())
                .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
                .collect();
            Tensor::from_vec(y.shape(), data)?
        }
        Activation::Sigmoid => {
            let data = y
                .data()
                .iter()
                .zip(gy.data())
                .map(|(&o, &g)| g * o * (T::one() - o))
                .collect();
            Tensor::from_vec(y.shape(), data)?
        }
        Activation::Softmax2 => {
            let s = y.shape();
            let mut gx = Tensor::zeros(s);
            for n in 0..s.batch {
                let (y0, y1) = (y.plane(n, 0), y.plane(n, 1));
                let (g0, g1) = (gy.plane(n, 0), gy.plane(n, 1));
                let d: Vec<T> = (0..y0.len()).map(|i| y0[i] * y1[i] * (g0[i] - g1[i])).collect();
                for (o, &v) in gx.plane_mut(n, 0).iter_mut().zip(&d) {
                    *o = v;
                }
                for (o, &v) in gx.plane_mut(n, 1).iter_mut().zip(&d) {
                    *o = -v;
                }
            }
            gx
        }
    };
    Ok(out)
}
