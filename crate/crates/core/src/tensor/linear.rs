use super::{dot, Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer; weights are stored row-major as `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<T = f32> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> LinearParams<T> {
    pub fn zeros(in_features: usize, out_features: usize, with_bias: bool) -> Self {
        LinearParams {
            in_features,
            out_features,
            weights: vec![T::zero(); in_features * out_features],
            bias: with_bias.then(|| vec![T::zero(); out_features]),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

fn features<T: Real>(x: &Tensor<T>, p: &LinearParams<T>) -> Result<usize> {
    let s = x.shape();
    let f = s.channels * s.spatial_len();
    if f != p.in_features {
        return Err(Error::shape(format!(
            "linear: input carries {f} features per item, layer expects {}",
            p.in_features
        )));
    }
    Ok(f)
}

/// Affine map of each flattened batch item; the result has shape
/// `(batch, out_features, 1, 1, 1)`.
pub fn linear<T: Real>(x: &Tensor<T>, p: &LinearParams<T>) -> Result<Tensor<T>> {
    features(x, p)?;
    let b = x.shape().batch;
    let mut y = Tensor::zeros(Shape::new(b, p.out_features, 1, 1, 1));
    for n in 0..b {
        let xi = x.item(n);
        for o in 0..p.out_features {
            let row = &p.weights[o * p.in_features..(o + 1) * p.in_features];
            let bias = p.bias.as_ref().map_or(T::zero(), |bv| bv[o]);
            y.data_mut()[n * p.out_features + o] = dot(row, xi) + bias;
        }
    }
    Ok(y)
}

pub fn linear_backward<T: Real>(x: &Tensor<T>, p: &LinearParams<T>, gy: &Tensor<T>) -> Result<LinearGrads<T>> {
    let f = features(x, p)?;
    let b = x.shape().batch;
    if gy.len() != b * p.out_features {
        return Err(Error::shape("linear gradient shape mismatch"));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = vec![0.0f64; p.weights.len()];
    let mut gb = vec![0.0f64; p.out_features];
    for n in 0..b {
        let xi = x.item(n);
        let g = &gy.data()[n * p.out_features..(n + 1) * p.out_features];
        let gxi = &mut gx.data_mut()[n * f..(n + 1) * f];
        for (o, &go) in g.iter().enumerate() {
            gb[o] += go.as_f64();
            let row = &p.weights[o * f..(o + 1) * f];
            for (gi, &w) in gxi.iter_mut().zip(row) {
                *gi += go * w;
            }
            for (gwv, &xv) in gw[o * f..(o + 1) * f].iter_mut().zip(xi) {
                *gwv += (go * xv).as_f64();
            }
        }
    }
    Ok(LinearGrads {
        input: gx,
        weights: gw.into_iter().map(T::lit).collect(),
        bias: p.bias.as_ref().map(|_| gb.into_iter().map(T::lit).collect()),
    })
}
