//! Central finite-difference verification of analytic backward passes.
//!
//! Checks run in `f64`. The scalar loss is a fixed random weighting of the
//! layer outputs, `L = sum_i r_i * y_i`, so that layers whose plain output
//! sum is constant (batch normalisation, softmax) still have informative
//! gradients. Each parameter group and the input are scored by the
//! normwise relative error `max|a - n| / max(max|a|, max|n|)`, with a
//! noise floor in the denominator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dropout::dropout_backward;
use super::{
    activation, activation_backward, batchnorm, batchnorm_backward, conv3d_cross,
    conv3d_cross_backward, conv3d_dense, conv3d_dense_backward, dropout, linear, linear_backward,
    maxpool3d, maxpool3d_backward, transpose_conv3d, transpose_conv3d_backward, Activation,
    BatchNormState, CrossKernel3D, DenseKernel3D, LinearParams, Mode, Padding, Shape, Tensor,
};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-3;

/// A differentiable unit with named parameter groups.
pub trait Layer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>>;
    /// Gradient with respect to the input and to every parameter group, in
    /// the order of [`Layer::groups`].
    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)>;
    fn groups(&self) -> Vec<String>;
    fn group_len(&self, group: usize) -> usize;
    fn param_mut(&mut self, group: usize, index: usize) -> &mut f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub input_error: f64,
    pub group_errors: Vec<(String, f64)>,
    pub non_finite: bool,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.group_errors
            .iter()
            .map(|(_, e)| *e)
            .fold(self.input_error, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.non_finite && self.max_error() <= self.tolerance
    }
}

/// `floor` is the size below which a central difference is rounding noise,
/// so a gradient that is exactly zero (a bias feeding batch norm, say) is
/// compared in absolute terms instead of against its own noise.
fn normwise(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale.max(floor)
}

/// Checks `layer` on a uniform(-1, 1) input of the given shape.
pub fn grad_check<L: Layer + ?Sized>(layer: &mut L, input_shape: Shape, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ead);
    let x = Tensor::from_fn(input_shape, |_| rng.random_range(-1.0..1.0));
    grad_check_at(layer, &x, tolerance)
}

/// Checks `layer` at a caller-chosen input (useful to stay clear of kinks).
pub fn grad_check_at<L: Layer + ?Sized>(layer: &mut L, x: &Tensor<f64>, tolerance: f64) -> Result<GradCheckReport> {
    grad_check_with_step(layer, x, tolerance, FD_STEP)
}

/// As [`grad_check_at`] with an explicit difference step. Whole networks
/// contain many ReLU kinks, and a smaller step keeps the probes from
/// straddling them.
pub fn grad_check_with_step<L: Layer + ?Sized>(
    layer: &mut L,
    x: &Tensor<f64>,
    tolerance: f64,
    step: f64,
) -> Result<GradCheckReport> {
    let y = layer.forward(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x1055);
    let weights = Tensor::from_fn(y.shape(), |_| rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 });
    let loss = |layer: &mut L, input: &Tensor<f64>| -> Result<f64> { Ok(layer.forward(input)?.dot(&weights)) };

    // rounding in the loss is about eps * |loss|; a quotient over 2h
    // magnifies it by 1 / h
    let floor = 1e2 * f64::EPSILON * y.dot(&weights).abs().max(1.0) / step;
    let (gx, gparams) = layer.backward(x, &weights)?;
    let mut non_finite = !gx.all_finite() || gparams.iter().flatten().any(|v| !v.is_finite());

    let mut numeric_x = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let lp = loss(layer, &probe)?;
        probe.data_mut()[i] = orig - step;
        let lm = loss(layer, &probe)?;
        probe.data_mut()[i] = orig;
        numeric_x.push((lp - lm) / (2.0 * step));
    }
    let input_error = normwise(gx.data(), &numeric_x, floor);

    let mut group_errors = Vec::new();
    for (g, name) in layer.groups().into_iter().enumerate() {
        let mut numeric = Vec::with_capacity(layer.group_len(g));
        for i in 0..layer.group_len(g) {
            let orig = *layer.param_mut(g, i);
            *layer.param_mut(g, i) = orig + step;
            let lp = loss(layer, x)?;
            *layer.param_mut(g, i) = orig - step;
            let lm = loss(layer, x)?;
            *layer.param_mut(g, i) = orig;
            numeric.push((lp - lm) / (2.0 * step));
        }
        group_errors.push((name, normwise(&gparams[g], &numeric, floor)));
    }
    non_finite |= !input_error.is_finite() || group_errors.iter().any(|(_, e)| !e.is_finite());
    Ok(GradCheckReport {
        input_error,
        group_errors,
        non_finite,
        tolerance,
    })
}

/// Adapter: dense convolution.
pub struct DenseConvLayer {
    pub kernel: DenseKernel3D<f64>,
    pub stride: usize,
    pub padding: Padding,
}

impl Layer for DenseConvLayer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        conv3d_dense(x, &self.kernel, self.stride, self.padding)
    }
    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)> {
        let g = conv3d_dense_backward(x, &self.kernel, self.stride, self.padding, gy)?;
        let mut groups = vec![g.weights];
        groups.extend(g.bias);
        Ok((g.input, groups))
    }
    fn groups(&self) -> Vec<String> {
        let mut v = vec!["weights".to_string()];
        if self.kernel.bias.is_some() {
            v.push("bias".into());
        }
        v
    }
    fn group_len(&self, group: usize) -> usize {
        if group == 0 {
            self.kernel.weights.len()
        } else {
            self.kernel.out_channels
        }
    }
    fn param_mut(&mut self, group: usize, index: usize) -> &mut f64 {
        match group {
            0 => &mut self.kernel.weights[index],
            _ => &mut self.kernel.bias.as_mut().expect("bias group")[index],
        }
    }
}

/// Adapter: stride-2 transposed convolution.
pub struct TransposeConvLayer {
    pub kernel: DenseKernel3D<f64>,
}

impl Layer for TransposeConvLayer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        transpose_conv3d(x, &self.kernel)
    }
    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)> {
        let g = transpose_conv3d_backward(x, &self.kernel, gy)?;
        let mut groups = vec![g.weights];
        groups.extend(g.bias);
        Ok((g.input, groups))
    }
    fn groups(&self) -> Vec<String> {
        let mut v = vec!["weights".to_string()];
        if self.kernel.bias.is_some() {
            v.push("bias".into());
        }
        v
    }
    fn group_len(&self, group: usize) -> usize {
        if group == 0 {
            self.kernel.weights.len()
        } else {
            self.kernel.out_channels
        }
    }
    fn param_mut(&mut self, group: usize, index: usize) -> &mut f64 {
        match group {
            0 => &mut self.kernel.weights[index],
            _ => &mut self.kernel.bias.as_mut().expect("bias group")[index],
        }
    }
}

/// Adapter: cross-constrained convolution.
pub struct CrossConvLayer {
    pub kernel: CrossKernel3D<f64>,
}

impl Layer for CrossConvLayer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        conv3d_cross(x, &self.kernel)
    }
    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)> {
        let g = conv3d_cross_backward(x, &self.kernel, gy)?;
        let mut groups = vec![g.fx, g.fy, g.fz];
        groups.extend(g.bias);
        Ok((g.input, groups))
    }
    fn groups(&self) -> Vec<String> {
        let mut v: Vec<String> = ["fx", "fy", "fz"].iter().map(|s| s.to_string()).collect();
        if self.kernel.bias.is_some() {
            v.push("bias".into());
        }
        v
    }
    fn group_len(&self, group: usize) -> usize {
        if group < 3 {
            self.kernel.fx.len()
        } else {
            self.kernel.out_channels
        }
    }
    fn param_mut(&mut self, group: usize, index: usize) -> &mut f64 {
        match group {
            0 => &mut self.kernel.fx[index],
            1 => &mut self.kernel.fy[index],
            2 => &mut self.kernel.fz[index],
            _ => &mut self.kernel.bias.as_mut().expect("bias group")[index],
        }
    }
}

/// Adapter: batch normalisation in a fixed mode.
pub struct BatchNormLayer {
    pub state: BatchNormState<f64>,
    pub mode: Mode,
}

impl Layer for BatchNormLayer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(batchnorm(x, &mut self.state, self.mode)?.0)
    }
    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)> {
        let (_, cache) = batchnorm(x, &mut self.state, self.mode)?;
        let g = batchnorm_backward(&cache, &self.state, gy)?;
        Ok((g.input, vec![g.scale, g.shift]))
    }
    fn groups(&self) -> Vec<String> {
        vec!["scale".into(), "shift".into()]
    }
    fn group_len(&self, _group: usize) -> usize {
        self.state.channels()
    }
    fn param_mut(&mut self, group: usize, index: usize) -> &mut f64 {
        match group {
            0 => &mut self.state.scale[index],
            _ => &mut self.state.shift[index],
        }
    }
}

/// Adapter: fully connected layer.
pub struct LinearLayer {
    pub params: LinearParams<f64>,
}

impl Layer for LinearLayer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        linear(x, &self.params)
    }
    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)> {
        let g = linear_backward(x, &self.params, gy)?;
        let mut groups = vec![g.weights];
        groups.extend(g.bias);
        Ok((g.input, groups))
    }
    fn groups(&self) -> Vec<String> {
        let mut v = vec!["weights".to_string()];
        if self.params.bias.is_some() {
            v.push("bias".into());
        }
        v
    }
    fn group_len(&self, group: usize) -> usize {
        if group == 0 {
            self.params.weights.len()
        } else {
            self.params.out_features
        }
    }
    fn param_mut(&mut self, group: usize, index: usize) -> &mut f64 {
        match group {
            0 => &mut self.params.weights[index],
            _ => &mut self.params.bias.as_mut().expect("bias group")[index],
        }
    }
}

/// Adapter: parameter-free activation.
pub struct ActivationLayer(pub Activation);

impl Layer for ActivationLayer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        activation(x, self.0)
    }
    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)> {
        let y = activation(x, self.0)?;
        Ok((activation_backward(self.0, &y, gy)?, Vec::new()))
    }
    fn groups(&self) -> Vec<String> {
        Vec::new()
    }
    fn group_len(&self, _group: usize) -> usize {
        0
    }
    fn param_mut(&mut self, _group: usize, _index: usize) -> &mut f64 {
        unreachable!("activation has no parameters")
    }
}

/// Adapter: 2^3 max pooling.
pub struct MaxPoolLayer;

impl Layer for MaxPoolLayer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(maxpool3d(x, 2)?.0)
    }
    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)> {
        let (_, ix) = maxpool3d(x, 2)?;
        Ok((maxpool3d_backward(&ix, gy)?, Vec::new()))
    }
    fn groups(&self) -> Vec<String> {
        Vec::new()
    }
    fn group_len(&self, _group: usize) -> usize {
        0
    }
    fn param_mut(&mut self, _group: usize, _index: usize) -> &mut f64 {
        unreachable!("pooling has no parameters")
    }
}

/// Adapter: train-mode dropout with a fixed mask seed.
pub struct DropoutLayer {
    pub rate: f64,
    pub seed: u64,
}

impl Layer for DropoutLayer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(dropout(x, self.rate, Mode::Train, self.seed)?.0)
    }
    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)> {
        let (_, mask) = dropout(x, self.rate, Mode::Train, self.seed)?;
        Ok((dropout_backward(mask.as_deref(), gy)?, Vec::new()))
    }
    fn groups(&self) -> Vec<String> {
        Vec::new()
    }
    fn group_len(&self, _group: usize) -> usize {
        0
    }
    fn param_mut(&mut self, _group: usize, _index: usize) -> &mut f64 {
        unreachable!("dropout has no parameters")
    }
}

/// Uniform random parameters for test layers.
pub fn random_dense(out_c: usize, in_c: usize, k: usize, seed: u64) -> DenseKernel3D<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = out_c * in_c * k * k * k;
    DenseKernel3D {
        out_channels: out_c,
        in_channels: in_c,
        size: k,
        weights: (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
        bias: Some((0..out_c).map(|_| rng.random_range(-0.5..0.5)).collect()),
    }
}

pub fn random_cross(out_c: usize, in_c: usize, len: usize, seed: u64) -> CrossKernel3D<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = CrossKernel3D::zeros(out_c, in_c, len, true);
    for v in k.fx.iter_mut().chain(&mut k.fy).chain(&mut k.fz) {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in k.bias.as_mut().unwrap() {
        *v = rng.random_range(-0.5..0.5);
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_conv_passes() {
        let mut layer = DenseConvLayer {
            kernel: random_dense(1, 1, 3, 1),
            stride: 1,
            padding: Padding::Same,
        };
        let r = grad_check(&mut layer, Shape::cube(1, 1, 5), 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn strided_conv_passes() {
        let mut layer = DenseConvLayer {
            kernel: random_dense(2, 2, 2, 2),
            stride: 2,
            padding: Padding::Valid,
        };
        let r = grad_check(&mut layer, Shape::cube(2, 2, 4), 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn cross_conv_passes() {
        let mut layer = CrossConvLayer {
            kernel: random_cross(2, 2, 7, 3),
        };
        let r = grad_check(&mut layer, Shape::cube(1, 2, 6), 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn transpose_conv_passes() {
        let mut layer = TransposeConvLayer {
            kernel: random_dense(2, 3, 2, 4),
        };
        let r = grad_check(&mut layer, Shape::cube(1, 3, 3), 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn linear_passes_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = LinearParams::zeros(12, 4, true);
        for v in params.weights.iter_mut().chain(params.bias.as_mut().unwrap()) {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut layer = LinearLayer { params };
        let r = grad_check(&mut layer, Shape::new(3, 3, 1, 2, 2), 1e-5).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn batchnorm_train_and_eval_pass() {
        for mode in [Mode::Train, Mode::Eval] {
            let mut state = BatchNormState::new(2);
            state.scale = vec![1.3, -0.6];
            state.shift = vec![0.2, 0.1];
            state.running_mean = vec![0.1, -0.3];
            state.running_var = vec![0.8, 1.7];
            let mut layer = BatchNormLayer { state, mode };
            let r = grad_check(&mut layer, Shape::cube(2, 2, 3), 1e-3).unwrap();
            assert!(r.passed(), "{mode:?} {r:?}");
        }
    }

    #[test]
    fn activations_pass_away_from_kinks() {
        let x = Tensor::from_fn(Shape::new(2, 2, 1, 3, 3), |i| {
            let v = ((i * 37 % 17) as f64 - 8.0) / 4.0;
            if v.abs() < 0.05 {
                0.3
            } else {
                v
            }
        });
        for kind in [Activation::Relu, Activation::Sigmoid, Activation::Softmax2] {
            let r = grad_check_at(&mut ActivationLayer(kind), &x, 1e-5).unwrap();
            assert!(r.passed(), "{kind:?} {r:?}");
        }
    }

    #[test]
    fn maxpool_and_dropout_pass() {
        // distinct values spaced well above the step size
        let x = Tensor::from_fn(Shape::cube(1, 2, 4), |i| ((i * 53) % 128) as f64 * 0.01);
        let r = grad_check_at(&mut MaxPoolLayer, &x, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
        let r = grad_check(&mut DropoutLayer { rate: 0.3, seed: 8 }, Shape::cube(1, 2, 3), 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn non_finite_gradient_is_reported_not_panicked() {
        let mut kernel = random_dense(1, 1, 3, 1);
        kernel.weights[0] = f64::NAN;
        let mut layer = DenseConvLayer {
            kernel,
            stride: 1,
            padding: Padding::Same,
        };
        let r = grad_check(&mut layer, Shape::cube(1, 1, 3), 1e-4).unwrap();
        assert!(r.non_finite);
        assert!(!r.passed());
    }
}
