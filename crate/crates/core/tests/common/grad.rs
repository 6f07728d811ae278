//! Finite-difference checks shared by the gradient tests and the
//! acceptance run.

use rand::Rng;
use volseg::nets::{LocNetConfig, Net, NetLayer, NormOrder, SegNetConfig};
use volseg::tensor::gradcheck::{
    grad_check, grad_check_at, grad_check_with_step, random_cross, random_dense, ActivationLayer, BatchNormLayer,
    CrossConvLayer, DenseConvLayer, DropoutLayer, LinearLayer, MaxPoolLayer, TransposeConvLayer,
};
use volseg::tensor::{Activation, BatchNormState, LinearParams, Mode, Padding, Shape, Tensor};
use volseg::training::{dice_loss, dice_loss_batch, soft_dsc, weighted_cross_entropy, ClassWeights};

use super::rng;

pub const H: f64 = 1e-3;

pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error <= self.tolerance
    }
}

/// Largest absolute difference scaled by the largest magnitude seen.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + H;
            let up = f(&probe);
            probe[i] = orig - H;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Dice gradient against differences of the coefficient itself, which
/// keeps the all-zero-mask case (loss within 1e-5 of 1) well conditioned.
pub fn dice_check(name: &str, probs: &[f64], mask: &[f64]) -> Check {
    let eps = 1e-4;
    let (_, grad) = dice_loss(probs, mask, eps).unwrap();
    let numeric: Vec<f64> = central_difference(probs, |p| -soft_dsc(p, mask, eps).unwrap());
    Check {
        name: name.into(),
        error: rel_error(&grad, &numeric),
        tolerance: 1e-4,
    }
}

pub fn random_probs(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(0.05..0.95)).collect()
}

pub fn random_binary(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_bool(0.4) as u8 as f64).collect()
}

pub fn ce_check(seed: u64) -> Check {
    let mut r = rng(seed);
    let w = ClassWeights::default();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let logits = [r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)];
        let positive = r.random_bool(0.5);
        let (_, g) = weighted_cross_entropy(logits, positive, w);
        let numeric = central_difference(&logits, |l| weighted_cross_entropy([l[0], l[1]], positive, w).0);
        worst = worst.max(rel_error(&g, &numeric));
    }
    Check {
        name: "weighted cross entropy".into(),
        error: worst,
        tolerance: 1e-5,
    }
}

fn report(name: &str, r: volseg::tensor::GradCheckReport) -> Check {
    Check {
        name: name.into(),
        error: if r.non_finite { f64::INFINITY } else { r.max_error() },
        tolerance: r.tolerance,
    }
}

/// Input with every entry at least 0.05 from zero, so ReLU probes never
/// straddle the kink.
fn kink_free(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = r.random_range(0.05..1.0);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

pub fn tiny_seg() -> SegNetConfig {
    SegNetConfig {
        input_side: 8,
        full_res_width: 2,
        full_res_layers: 2,
        kernel: 3,
        deep_width: 2,
        down_widths: vec![2, 3],
        lrp_layers: 2,
        cross_len: 3,
        fusion_layers: 1,
        order: NormOrder::ReluThenNorm,
    }
}

pub fn tiny_loc() -> LocNetConfig {
    LocNetConfig {
        input_side: 4,
        stage_widths: vec![2],
        hidden: 3,
        ..LocNetConfig::full()
    }
}

/// Every layer, both losses and two whole networks.
pub fn gradient_suite() -> Vec<Check> {
    let mut out = Vec::new();
    let conv = |kernel, stride, padding| DenseConvLayer { kernel, stride, padding };
    out.push(report("dense conv k3 same", grad_check(&mut conv(random_dense(2, 2, 3, 1), 1, Padding::Same), Shape::cube(1, 2, 5), 1e-4).unwrap()));
    out.push(report("dense conv k7 same", grad_check(&mut conv(random_dense(1, 1, 7, 2), 1, Padding::Same), Shape::cube(1, 1, 6), 1e-4).unwrap()));
    out.push(report("dense conv k2 stride 2", grad_check(&mut conv(random_dense(3, 2, 2, 3), 2, Padding::Valid), Shape::cube(2, 2, 4), 1e-4).unwrap()));
    out.push(report("cross conv len 7", grad_check(&mut CrossConvLayer { kernel: random_cross(2, 2, 7, 4) }, Shape::cube(1, 2, 6), 1e-4).unwrap()));
    out.push(report("transpose conv", grad_check(&mut TransposeConvLayer { kernel: random_dense(2, 3, 2, 5) }, Shape::cube(1, 3, 3), 1e-4).unwrap()));

    let mut r = rng(6);
    let mut params = LinearParams::zeros(12, 4, true);
    for v in params.weights.iter_mut().chain(params.bias.as_mut().unwrap()) {
        *v = r.random_range(-1.0..1.0);
    }
    out.push(report("linear", grad_check(&mut LinearLayer { params }, Shape::new(3, 3, 1, 2, 2), 1e-5).unwrap()));

    for mode in [Mode::Train, Mode::Eval] {
        let mut state = BatchNormState::new(2);
        state.scale = vec![1.3, -0.6];
        state.shift = vec![0.2, 0.1];
        state.running_mean = vec![0.1, -0.3];
        state.running_var = vec![0.8, 1.7];
        let r = grad_check(&mut BatchNormLayer { state, mode }, Shape::cube(2, 2, 3), 1e-3).unwrap();
        out.push(report(&format!("batchnorm {mode:?}"), r));
    }
    let x = kink_free(Shape::new(2, 2, 1, 3, 3), 7);
    for kind in [Activation::Relu, Activation::Sigmoid, Activation::Softmax2] {
        out.push(report(&format!("activation {kind:?}"), grad_check_at(&mut ActivationLayer(kind), &x, 1e-5).unwrap()));
    }
    let spaced = Tensor::from_fn(Shape::cube(1, 2, 4), |i| ((i * 53) % 128) as f64 * 0.01);
    out.push(report("maxpool", grad_check_at(&mut MaxPoolLayer, &spaced, 1e-6).unwrap()));
    out.push(report("dropout", grad_check(&mut DropoutLayer { rate: 0.3, seed: 8 }, Shape::cube(1, 2, 3), 1e-6).unwrap()));

    let n = 125;
    out.push(dice_check("dice random mask", &random_probs(n, 10), &random_binary(n, 11)));
    out.push(dice_check("dice all-zero mask", &random_probs(n, 12), &vec![0.0; n]));
    out.push(ce_check(13));

    let mut seg = NetLayer {
        net: Net::new(tiny_seg().spec().unwrap(), 0).unwrap(),
        seed: 9,
    };
    let xs = kink_free(Shape::cube(2, 1, 8), 14);
    out.push(report("segmentation net", grad_check_with_step(&mut seg, &xs, 1e-4, 1e-6).unwrap()));
    let mut loc = NetLayer {
        net: Net::new(tiny_loc().spec().unwrap(), 5).unwrap(),
        seed: 2,
    };
    // early gradients here are ~1e-5 of the loss, so a 1e-6 step drowns
    // them in cancellation error; 1e-4 stays clear of the kinks at this input
    let xl = kink_free(Shape::cube(3, 1, 4), 15);
    out.push(report("localization net", grad_check_with_step(&mut loc, &xl, 1e-4, 1e-4).unwrap()));

    let probs = Tensor::from_vec(Shape::cube(2, 1, 3), random_probs(54, 16)).unwrap();
    let mask = Tensor::from_vec(Shape::cube(2, 1, 3), random_binary(54, 17)).unwrap();
    let (_, g) = dice_loss_batch(&probs, &mask, 1e-4).unwrap();
    let numeric = central_difference(probs.data(), |p| {
        let t = Tensor::from_vec(probs.shape(), p.to_vec()).unwrap();
        dice_loss_batch(&t, &mask, 1e-4).unwrap().0
    });
    out.push(Check {
        name: "dice batch".into(),
        error: rel_error(g.data(), &numeric),
        tolerance: 1e-4,
    });
    out
}
