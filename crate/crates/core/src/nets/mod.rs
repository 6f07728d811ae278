//! Network descriptions, the graph executor, and analytic calculators.

pub mod analysis;
pub mod build;
pub mod checkpoint;
pub mod net;
pub mod spec;

pub use analysis::{count_parameters, count_spec_parameters, receptive_field, CountMode, ParameterCount, ReceptiveField};
pub use build::{build_localization_net, build_segmentation_net, LocNetConfig, SegNetConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use net::{Gradients, Net, NetLayer, NodeParams, Tape};
pub use spec::{LayerKind, NetSpec, Node, NormOrder, Stream};

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::tensor::gradcheck::grad_check_with_step;
    use crate::tensor::{softmax2, Mode, Shape, Tensor};

    fn tiny_seg() -> SegNetConfig {
        SegNetConfig {
            input_side: 8,
            full_res_width: 2,
            full_res_layers: 2,
            kernel: 3,
            deep_width: 2,
            down_widths: vec![3, 4],
            lrp_layers: 2,
            cross_len: 3,
            fusion_layers: 1,
            order: NormOrder::ReluThenNorm,
        }
    }

    fn random_input(shape: Shape) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn full_counts() {
        let seg = SegNetConfig::full().spec().unwrap();
        let actual = count_spec_parameters(&seg, CountMode::Actual).total;
        let dense = count_spec_parameters(&seg, CountMode::DenseEquivalent).total;
        assert!(actual < 2_000_000, "{actual}");
        assert!(dense > 15_000_000, "{dense}");
        let loc = LocNetConfig::full().spec().unwrap();
        let l = count_spec_parameters(&loc, CountMode::Actual).total;
        assert!((1_480_000..1_500_000).contains(&l), "{l}");
    }

    #[test]
    fn full_rf_is_global() {
        let rf = receptive_field(&SegNetConfig::full().spec().unwrap());
        assert!(rf.size.iter().all(|&r| r >= 128), "{rf:?}");
        assert_eq!(rf.jump, [1; 3]);
    }

    #[test]
    fn seg_net_gradients() {
        let mut layer = NetLayer {
            net: Net::new(tiny_seg().spec().unwrap(), 0).unwrap(),
            seed: 9,
        };
        let report = grad_check_with_step(&mut layer, &random_input(Shape::cube(2, 1, 8)), 1e-4, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn loc_net_gradients() {
        let cfg = LocNetConfig {
            input_side: 4,
            stage_widths: vec![2],
            hidden: 3,
            ..LocNetConfig::full()
        };
        let mut layer = NetLayer {
            net: Net::new(cfg.spec().unwrap(), 5).unwrap(),
            seed: 2,
        };
        let report = grad_check_with_step(&mut layer, &random_input(Shape::cube(3, 1, 4)), 1e-4, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net: Net<f32> = Net::new(tiny_seg().spec().unwrap(), 1).unwrap();
        let x = Tensor::from_fn(Shape::cube(2, 1, 8), |i| (i % 7) as f32 * 0.1);
        net.forward_train(&x, 0).unwrap();
        let bytes = encode_checkpoint(&net);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_checkpoint(&back), bytes);
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(crate::Error::Truncated { .. })));
    }

    #[test]
    fn loc_output_normalises() {
        let net: Net<f32> = Net::new(LocNetConfig::desk().spec().unwrap(), 4).unwrap();
        let x = Tensor::from_fn(Shape::cube(2, 1, 24), |i| ((i * 31) % 17) as f32 / 17.0);
        let p = softmax2(&net.infer(&x).unwrap()).unwrap();
        for n in 0..2 {
            let s: f32 = p.item(n).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_forward_is_repeatable_and_constant_on_zero() {
        let mut net: Net<f32> = Net::new(tiny_seg().spec().unwrap(), 8).unwrap();
        let x = Tensor::zeros(Shape::cube(1, 1, 8));
        let a = net.forward(&x, Mode::Eval, 0).unwrap();
        let b = net.forward(&x, Mode::Eval, 1).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = a.data().iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(hi - lo < 1e-5);
    }
}
