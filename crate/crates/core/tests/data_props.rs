mod common;

use common::{random_blob_mask, rng};
use proptest::prelude::*;
use rand::Rng;
use volseg::data::metrics::{box_containment, FAILURE_DSC};
use volseg::data::{
    decode_volume, dsc, encode_volume, evaluate, evaluate_lists, export_slice, generate_phantom, read_jsonl,
    read_mask, read_volume, write_jsonl, write_volume, AnyVolume, Axis, EvalCase, Mask, PhantomConfig, Volume,
};
use volseg::nets::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, LocNetConfig, Net};
use volseg::pipeline::{label_components, BoundingBox, Connectivity};
use volseg::tensor::{Shape, Tensor};
use volseg::Error;

/// DBV1 bytes assembled field by field.
fn hand_encoded(dims: [u32; 3], spacing: [f32; 3], dtype: u8, payload: &[u8]) -> Vec<u8> {
    let mut b = b"DBV1".to_vec();
    for d in dims {
        b.extend(d.to_le_bytes());
    }
    for s in spacing {
        b.extend(s.to_le_bytes());
    }
    b.push(dtype);
    b.extend(payload);
    b
}

#[test]
fn volume_bytes_match_the_documented_layout() {
    let v = Volume::new([2, 1, 2], vec![1.5f32, -2.0, 0.25, f32::MIN_POSITIVE]).unwrap().with_spacing([50.0, 50.0, 25.0]);
    let payload: Vec<u8> = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    assert_eq!(encode_volume(&v).unwrap(), hand_encoded([2, 1, 2], [50.0, 50.0, 25.0], 0, &payload));
    let m = Mask::new([3, 1, 1], vec![0, 1, 1]).unwrap();
    assert_eq!(encode_volume(&m).unwrap(), hand_encoded([3, 1, 1], [50.0; 3], 1, &[0, 1, 1]));
}

#[test]
fn corrupt_volumes_give_the_designated_errors() {
    let bytes = encode_volume(&Volume::new([2, 2, 2], vec![1.0f32; 8]).unwrap()).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_volume(&bad), Err(Error::BadMagic { .. })));
    assert!(matches!(decode_volume(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
    assert!(matches!(decode_volume(&bytes[..10]), Err(Error::Truncated { .. })));
    let mut dtype = bytes.clone();
    dtype[28] = 7;
    assert!(matches!(decode_volume(&dtype), Err(Error::UnknownDtype(7))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_volume(&long), Err(Error::Malformed(_))));
    let nonbinary = hand_encoded([2, 1, 1], [1.0; 3], 1, &[0, 2]);
    assert!(matches!(decode_volume(&nonbinary), Err(Error::Malformed(_))));
    let zero = hand_encoded([0, 1, 1], [1.0; 3], 1, &[]);
    assert!(matches!(decode_volume(&zero), Err(Error::Malformed(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn volumes_round_trip_bit_exactly(seed in any::<u64>(), x in 1usize..7, y in 1usize..7, z in 1usize..7) {
        let mut r = rng(seed);
        let bits: Vec<f32> = (0..x * y * z).map(|_| f32::from_bits(r.random())).filter(|v| !v.is_nan()).collect();
        let n = bits.len();
        let v = Volume::new([n, 1, 1], bits).unwrap().with_spacing([r.random(), 1.0, 2.0]);
        match decode_volume(&encode_volume(&v).unwrap()).unwrap() {
            AnyVolume::Intensity(back) => {
                prop_assert_eq!(back.dims(), v.dims());
                prop_assert!(back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
                prop_assert_eq!(back.spacing().map(f32::to_bits), v.spacing().map(f32::to_bits));
            }
            AnyVolume::Mask(_) => prop_assert!(false, "decoded as mask"),
        }
        let m = random_blob_mask([x.max(2), y.max(2), z.max(2)], &mut r);
        match decode_volume(&encode_volume(&m).unwrap()).unwrap() {
            AnyVolume::Mask(back) => prop_assert_eq!(back, m),
            AnyVolume::Intensity(_) => prop_assert!(false, "decoded as intensity"),
        }
    }

    #[test]
    fn truncated_volumes_never_panic(cut in 0usize..64) {
        let bytes = encode_volume(&Volume::new([3, 3, 1], vec![0.5f32; 9]).unwrap()).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(decode_volume(&bytes[..cut]).is_err());
    }
}

fn small_loc_net(seed: u64) -> Net<f32> {
    let cfg = LocNetConfig {
        input_side: 8,
        stage_widths: vec![2, 4],
        hidden: 5,
        ..LocNetConfig::full()
    };
    let mut net = Net::new(cfg.spec().unwrap(), seed).unwrap();
    // populate running statistics so they are exercised too
    let x = Tensor::from_fn(Shape::cube(3, 1, 8), |i| ((i * 13) % 11) as f32 * 0.1);
    net.forward_train(&x, 1).unwrap();
    net
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let net = small_loc_net(3);
    let bytes = encode_checkpoint(&net);
    assert_eq!(&bytes[..4], b"DBVW");
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(encode_checkpoint(&back), bytes);
    let bits = |n: &Net<f32>| n.learnable().iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&net));
    let x = Tensor::from_fn(Shape::cube(2, 1, 8), |i| (i % 5) as f32);
    assert_eq!(back.infer(&x).unwrap(), net.infer(&x).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.dbvw");
    save_checkpoint(&net, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(encode_checkpoint(&load_checkpoint(&path).unwrap()), bytes);
}

#[test]
fn corrupt_checkpoints_give_the_designated_errors() {
    let bytes = encode_checkpoint(&small_loc_net(4));
    let mut magic = bytes.clone();
    magic[3] = b'X';
    assert!(matches!(decode_checkpoint(&magic), Err(Error::BadMagic { .. })));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(decode_checkpoint(&version), Err(Error::UnsupportedVersion(9))));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
    assert!(matches!(decode_checkpoint(&bytes[..2]), Err(Error::Truncated { .. })));
    for cut in (0..bytes.len()).step_by(97) {
        assert!(decode_checkpoint(&bytes[..cut]).is_err(), "prefix {cut} decoded");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flipped_checkpoint_bytes_never_panic(pos in any::<prop::sample::Index>(), val in any::<u8>()) {
        let mut bytes = encode_checkpoint(&small_loc_net(5));
        let i = pos.index(bytes.len());
        bytes[i] = val;
        let _ = decode_checkpoint(&bytes);
    }
}

// ---- phantoms -------------------------------------------------------------

#[test]
fn phantoms_are_deterministic_and_well_formed() {
    let cfg = PhantomConfig::desk();
    for seed in [1u64, 2, 3] {
        let (img, mask) = generate_phantom(&cfg, seed).unwrap();
        let (img2, mask2) = generate_phantom(&cfg, seed).unwrap();
        assert_eq!(encode_volume(&img).unwrap(), encode_volume(&img2).unwrap());
        assert_eq!(mask, mask2);
        assert_eq!(img.dims(), mask.dims());
        for a in 0..3 {
            assert!((cfg.dims_min[a]..=cfg.dims_max[a]).contains(&img.dims()[a]));
        }
        let f = mask.count_nonzero() as f64 / mask.len() as f64;
        assert!(f >= cfg.fraction_band.0 && f <= cfg.fraction_band.1, "{f}");
        assert_eq!(label_components(&mask, Connectivity::TwentySix).sizes.len(), 1);
        assert!(img.data().iter().all(|v| v.is_finite() && *v >= 0.0));
        // the cavity is darker than its surroundings on average
        let (mut inside, mut outside) = ((0.0, 0usize), (0.0, 0usize));
        for (&v, &m) in img.data().iter().zip(mask.data()) {
            let acc = if m != 0 { &mut inside } else { &mut outside };
            acc.0 += v as f64;
            acc.1 += 1;
        }
        assert!(inside.0 / (inside.1 as f64) < outside.0 / (outside.1 as f64));
    }
    assert_ne!(generate_phantom(&cfg, 1).unwrap().1, generate_phantom(&cfg, 2).unwrap().1);
}

#[test]
fn bad_phantom_config_is_a_generation_error() {
    let cfg = PhantomConfig {
        speckle_looks: 0.0,
        ..PhantomConfig::desk()
    };
    assert!(matches!(generate_phantom(&cfg, 1), Err(Error::Generation(_))));
}

// ---- metrics --------------------------------------------------------------

#[test]
fn dsc_hand_values() {
    let a = Mask::new([4, 1, 1], vec![1, 1, 0, 0]).unwrap();
    let b = Mask::new([4, 1, 1], vec![0, 1, 1, 0]).unwrap();
    assert_eq!(dsc(&a, &b).unwrap(), 0.5);
    assert_eq!(dsc(&a, &a).unwrap(), 1.0);
    let empty = Mask::zeros([4, 1, 1]);
    assert_eq!(dsc(&empty, &empty).unwrap(), 1.0);
    assert_eq!(dsc(&empty, &a).unwrap(), 0.0);
    assert!(matches!(dsc(&a, &Mask::zeros([2, 2, 1])), Err(Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dsc_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_blob_mask([8, 8, 8], &mut r);
        let b = random_blob_mask([8, 8, 8], &mut r);
        let d = dsc(&a, &b).unwrap();
        prop_assert_eq!(d, dsc(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(dsc(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn evaluation_counts_failures_and_boxes() {
    let truth = Mask::from_fn([10, 10, 10], |x, y, z| (x < 4 && y < 4 && z < 4) as u8);
    let quarter = Mask::from_fn([10, 10, 10], |x, y, z| (x < 1 && y < 4 && z < 4) as u8);
    let inside = BoundingBox { anchor: [0; 3], side: 5 };
    let partial = BoundingBox { anchor: [1, 0, 0], side: 5 };
    assert_eq!(box_containment(&inside, &truth).unwrap(), 1.0);
    assert_eq!(box_containment(&partial, &truth).unwrap(), 0.75);
    let report = evaluate(&[
        EvalCase {
            name: "a".into(),
            prediction: &truth,
            truth: &truth,
            bbox: Some(inside),
        },
        EvalCase {
            name: "b".into(),
            prediction: &quarter,
            truth: &truth,
            bbox: Some(partial),
        },
    ])
    .unwrap();
    let quarter_dsc = 2.0 * 16.0 / 80.0;
    assert!(quarter_dsc < FAILURE_DSC);
    assert_eq!(report.volumes[1].dsc, quarter_dsc);
    assert_eq!(report.mean_dsc, (1.0 + quarter_dsc) / 2.0);
    assert_eq!(report.failures, 1);
    assert_eq!((report.boxes_fully_contained, report.boxes_95_contained), (1, 1));
    assert!(evaluate_lists(std::slice::from_ref(&truth), &[], None).is_err());
    assert!(matches!(box_containment(&inside, &Mask::zeros([10, 10, 10])), Err(Error::EmptyMask(_))));
}

#[test]
fn files_jsonl_and_slices() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(9);
    let m = random_blob_mask([6, 5, 4], &mut r);
    let v = m.map(|b| b as f32 * 2.0 + 1.0);
    write_volume(&v, dir.path().join("v.dbv")).unwrap();
    write_volume(&m, dir.path().join("m.dbv")).unwrap();
    assert_eq!(read_mask(dir.path().join("m.dbv")).unwrap(), m);
    assert!(matches!(read_volume(dir.path().join("v.dbv")).unwrap(), AnyVolume::Intensity(_)));
    assert!(matches!(read_volume(dir.path().join("missing.dbv")), Err(Error::Io { .. })));

    let report = evaluate_lists(std::slice::from_ref(&m), std::slice::from_ref(&m), None).unwrap();
    let path = dir.path().join("r.jsonl");
    write_jsonl(&path, &report.volumes).unwrap();
    let back: Vec<volseg::data::VolumeMetrics> = read_jsonl(&path).unwrap();
    assert_eq!(back, report.volumes);

    let out = export_slice(&v, Some(&m), Axis::Z, 2, dir.path().join("s.pgm")).unwrap();
    assert_eq!(out.len(), 2);
    let img = std::fs::read(&out[0]).unwrap();
    assert!(img.starts_with(b"P5\n6 5\n255\n"));
    assert_eq!(img.len(), b"P5\n6 5\n255\n".len() + 30);
    let mask_px = std::fs::read(&out[1]).unwrap();
    let body = &mask_px[mask_px.len() - 30..];
    for yy in 0..5 {
        for xx in 0..6 {
            assert_eq!(body[yy * 6 + xx] == 255, m.get(xx, yy, 2) != 0);
        }
    }
    assert!(export_slice(&v, None, Axis::X, 6, dir.path().join("t.pgm")).is_err());
}
