//! Mini-batch SGD loops for the localization classifier and the
//! segmentation net.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::AugmentationOp;
use super::examples::{
    balance_classes, extract_localization_examples, extract_segmentation_subvolumes, WindowClass,
};
use super::loss::{dice_loss_batch, weighted_cross_entropy_batch, ClassWeights, DICE_EPS};
use super::optim::{lr_at_epoch, sgd_step, OptimizerState, SgdConfig};
use crate::config::RunConfig;
use crate::data::{Mask, Volume};
use crate::error::{Error, Result};
use crate::nets::Net;
use crate::pipeline::{downsample2, downsample_mask_counts, pad_to_min};
use crate::tensor::{Real, Tensor};

/// One optimizer step, logged as `epoch=E step=S lr=LR loss=L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    /// 1-based, counted across epochs.
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} step={} lr={} loss={:.6}", self.epoch, self.step, self.lr, self.loss)
    }
}

impl FromStr for StepRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::Malformed(format!("bad step record {line:?}"));
        let mut fields = line.split_whitespace().map(|kv| kv.split_once('='));
        let mut next = |key: &str| match fields.next() {
            Some(Some((k, v))) if k == key => Ok(v),
            _ => Err(bad()),
        };
        let epoch = next("epoch")?.parse().map_err(|_| bad())?;
        let step = next("step")?.parse().map_err(|_| bad())?;
        let lr = next("lr")?.parse().map_err(|_| bad())?;
        let loss = next("loss")?.parse().map_err(|_| bad())?;
        Ok(StepRecord { epoch, step, lr, loss })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub seed: u64,
    pub augment: bool,
    /// Stops each epoch early after this many steps.
    pub max_steps_per_epoch: Option<usize>,
}

impl TrainOptions {
    pub fn new(seed: u64) -> Self {
        TrainOptions {
            seed,
            augment: true,
            max_steps_per_epoch: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocExample {
    pub volume: usize,
    pub anchor: [usize; 3],
    pub positive: bool,
}

/// Half-resolution volumes and the labelled windows cut from them.
#[derive(Clone, Debug, Default)]
pub struct LocalizationSet {
    pub volumes: Vec<Volume<f32>>,
    pub examples: Vec<LocExample>,
}

impl LocalizationSet {
    /// Labels windows in every volume (padded to `box_side`, then halved)
    /// with separate positive and negative scans, and balances the classes,
    /// at most `per_class_cap` each.
    pub fn from_volumes(
        pairs: &[(Volume<f32>, Mask)],
        window: usize,
        box_side: usize,
        (stride_pos, stride_neg): (usize, usize),
        per_class_cap: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut set = LocalizationSet::default();
        let mut labels = Vec::new();
        for (v, (img, mask)) in pairs.iter().enumerate() {
            let img = pad_to_min(img, box_side).volume;
            let counts = downsample_mask_counts(&pad_to_min(mask, box_side).volume);
            set.volumes.push(downsample2(&img));
            labels.extend(
                extract_localization_examples(&counts, window, stride_pos, stride_neg)?
                    .into_iter()
                    .map(|l| (v, l)),
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (v, l) in balance_classes(&labels, |(_, l)| l.class, per_class_cap, &mut rng) {
            set.examples.push(LocExample {
                volume: v,
                anchor: l.anchor,
                positive: l.class == WindowClass::Positive,
            });
        }
        Ok(set)
    }

    pub fn from_config(pairs: &[(Volume<f32>, Mask)], cfg: &RunConfig, seed: u64) -> Result<Self> {
        Self::from_volumes(
            pairs,
            cfg.pipeline.window,
            cfg.pipeline.box_side,
            (cfg.loc_stride_pos, cfg.loc_stride_neg),
            cfg.loc_examples_per_class,
            seed,
        )
    }

    pub fn window(&self, i: usize, side: usize) -> Result<Volume<f32>> {
        let e = self.examples[i];
        let v = self.volumes.get(e.volume).ok_or_else(|| Error::invalid("example names a missing volume"))?;
        v.crop(e.anchor, [side; 3])
    }
}

/// Full-resolution volume/mask pairs and the subvolume anchors in them.
#[derive(Clone, Debug, Default)]
pub struct SegmentationSet {
    pub volumes: Vec<(Volume<f32>, Mask)>,
    pub samples: Vec<(usize, [usize; 3])>,
}

impl SegmentationSet {
    /// Pads every pair to `side` and keeps each stride-1 cube holding at
    /// least `min_fraction` of its mask.
    pub fn from_volumes(pairs: &[(Volume<f32>, Mask)], side: usize, min_fraction: f64) -> Result<Self> {
        let mut set = SegmentationSet::default();
        for (v, (img, mask)) in pairs.iter().enumerate() {
            let mask = pad_to_min(mask, side).volume;
            set.samples
                .extend(extract_segmentation_subvolumes(&mask, side, min_fraction)?.into_iter().map(|a| (v, a)));
            set.volumes.push((pad_to_min(img, side).volume, mask));
        }
        Ok(set)
    }

    pub fn sample(&self, i: usize, side: usize) -> Result<(Volume<f32>, Mask)> {
        let (v, a) = self.samples[i];
        let (img, mask) = self.volumes.get(v).ok_or_else(|| Error::invalid("sample names a missing volume"))?;
        Ok((img.crop(a, [side; 3])?, mask.crop(a, [side; 3])?))
    }
}

fn input_side<T: Real>(net: &Net<T>) -> Result<usize> {
    let [d, h, w] = net.spec().input_spatial;
    if d != h || h != w {
        return Err(Error::invalid("training expects a cubic net input"));
    }
    Ok(d)
}

fn stack_volumes<T: Real>(vols: &[Volume<f32>]) -> Result<Tensor<T>> {
    Tensor::stack(&vols.iter().map(|v| v.to_tensor()).collect::<Vec<_>>())
}

/// Shared epoch/batch driver. `step` returns the batch loss after the
/// gradients have been applied.
fn run_epochs<R: RngCore>(
    cfg: &SgdConfig,
    opts: &TrainOptions,
    rng: &mut R,
    mut epoch_order: impl FnMut(&mut R) -> Vec<usize>,
    mut step: impl FnMut(&[usize], f64, &mut R) -> Result<f64>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    let mut log = Vec::new();
    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg)?;
        let order = epoch_order(rng);
        let limit = opts.max_steps_per_epoch.unwrap_or(usize::MAX);
        for batch in order.chunks(cfg.batch_size).take(limit) {
            let loss = step(batch, lr, rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            let rec = StepRecord {
                epoch,
                step: log.len() + 1,
                lr,
                loss,
            };
            on_step(&rec);
            log.push(rec);
        }
    }
    Ok(log)
}

fn apply_step<T: Real>(
    net: &mut Net<T>,
    x: &Tensor<T>,
    dropout_seed: u64,
    cfg: &SgdConfig,
    state: &mut OptimizerState<T>,
    lr: f64,
    loss_grad: impl FnOnce(&Tensor<T>) -> Result<(f64, Tensor<T>)>,
) -> Result<f64> {
    let (y, tape) = net.forward_train(x, dropout_seed)?;
    let (loss, gy) = loss_grad(&y)?;
    let (grads, _) = net.backward(&tape, &gy)?;
    drop(tape);
    sgd_step(&mut net.learnable_mut(), &grads, cfg, state, lr)?;
    Ok(loss)
}

/// Trains the window classifier with weighted cross entropy. Every epoch
/// visits all examples in a fresh random order.
pub fn train_localization<T: Real>(
    net: &mut Net<T>,
    set: &LocalizationSet,
    cfg: &SgdConfig,
    opts: &TrainOptions,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    if set.examples.is_empty() {
        return Err(Error::invalid("no localization examples"));
    }
    let side = input_side(net)?;
    let weights = ClassWeights::default();
    let mut state = OptimizerState::new(&net.learnable());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = set.examples.len();
    run_epochs(
        cfg,
        opts,
        &mut rng,
        |rng| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order
        },
        |batch, lr, rng| {
            let mut vols = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut w = set.window(i, side)?;
                if opts.augment {
                    w = AugmentationOp::sample(rng, w.dims()).apply_volume(&w)?;
                }
                vols.push(w);
                labels.push(set.examples[i].positive);
            }
            let x = stack_volumes(&vols)?;
            let seed = rng.next_u64();
            apply_step(net, &x, seed, cfg, &mut state, lr, |y| {
                weighted_cross_entropy_batch(y, &labels, weights)
            })
        },
        on_step,
    )
}

/// Trains the segmentation net with the soft Dice loss. Each epoch draws
/// `min(pool, samples_per_epoch)` subvolumes without replacement.
pub fn train_segmentation<T: Real>(
    net: &mut Net<T>,
    set: &SegmentationSet,
    cfg: &SgdConfig,
    samples_per_epoch: usize,
    opts: &TrainOptions,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    if set.samples.is_empty() {
        return Err(Error::invalid("no segmentation samples"));
    }
    let side = input_side(net)?;
    let mut state = OptimizerState::new(&net.learnable());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pool = set.samples.len();
    let per_epoch = samples_per_epoch.min(pool);
    run_epochs(
        cfg,
        opts,
        &mut rng,
        |rng| rand::seq::index::sample(rng, pool, per_epoch).into_vec(),
        |batch, lr, rng| {
            let mut vols = Vec::with_capacity(batch.len());
            let mut masks = Vec::with_capacity(batch.len());
            for &i in batch {
                let (mut v, mut m) = set.sample(i, side)?;
                if opts.augment {
                    let op = AugmentationOp::sample(rng, v.dims());
                    v = op.apply_volume(&v)?;
                    m = op.apply_volume(&m)?;
                }
                vols.push(v);
                masks.push(m.map(|b| (b != 0) as u8 as f32));
            }
            let x = stack_volumes(&vols)?;
            let target: Tensor<T> = stack_volumes(&masks)?;
            let seed = rng.next_u64();
            apply_step(net, &x, seed, cfg, &mut state, lr, |y| dice_loss_batch(y, &target, DICE_EPS))
        },
        on_step,
    )
}

/// Fraction of windows classified correctly at p = 0.5, in eval mode.
pub fn localization_accuracy<T: Real>(net: &Net<T>, set: &LocalizationSet, batch: usize) -> Result<f64> {
    let side = input_side(net)?;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..set.examples.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let vols = chunk.iter().map(|&i| set.window(i, side)).collect::<Result<Vec<_>>>()?;
        let y = net.infer(&stack_volumes::<T>(&vols)?)?;
        for (k, &i) in chunk.iter().enumerate() {
            let l = y.item(k);
            let p = super::loss::positive_probability([l[0].as_f64(), l[1].as_f64()]);
            correct += ((p > 0.5) == set.examples[i].positive) as usize;
        }
    }
    Ok(correct as f64 / set.examples.len().max(1) as f64)
}

/// Draws `count` indices uniformly without replacement, or all of them.
pub fn subsample<R: Rng + ?Sized>(rng: &mut R, len: usize, count: usize) -> Vec<usize> {
    let mut v = rand::seq::index::sample(rng, len, count.min(len)).into_vec();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_record_round_trip() {
        let r = StepRecord {
            epoch: 4,
            step: 17,
            lr: 0.001,
            loss: 0.25,
        };
        let line = r.to_string();
        assert_eq!(line, "epoch=4 step=17 lr=0.001 loss=0.250000");
        assert_eq!(line.parse::<StepRecord>().unwrap(), r);
        assert!("step=1 epoch=1 lr=1 loss=1".parse::<StepRecord>().is_err());
    }
}
