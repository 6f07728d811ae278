//! Phantom study: train both stages on synthetic volumes and score the
//! end-to-end pipeline on held-out ones.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::metrics::FAILURE_DSC;
use crate::config::RunConfig;
use crate::data::{box_containment, dsc, generate_phantom, Mask, PhantomConfig, Volume};
use crate::error::Result;
use crate::nets::Net;
use crate::pipeline::segment_end_to_end;
use crate::training::{
    train_localization, train_segmentation, LocalizationSet, SegmentationSet, StepRecord, TrainOptions,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub run: RunConfig,
    pub train_count: usize,
    pub test_count: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub loc_ensemble: usize,
    pub seg_ensemble: usize,
    pub net_seed: u64,
}

impl StudyConfig {
    /// 40 training and 20 test phantoms near 96³.
    pub fn desk() -> Self {
        StudyConfig {
            run: RunConfig::desk(),
            train_count: 40,
            test_count: 20,
            train_seed: 1_000,
            test_seed: 9_000,
            loc_ensemble: 2,
            seg_ensemble: 2,
            net_seed: 77,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyVolume {
    pub seed: u64,
    pub dims: [usize; 3],
    pub dsc: f64,
    pub containment: f64,
    pub fallback: bool,
    pub positive_windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub volumes: Vec<StudyVolume>,
    pub mean_dsc: f64,
    pub failures: usize,
    pub boxes_fully_contained: usize,
    pub boxes_95_contained: usize,
    pub loc_examples: usize,
    pub seg_pool: usize,
    pub seconds_training: f64,
    pub seconds_total: f64,
}

pub struct TrainedModels {
    pub loc: Vec<Net<f32>>,
    pub seg: Vec<Net<f32>>,
}

pub fn generate_cohort(cfg: &PhantomConfig, count: usize, seed: u64) -> Result<Vec<(Volume<f32>, Mask)>> {
    (0..count as u64).map(|i| generate_phantom(cfg, seed + i)).collect()
}

/// Trains the localization and segmentation ensembles on `train`.
pub fn train_models(
    cfg: &StudyConfig,
    train: &[(Volume<f32>, Mask)],
    log: &mut dyn FnMut(&str),
) -> Result<(TrainedModels, usize, usize)> {
    let run = &cfg.run;
    let loc_set = LocalizationSet::from_config(train, run, cfg.net_seed)?;
    let seg_set = SegmentationSet::from_volumes(train, run.pipeline.box_side, run.subvolume_fraction)?;
    log(&format!(
        "localization examples {} segmentation pool {}",
        loc_set.examples.len(),
        seg_set.samples.len()
    ));
    let mut models = TrainedModels {
        loc: Vec::new(),
        seg: Vec::new(),
    };
    for j in 0..cfg.loc_ensemble as u64 {
        let mut net = Net::new(run.loc_net.spec()?, cfg.net_seed + 10 + j)?;
        let recs = train_localization(&mut net, &loc_set, &run.loc_sgd, &TrainOptions::new(cfg.net_seed + 20 + j), &mut |_| {})?;
        log(&format!("loc net {j}: {}", epoch_summary(&recs)));
        models.loc.push(net);
    }
    for j in 0..cfg.seg_ensemble as u64 {
        let mut net = Net::new(run.seg_net.spec()?, cfg.net_seed + 30 + j)?;
        let opts = TrainOptions::new(cfg.net_seed + 40 + j);
        let recs = train_segmentation(&mut net, &seg_set, &run.seg_sgd, run.seg_samples_per_epoch, &opts, &mut |_| {})?;
        log(&format!("seg net {j}: {}", epoch_summary(&recs)));
        models.seg.push(net);
    }
    Ok((models, loc_set.examples.len(), seg_set.samples.len()))
}

/// Mean loss per epoch, e.g. `0.52 0.31 0.22`.
pub fn epoch_summary(recs: &[StepRecord]) -> String {
    let epochs = recs.iter().map(|r| r.epoch).max().unwrap_or(0);
    (1..=epochs)
        .map(|e| {
            let l: Vec<f64> = recs.iter().filter(|r| r.epoch == e).map(|r| r.loss).collect();
            format!("{:.4}", l.iter().sum::<f64>() / l.len().max(1) as f64)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs the trained pipeline over `test` and summarises it.
pub fn evaluate_models(
    cfg: &StudyConfig,
    models: &TrainedModels,
    test: &[(Volume<f32>, Mask)],
    log: &mut dyn FnMut(&str),
) -> Result<Vec<StudyVolume>> {
    let mut out = Vec::with_capacity(test.len());
    for (i, (img, truth)) in test.iter().enumerate() {
        let r = segment_end_to_end(img, &models.loc, &models.seg, &cfg.run.pipeline)?;
        let loc = r.localization.as_ref().expect("end to end localizes");
        let v = StudyVolume {
            seed: cfg.test_seed + i as u64,
            dims: img.dims(),
            dsc: dsc(&r.mask, truth)?,
            containment: box_containment(&r.bbox, truth)?,
            fallback: loc.fallback,
            positive_windows: loc.positives.len(),
        };
        log(&format!(
            "test {i}: dsc {:.4} containment {:.4} positives {} fallback {}",
            v.dsc, v.containment, v.positive_windows, v.fallback
        ));
        out.push(v);
    }
    Ok(out)
}

pub fn run_study(cfg: &StudyConfig, log: &mut dyn FnMut(&str)) -> Result<StudyReport> {
    let start = Instant::now();
    let train = generate_cohort(&cfg.run.phantom, cfg.train_count, cfg.train_seed)?;
    let test = generate_cohort(&cfg.run.phantom, cfg.test_count, cfg.test_seed)?;
    let (models, loc_examples, seg_pool) = train_models(cfg, &train, log)?;
    let seconds_training = start.elapsed().as_secs_f64();
    let volumes = evaluate_models(cfg, &models, &test, log)?;
    let n = volumes.len().max(1) as f64;
    Ok(StudyReport {
        mean_dsc: volumes.iter().map(|v| v.dsc).sum::<f64>() / n,
        failures: volumes.iter().filter(|v| v.dsc < FAILURE_DSC).count(),
        boxes_fully_contained: volumes.iter().filter(|v| v.containment >= 1.0).count(),
        boxes_95_contained: volumes.iter().filter(|v| v.containment >= 0.95).count(),
        volumes,
        loc_examples,
        seg_pool,
        seconds_training,
        seconds_total: start.elapsed().as_secs_f64(),
    })
}
