use serde::{Deserialize, Serialize};

use super::components::{remove_small_components, ComponentCensus, Connectivity};
use super::resample::{downsample2, enumerate_windows, pad_to_min, BoundingBox};
use crate::data::{dsc, Mask, Volume};
use crate::error::{Error, Result};
use crate::nets::Net;
use crate::tensor::{softmax2, Real, Tensor};

/// Inference constants for one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Classifier window side at half resolution.
    pub window: usize,
    pub stride: usize,
    pub loc_threshold: f64,
    /// Segmentation cube side at full resolution.
    pub box_side: usize,
    pub seg_threshold: f64,
    pub min_component: usize,
    pub connectivity: Connectivity,
    /// Windows classified per forward pass.
    pub batch: usize,
}

impl PipelineConfig {
    pub fn full() -> Self {
        PipelineConfig {
            window: 64,
            stride: 3,
            loc_threshold: 0.95,
            box_side: 128,
            seg_threshold: 0.92,
            min_component: 300,
            connectivity: Connectivity::TwentySix,
            batch: 16,
        }
    }

    /// Window 24 and box 48; the component floor scales with box volume.
    pub fn desk() -> Self {
        let full = Self::full();
        let ratio = (48.0f64 / full.box_side as f64).powi(3);
        PipelineConfig {
            window: 24,
            box_side: 48,
            min_component: (full.min_component as f64 * ratio).round() as usize,
            batch: 32,
            ..full
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.batch == 0 {
            return Err(Error::Config("window, stride and batch must be positive".into()));
        }
        if self.box_side < 2 * self.window {
            return Err(Error::Config(format!(
                "box side {} must cover the upsampled window {}",
                self.box_side,
                2 * self.window
            )));
        }
        for t in [self.loc_threshold, self.seg_threshold] {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::Config(format!("threshold {t} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Scores a `(B, 1, w, w, w)` batch of windows with positive-class
/// probabilities.
pub trait WindowClassifier: Sync {
    fn positive_probabilities(&self, batch: &Tensor<f32>) -> Result<Vec<f64>>;
}

impl<T: Real> WindowClassifier for Net<T> {
    fn positive_probabilities(&self, batch: &Tensor<f32>) -> Result<Vec<f64>> {
        let p = softmax2(&self.infer(&batch.cast())?)?;
        Ok((0..batch.shape().batch)
            .map(|n| p.item(n)[crate::training::loss::POSITIVE_CLASS].as_f64())
            .collect())
    }
}

/// Maps a `(B, 1, s, s, s)` batch to per-voxel foreground probabilities.
pub trait VoxelSegmenter: Sync {
    fn probabilities(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl<T: Real> VoxelSegmenter for Net<T> {
    fn probabilities(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.infer(&batch.cast())?.cast())
    }
}

impl<C: WindowClassifier + ?Sized> WindowClassifier for &C {
    fn positive_probabilities(&self, batch: &Tensor<f32>) -> Result<Vec<f64>> {
        (**self).positive_probabilities(batch)
    }
}

impl<S: VoxelSegmenter + ?Sized> VoxelSegmenter for &S {
    fn probabilities(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        (**self).probabilities(batch)
    }
}

/// Adapts a closure into a classifier or segmenter.
pub struct FnModel<F>(pub F);

impl<F: Fn(&Tensor<f32>) -> Result<Vec<f64>> + Sync> WindowClassifier for FnModel<F> {
    fn positive_probabilities(&self, batch: &Tensor<f32>) -> Result<Vec<f64>> {
        (self.0)(batch)
    }
}

impl<F: Fn(&Tensor<f32>) -> Result<Tensor<f32>> + Sync> VoxelSegmenter for FnModel<F> {
    fn probabilities(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        (self.0)(batch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    /// Half-resolution anchor.
    pub anchor: [usize; 3],
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub bbox: BoundingBox,
    /// Full-resolution centre before clamping.
    pub center: [usize; 3],
    pub positives: Vec<WindowScore>,
    pub windows_scanned: usize,
    pub ensemble_size: usize,
    /// No window cleared the threshold; the best window was used.
    pub fallback: bool,
}

/// Scans the half-resolution volume and places the segmentation box.
/// `volume` is full resolution and already padded to `cfg.box_side`.
pub fn localize<C: WindowClassifier>(
    volume: &Volume<f32>,
    classifiers: &[C],
    cfg: &PipelineConfig,
) -> Result<LocalizationResult> {
    cfg.validate()?;
    if classifiers.is_empty() {
        return Err(Error::invalid("localization needs at least one classifier"));
    }
    let half = downsample2(volume);
    let anchors = enumerate_windows(half.dims(), cfg.window, cfg.stride)?;
    let mut scores = Vec::with_capacity(anchors.len());
    for chunk in anchors.chunks(cfg.batch) {
        let windows = chunk
            .iter()
            .map(|&a| half.crop(a, [cfg.window; 3]).map(|w| w.to_tensor::<f32>()))
            .collect::<Result<Vec<_>>>()?;
        let batch = Tensor::stack(&windows)?;
        let mut mean = vec![0.0f64; chunk.len()];
        for c in classifiers {
            let p = c.positive_probabilities(&batch)?;
            if p.len() != chunk.len() {
                return Err(Error::shape(format!("classifier scored {} of {} windows", p.len(), chunk.len())));
            }
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        for (&anchor, m) in chunk.iter().zip(mean) {
            scores.push(WindowScore {
                anchor,
                probability: m / classifiers.len() as f64,
            });
        }
    }
    let positives: Vec<WindowScore> = scores.iter().copied().filter(|s| s.probability > cfg.loc_threshold).collect();
    let fallback = positives.is_empty();
    let chosen: Vec<WindowScore> = if fallback {
        let best = scores
            .iter()
            .copied()
            .reduce(|a, b| if b.probability > a.probability { b } else { a })
            .expect("at least one window");
        vec![best]
    } else {
        positives.clone()
    };
    let half_center = window_center_mean(&chosen, cfg.window);
    let center = half_center.map(|c| 2 * c);
    let bbox = BoundingBox::centered_clamped(center, cfg.box_side, volume.dims())?;
    Ok(LocalizationResult {
        bbox,
        center,
        positives,
        windows_scanned: scores.len(),
        ensemble_size: classifiers.len(),
        fallback,
    })
}

/// Unweighted mean of window centres, rounded half up per axis.
pub fn window_center_mean(windows: &[WindowScore], window: usize) -> [usize; 3] {
    let n = windows.len() as f64;
    [0, 1, 2].map(|a| {
        let mean = windows.iter().map(|w| w.anchor[a] as f64 + window as f64 / 2.0).sum::<f64>() / n;
        (mean + 0.5).floor() as usize
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub bbox: BoundingBox,
    /// Binary mask at the full volume shape.
    pub mask: Mask,
    /// One probability map per net, covering the box.
    pub probabilities: Vec<Volume<f32>>,
    /// Set once small components have been removed.
    pub census: Option<ComponentCensus>,
    pub localization: Option<LocalizationResult>,
}

/// Thresholds each net's probabilities inside `bbox` and ORs the maps.
pub fn segment_box<S: VoxelSegmenter>(
    volume: &Volume<f32>,
    bbox: BoundingBox,
    nets: &[S],
    threshold: f64,
) -> Result<SegmentationResult> {
    if nets.is_empty() {
        return Err(Error::invalid("segmentation needs at least one net"));
    }
    if !bbox.fits(volume.dims()) {
        return Err(Error::shape(format!("box {bbox:?} leaves volume {:?}", volume.dims())));
    }
    let x = volume.crop(bbox.anchor, [bbox.side; 3])?.to_tensor::<f32>();
    let mut probabilities = Vec::with_capacity(nets.len());
    let mut cube: Mask = Volume::zeros([bbox.side; 3]);
    for net in nets {
        let p = net.probabilities(&x)?;
        if p.shape() != x.shape() {
            return Err(Error::shape(format!("segmenter returned {} for input {}", p.shape(), x.shape())));
        }
        let pv = p.to_volume(0, 0);
        for (m, &v) in cube.data_mut().iter_mut().zip(pv.data()) {
            *m |= (v as f64 > threshold) as u8;
        }
        probabilities.push(pv);
    }
    let mut mask: Mask = Volume::zeros(volume.dims()).with_spacing(volume.spacing());
    mask.paste(&cube, bbox.anchor)?;
    Ok(SegmentationResult {
        bbox,
        mask,
        probabilities,
        census: None,
        localization: None,
    })
}

/// Pads, localizes, segments, removes small components and strips the
/// padding again. The box is in padded coordinates, which coincide with
/// the original ones because padding is appended on the high side.
pub fn segment_end_to_end<C: WindowClassifier, S: VoxelSegmenter>(
    volume: &Volume<f32>,
    classifiers: &[C],
    seg_nets: &[S],
    cfg: &PipelineConfig,
) -> Result<SegmentationResult> {
    let padded = pad_to_min(volume, cfg.box_side);
    let loc = localize(&padded.volume, classifiers, cfg)?;
    let seg = segment_box(&padded.volume, loc.bbox, seg_nets, cfg.seg_threshold)?;
    let (cleaned, census) = remove_small_components(&seg.mask, cfg.min_component, cfg.connectivity);
    Ok(SegmentationResult {
        mask: padded.strip(&cleaned)?.with_spacing(volume.spacing()),
        census: Some(census),
        localization: Some(loc),
        ..seg
    })
}

/// One line of the inference report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub name: String,
    pub bbox: BoundingBox,
    pub positive_windows: usize,
    pub windows_scanned: usize,
    pub fallback: bool,
    pub census: Option<ComponentCensus>,
    pub foreground_voxels: usize,
    pub dsc: Option<f64>,
}

impl InferenceRecord {
    pub fn new(name: impl Into<String>, result: &SegmentationResult, truth: Option<&Mask>) -> Result<Self> {
        let loc = result.localization.as_ref();
        Ok(InferenceRecord {
            name: name.into(),
            bbox: result.bbox,
            positive_windows: loc.map_or(0, |l| l.positives.len()),
            windows_scanned: loc.map_or(0, |l| l.windows_scanned),
            fallback: loc.is_some_and(|l| l.fallback),
            census: result.census.clone(),
            foreground_voxels: result.mask.count_nonzero(),
            dsc: truth.map(|t| dsc(&result.mask, t)).transpose()?,
        })
    }
}
