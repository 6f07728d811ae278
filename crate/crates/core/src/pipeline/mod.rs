//! Inference: half-resolution localization, box segmentation and
//! component clean-up.

pub mod components;
pub mod infer;
pub mod resample;

pub use components::{label_components, remove_small_components, ComponentCensus, Connectivity, Labels};
pub use infer::{
    localize, segment_box, segment_end_to_end, window_center_mean, FnModel, InferenceRecord, LocalizationResult,
    PipelineConfig, SegmentationResult, VoxelSegmenter, WindowClassifier, WindowScore,
};
pub use resample::{
    downsample2, downsample_mask_counts, enumerate_windows, enumerate_windows_1d, pad_to_min, BoundingBox, Padded,
};
