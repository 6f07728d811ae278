//! Losses, SGD, augmentation, example extraction and the training loops.

pub mod augment;
pub mod examples;
pub mod loss;
pub mod optim;
pub mod train;

pub use augment::{augment, AugmentationOp, AxisMap, Rotation, RotationAxis};
pub use examples::{
    NEGATIVE_FRACTION, POSITIVE_FRACTION, SUBVOLUME_FRACTION,
    balance_classes, extract_localization_examples, extract_segmentation_subvolumes, grid_anchors, MaskWeight,
    PrefixSum3, WindowClass, WindowLabel,
};
pub use loss::{dice_loss, dice_loss_batch, soft_dsc, weighted_cross_entropy, weighted_cross_entropy_batch, ClassWeights};
pub use optim::{lr_at_epoch, sgd_step, OptimizerState, SgdConfig};
pub use train::{
    localization_accuracy, train_localization, train_segmentation, LocExample, LocalizationSet, SegmentationSet,
    StepRecord, TrainOptions,
};
