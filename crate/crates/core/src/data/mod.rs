//! Volumes, the DBV1 container, synthetic phantoms, metrics and slice export.

pub mod export;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod volume;

pub use export::{export_slice, Axis};
pub use io::{decode_volume, encode_volume, read_intensity, read_mask, read_volume, write_volume, AnyVolume};
pub use metrics::{box_containment, dsc, evaluate, evaluate_lists, read_jsonl, write_jsonl, EvalCase, MetricsReport, VolumeMetrics};
pub use phantom::{generate_phantom, PhantomConfig};
pub use volume::{Mask, Volume, Voxel};
