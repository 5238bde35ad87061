//! Annotation handling, dataset statistics, offset-limit derivation,
//! synthetic degradation and splitting.

pub mod annotations;
pub mod degrade;
pub mod image;
pub mod limits;
pub mod split;
pub mod stats;
pub mod synth;

pub use annotations::{
    import_darklabel, parse_annotations, parse_annotations_str, write_annotations, Annotations, BoxAnnotation,
    ImageRecord,
};
pub use degrade::{apply_degradation, Degradation, DegradationSpec, FogParams, LowlightParams, RainParams};
pub use image::{check_image, load_image, resize_image, save_image, stack_images};
pub use limits::compute_offset_limits;
pub use split::split_dataset;
pub use stats::{compute_stats_report, StatsReport};
pub use synth::{render_sample, synth_dataset, SynthOptions, SynthSample};
