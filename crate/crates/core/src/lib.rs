//! Water-surface object detection with scene-guided enhancement,
//! parameter-limited dilated convolution and multi-scale dilated residual
//! fusion, plus the dataset and evaluation tooling around them.

pub mod batching;
pub mod checkpoint;
pub mod datakit;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod geom;
pub mod labels;
pub mod msdrf;
pub mod pld;
pub mod sgie;

pub use error::{Error, Result};
