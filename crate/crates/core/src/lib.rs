//! Structure-aware deformable registration for contrast-enhanced liver CT.
//!
//! The crate registers two volumes of the same anatomy by optimizing a pair of
//! dense displacement fields (forward and backward) under an energy that
//! combines local normalized cross-correlation, segmentation overlap, field
//! smoothness, and anatomical constraints on the liver surface and vessel
//! centerlines. Supporting modules provide structure extraction (surfaces,
//! skeletons, distance maps, vesselness), preprocessing, evaluation metrics,
//! synthetic phantoms with known ground truth, and NIfTI-1 I/O.

pub mod energy;
pub mod error;
pub mod field;
pub mod frangi;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod parallel;
pub mod phantom;
pub mod preprocess;
pub mod skeleton;
pub mod structures;
pub mod volume;

pub use error::{Error, Result};
pub use field::DisplacementField;
pub use volume::{GridGeometry, LabelMask, ScalarVolume};
