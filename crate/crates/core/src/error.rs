//! Crate-wide error and result types.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by volume construction, structure extraction,
/// registration, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Grid dimensions or spacing are unusable (zero extent, nonpositive
    /// spacing, or a buffer whose length disagrees with the dimensions).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Two inputs that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// An operation that needs foreground voxels received an empty mask.
    #[error("empty mask: {0}")]
    EmptyMask(String),

    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The multiresolution pyramid would shrink a grid below the minimum
    /// workable extent.
    #[error("grid too small: {0}")]
    GridTooSmall(String),

    /// File does not start with a recognized NIfTI-1 magic sequence.
    #[error("bad NIfTI magic in {path}")]
    BadMagic { path: String },

    /// NIfTI datatype code this reader does not handle.
    #[error("unsupported NIfTI datatype {code} in {path}")]
    UnsupportedDatatype { code: i16, path: String },

    /// NIfTI orientation is not axis aligned; this crate only handles
    /// axis-aligned grids.
    #[error("non-axis-aligned NIfTI orientation in {path}")]
    NonAxisAligned { path: String },

    /// NIfTI header fields are inconsistent or out of range.
    #[error("malformed NIfTI file {path}: {reason}")]
    MalformedNifti { path: String, reason: String },

    /// A report document failed to parse.
    #[error("report parse error: {0}")]
    ReportParse(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
