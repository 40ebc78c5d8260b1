//! Bit-exact serialization of volumes, masks, fields, and reports.
//!
//! Volumes travel as single-file NIfTI-1 (`.nii`, optionally gzip as
//! `.nii.gz`), little-endian, with float32 payloads for scalars and fields
//! and uint8 for masks. Reports and optimization traces are written either
//! as flat `key = value` text or as JSON; both forms parse back to the exact
//! same document because every number is printed with shortest round-trip
//! formatting.

mod nifti;
mod report;

pub use nifti::{read_nifti, write_nifti, NiftiVolume};
pub use report::{parse_report, read_report, write_report, ReportDocument, ReportFormat};
