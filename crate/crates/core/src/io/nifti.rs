//! Single-file NIfTI-1 reader and writer.
//!
//! Only the subset this toolkit produces and consumes is supported: the
//! fixed 348-byte little-endian header, datatypes uint8, int16, and
//! float32, axis-aligned orientation, and displacement fields stored as
//! 5-D volumes with three components in the fifth dimension. Anything else
//! is rejected with a specific error rather than reinterpreted.

use crate::error::{Error, Result};
use crate::field::DisplacementField;
use crate::volume::{GridGeometry, LabelMask, ScalarVolume};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const HEADER_LEN: usize = 348;
/// Data offset for single-file NIfTI-1: header plus the 4-byte extension flag.
const VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const INTENT_VECTOR: i16 = 1007;
const UNITS_MM: u8 = 2;

/// Any of the three payload kinds a NIfTI file can carry here.
#[derive(Clone, Debug)]
pub enum NiftiVolume {
    Scalar(ScalarVolume),
    Mask(LabelMask),
    Field(DisplacementField),
}

impl From<ScalarVolume> for NiftiVolume {
    fn from(v: ScalarVolume) -> Self {
        NiftiVolume::Scalar(v)
    }
}

impl From<LabelMask> for NiftiVolume {
    fn from(v: LabelMask) -> Self {
        NiftiVolume::Mask(v)
    }
}

impl From<DisplacementField> for NiftiVolume {
    fn from(v: DisplacementField) -> Self {
        NiftiVolume::Field(v)
    }
}

impl NiftiVolume {
    pub fn kind(&self) -> &'static str {
        match self {
            NiftiVolume::Scalar(_) => "scalar volume",
            NiftiVolume::Mask(_) => "mask",
            NiftiVolume::Field(_) => "displacement field",
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        match self {
            NiftiVolume::Scalar(v) => v.geometry(),
            NiftiVolume::Mask(v) => v.geometry(),
            NiftiVolume::Field(v) => v.geometry(),
        }
    }

    pub fn expect_scalar(self) -> Result<ScalarVolume> {
        match self {
            NiftiVolume::Scalar(v) => Ok(v),
            other => Err(Error::InvalidParameter(format!(
                "expected a scalar volume, found a {}",
                other.kind()
            ))),
        }
    }

    pub fn expect_mask(self) -> Result<LabelMask> {
        match self {
            NiftiVolume::Mask(v) => Ok(v),
            other => Err(Error::InvalidParameter(format!(
                "expected a mask, found a {}",
                other.kind()
            ))),
        }
    }

    pub fn expect_field(self) -> Result<DisplacementField> {
        match self {
            NiftiVolume::Field(v) => Ok(v),
            other => Err(Error::InvalidParameter(format!(
                "expected a displacement field, found a {}",
                other.kind()
            ))),
        }
    }
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn malformed(path: &str, reason: impl Into<String>) -> Error {
    Error::MalformedNifti {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// True when the 3x3 direction matrix is a scaled axis permutation: exactly
/// one significant entry per row and per column.
fn is_axis_aligned(m: &[[f64; 3]; 3]) -> bool {
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    if scale == 0.0 {
        return false;
    }
    let tol = 1e-4 * scale;
    let mut col_used = [false; 3];
    for row in m {
        let mut hit = None;
        for (c, &v) in row.iter().enumerate() {
            if v.abs() > tol {
                if hit.is_some() {
                    return false;
                }
                hit = Some(c);
            }
        }
        let Some(c) = hit else { return false };
        if col_used[c] {
            return false;
        }
        col_used[c] = true;
    }
    true
}

/// Rotation matrix of the quaternion (a, b, c, d) with the NIfTI qfac sign
/// applied to the third column.
fn quaternion_matrix(b: f64, c: f64, d: f64, qfac: f64) -> [[f64; 3]; 3] {
    let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
    [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            qfac * 2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            qfac * 2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            qfac * (a * a + d * d - c * c - b * b),
        ],
    ]
}

fn check_orientation(bytes: &[u8], path: &str) -> Result<()> {
    let sform_code = i16_at(bytes, 254);
    if sform_code > 0 {
        let mut m = [[0.0f64; 3]; 3];
        for (r, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
            for c in 0..3 {
                m[r][c] = f32_at(bytes, base + 4 * c) as f64;
            }
        }
        if !is_axis_aligned(&m) {
            return Err(Error::NonAxisAligned {
                path: path.to_string(),
            });
        }
        return Ok(());
    }
    let qform_code = i16_at(bytes, 252);
    if qform_code > 0 {
        let qb = f32_at(bytes, 256) as f64;
        let qc = f32_at(bytes, 260) as f64;
        let qd = f32_at(bytes, 264) as f64;
        let qfac = if f32_at(bytes, 76) < 0.0 { -1.0 } else { 1.0 };
        if !is_axis_aligned(&quaternion_matrix(qb, qc, qd, qfac)) {
            return Err(Error::NonAxisAligned {
                path: path.to_string(),
            });
        }
    }
    Ok(())
}

fn parse_nifti(bytes: &[u8], path: &str) -> Result<NiftiVolume> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed(
            path,
            format!("{} bytes is shorter than the 348-byte header", bytes.len()),
        ));
    }
    if &bytes[344..348] != MAGIC_SINGLE {
        return Err(Error::BadMagic {
            path: path.to_string(),
        });
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != HEADER_LEN as i32 {
        let reason = if sizeof_hdr.swap_bytes() == HEADER_LEN as i32 {
            "big-endian header (only little-endian is supported)".to_string()
        } else {
            format!("sizeof_hdr is {sizeof_hdr}, expected 348")
        };
        return Err(malformed(path, reason));
    }
    let datatype = i16_at(bytes, 70);
    if ![DT_UINT8, DT_INT16, DT_FLOAT32].contains(&datatype) {
        return Err(Error::UnsupportedDatatype {
            code: datatype,
            path: path.to_string(),
        });
    }

    let ndim = i16_at(bytes, 40);
    if !(3..=7).contains(&ndim) {
        return Err(malformed(path, format!("dim[0] is {ndim}, expected 3..=7")));
    }
    let mut dim = [1i64; 8];
    for (k, slot) in dim.iter_mut().enumerate().take(ndim as usize + 1).skip(1) {
        let v = i16_at(bytes, 40 + 2 * k);
        if v < 1 {
            return Err(malformed(path, format!("dim[{k}] is {v}")));
        }
        *slot = v as i64;
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let is_field = dim[5] == 3;
    if is_field && dim[4] != 1 {
        return Err(malformed(
            path,
            "vector volumes must have a single timepoint (dim[4] = 1)",
        ));
    }
    if !is_field && dim[4..].iter().any(|&d| d != 1) {
        return Err(malformed(path, "non-spatial dimensions are not supported"));
    }

    let mut spacing = [0.0f64; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        let v = f32_at(bytes, 76 + 4 * (a + 1));
        if !(v > 0.0) || !v.is_finite() {
            return Err(malformed(path, format!("pixdim[{}] is {v}", a + 1)));
        }
        *s = v as f64;
    }
    check_orientation(bytes, path)?;

    let vox_offset = f32_at(bytes, 108);
    if !(vox_offset >= HEADER_LEN as f32) || vox_offset.fract() != 0.0 {
        return Err(malformed(path, format!("vox_offset is {vox_offset}")));
    }
    let offset = vox_offset as usize;

    let geometry = GridGeometry::new(dims, spacing)
        .map_err(|e| malformed(path, format!("unusable grid: {e}")))?;
    let voxels = geometry.voxel_count();
    let values = if is_field { voxels * 3 } else { voxels };
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        _ => 4,
    };
    let need = offset + values * elem;
    if bytes.len() < need {
        return Err(malformed(
            path,
            format!("data truncated: need {need} bytes, have {}", bytes.len()),
        ));
    }
    let data = &bytes[offset..need];

    let scl_slope = f32_at(bytes, 112) as f64;
    let scl_inter = f32_at(bytes, 116) as f64;
    let rescale = scl_slope != 0.0 && (scl_slope != 1.0 || scl_inter != 0.0);
    let scaled = |v: f64| if rescale { v * scl_slope + scl_inter } else { v };

    if is_field {
        if datatype != DT_FLOAT32 {
            return Err(Error::UnsupportedDatatype {
                code: datatype,
                path: path.to_string(),
            });
        }
        // Components are stored as three consecutive scalar volumes.
        let mut vectors = vec![[0.0f64; 3]; voxels];
        for a in 0..3 {
            let base = a * voxels * 4;
            for (i, v) in vectors.iter_mut().enumerate() {
                v[a] = scaled(f32_at(data, base + 4 * i) as f64);
            }
        }
        return Ok(NiftiVolume::Field(DisplacementField::from_vec(
            geometry, vectors,
        )?));
    }
    match datatype {
        DT_UINT8 => {
            let flags = data.iter().map(|&b| b != 0).collect();
            Ok(NiftiVolume::Mask(LabelMask::from_vec(geometry, flags)?))
        }
        DT_INT16 => {
            let values = (0..voxels)
                .map(|i| scaled(i16_at(data, 2 * i) as f64))
                .collect();
            Ok(NiftiVolume::Scalar(ScalarVolume::from_vec(
                geometry, values,
            )?))
        }
        _ => {
            let values = (0..voxels)
                .map(|i| scaled(f32_at(data, 4 * i) as f64))
                .collect();
            Ok(NiftiVolume::Scalar(ScalarVolume::from_vec(
                geometry, values,
            )?))
        }
    }
}

/// Reads a `.nii` or `.nii.gz` file. Gzip is detected from the stream's
/// magic bytes, so mislabeled extensions still load.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let raw = fs::read(path)?;
    let shown = path.display().to_string();
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut bytes = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut bytes)?;
        parse_nifti(&bytes, &shown)
    } else {
        parse_nifti(&raw, &shown)
    }
}

fn put_i16(b: &mut [u8], off: usize, v: i16) {
    b[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(b: &mut [u8], off: usize, v: i32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(b: &mut [u8], off: usize, v: f32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn build_header(
    geometry: GridGeometry,
    datatype: i16,
    bitpix: i16,
    field: bool,
    descrip: &str,
) -> Result<Vec<u8>> {
    for &d in &geometry.dims {
        if d > i16::MAX as usize {
            return Err(Error::InvalidGeometry(format!(
                "dimension {d} exceeds the NIfTI-1 limit of {}",
                i16::MAX
            )));
        }
    }
    let mut h = vec![0u8; VOX_OFFSET];
    put_i32(&mut h, 0, HEADER_LEN as i32);
    h[38] = b'r';
    let ndim: i16 = if field { 5 } else { 3 };
    put_i16(&mut h, 40, ndim);
    for a in 0..3 {
        put_i16(&mut h, 42 + 2 * a, geometry.dims[a] as i16);
    }
    put_i16(&mut h, 48, 1);
    put_i16(&mut h, 50, if field { 3 } else { 1 });
    put_i16(&mut h, 52, 1);
    put_i16(&mut h, 54, 1);
    if field {
        put_i16(&mut h, 68, INTENT_VECTOR);
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    put_f32(&mut h, 76, 1.0);
    for a in 0..3 {
        put_f32(&mut h, 80 + 4 * a, geometry.spacing[a] as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = UNITS_MM;
    let note = descrip.as_bytes();
    let n = note.len().min(79);
    h[148..148 + n].copy_from_slice(&note[..n]);
    put_i16(&mut h, 252, 0);
    put_i16(&mut h, 254, 1);
    for (a, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
        put_f32(&mut h, base + 4 * a, geometry.spacing[a] as f32);
    }
    h[344..348].copy_from_slice(MAGIC_SINGLE);
    Ok(h)
}

/// Writes a `.nii` file, gzip-compressed when the path ends in `.gz`.
/// Scalars and fields are stored as float32, masks as uint8; fields keep
/// their voxel-unit components and carry a note saying so in `descrip`.
pub fn write_nifti(value: &NiftiVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = match value {
        NiftiVolume::Scalar(v) => {
            let mut b = build_header(v.geometry(), DT_FLOAT32, 32, false, "scalar volume")?;
            b.reserve(v.data().len() * 4);
            for &x in v.data() {
                b.extend_from_slice(&(x as f32).to_le_bytes());
            }
            b
        }
        NiftiVolume::Mask(m) => {
            let mut b = build_header(m.geometry(), DT_UINT8, 8, false, "binary mask")?;
            b.extend(m.data().iter().map(|&f| f as u8));
            b
        }
        NiftiVolume::Field(f) => {
            let mut b = build_header(
                f.geometry(),
                DT_FLOAT32,
                32,
                true,
                "displacement field, components in voxel units",
            )?;
            b.reserve(f.vectors().len() * 12);
            for a in 0..3 {
                for v in f.vectors() {
                    b.extend_from_slice(&(v[a] as f32).to_le_bytes());
                }
            }
            b
        }
    };
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes)?;
        bytes = enc.finish()?;
    }
    fs::write(path, bytes)?;
    Ok(())
}
