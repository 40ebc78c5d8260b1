//! Intensity preparation for contrast-enhanced CT pairs.
//!
//! The fixed chain is: mask out non-liver tissue, normalize intensities to
//! [0,1], suppress noise with a windowed median, then superimpose a
//! normalized vesselness response so faint vessels survive the similarity
//! term. Each stage is exposed on its own plus as [`run_pipeline`].

use crate::error::{Error, Result};
use crate::frangi::{frangi_vesselness, FrangiParams};
use crate::parallel;
use crate::volume::{ensure_same_grid, LabelMask, ScalarVolume};

/// Tuning knobs of the preprocessing chain.
#[derive(Clone, Debug)]
pub struct PreprocessConfig {
    /// Median filter window edge length, odd.
    pub median_window: usize,
    /// Vesselness filter parameters.
    pub frangi: FrangiParams,
    /// Gain of the vesselness superimposition; 0 disables enhancement.
    pub gain: f64,
    /// Optional (low, high) percentile clip applied before normalization.
    pub percentile_clip: Option<(f64, f64)>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            median_window: 3,
            frangi: FrangiParams::default(),
            gain: 1.0,
            percentile_clip: None,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_window % 2 == 0 || self.median_window == 0 {
            return Err(Error::InvalidParameter(format!(
                "median window must be odd and >= 1, got {}",
                self.median_window
            )));
        }
        if !(self.gain >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "superimposition gain must be >= 0, got {}",
                self.gain
            )));
        }
        if let Some((lo, hi)) = self.percentile_clip {
            if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
                return Err(Error::InvalidParameter(format!(
                    "percentile clip must satisfy 0 <= low < high <= 100, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// Zeroes every voxel outside `keep`.
pub fn apply_body_mask(vol: &ScalarVolume, keep: &LabelMask) -> Result<ScalarVolume> {
    ensure_same_grid(vol.geometry(), keep.geometry(), "apply_body_mask")?;
    let mut out = vol.clone();
    let mask = keep.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if !mask[i] {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Linear rescale onto [0,1]; a constant volume maps to all zeros.
pub fn normalize_unit(vol: &ScalarVolume) -> ScalarVolume {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in vol.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut out = vol.clone();
    if hi > lo {
        let scale = 1.0 / (hi - lo);
        for v in out.data_mut() {
            *v = (*v - lo) * scale;
        }
    } else {
        out.data_mut().fill(0.0);
    }
    out
}

/// Clamps values to the given percentiles of the intensity distribution.
fn clip_percentiles(vol: &ScalarVolume, lo_pct: f64, hi_pct: f64) -> ScalarVolume {
    let mut sorted: Vec<f64> = vol.data().to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pick = |pct: f64| -> f64 {
        let rank = (pct / 100.0 * (sorted.len() - 1) as f64).round() as usize;
        sorted[rank]
    };
    let (lo, hi) = (pick(lo_pct), pick(hi_pct));
    let mut out = vol.clone();
    for v in out.data_mut() {
        *v = v.clamp(lo, hi);
    }
    out
}

/// Median of the window³ neighborhood around every voxel, with edge
/// replication.
pub fn median_filter(vol: &ScalarVolume, window: usize) -> Result<ScalarVolume> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidParameter(format!(
            "median window must be odd and >= 1, got {window}"
        )));
    }
    let g = vol.geometry();
    let r = (window as i64 - 1) / 2;
    let src = vol.data();
    let [nx, ny, nz] = g.dims.map(|d| d as i64);
    let mut out = vol.clone();
    parallel::fill_slots(out.data_mut(), |i| {
        let p = g.coords(i).map(|v| v as i64);
        let mut values = Vec::with_capacity((window * window * window) as usize);
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let x = (p[0] + dx).clamp(0, nx - 1);
                    let y = (p[1] + dy).clamp(0, ny - 1);
                    let z = (p[2] + dz).clamp(0, nz - 1);
                    values.push(src[g.index(x as usize, y as usize, z as usize)]);
                }
            }
        }
        values.sort_by(|a, b| a.total_cmp(b));
        values[values.len() / 2]
    });
    Ok(out)
}

/// Adds the unit-normalized vesselness response scaled by the gain, then
/// clamps to [0,1].
pub fn enhance_vessels(vol: &ScalarVolume, cfg: &PreprocessConfig) -> Result<ScalarVolume> {
    cfg.validate()?;
    if cfg.gain == 0.0 {
        return Ok(vol.clone());
    }
    let vesselness = normalize_unit(&frangi_vesselness(vol, &cfg.frangi)?);
    let mut out = vol.clone();
    let boost = vesselness.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = (*v + cfg.gain * boost[i]).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// The full chain: mask, optional percentile clip, normalize, median,
/// enhance.
pub fn run_pipeline(
    vol: &ScalarVolume,
    keep: Option<&LabelMask>,
    cfg: &PreprocessConfig,
) -> Result<ScalarVolume> {
    cfg.validate()?;
    let mut work = match keep {
        Some(mask) => apply_body_mask(vol, mask)?,
        None => vol.clone(),
    };
    if let Some((lo, hi)) = cfg.percentile_clip {
        work = clip_percentiles(&work, lo, hi);
    }
    work = normalize_unit(&work);
    work = median_filter(&work, cfg.median_window)?;
    enhance_vessels(&work, cfg)
}
