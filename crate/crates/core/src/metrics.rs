//! Evaluation metrics over hard masks and deformation fields.
//!
//! Registration quality is scored on nearest-neighbor warped masks: Dice and
//! volume agreement plus symmetric surface distances for the liver,
//! cross-class overlap and connectivity for vessels, and the folding rate of
//! the field itself. Everything here is an exact count or distance; soft
//! differentiable counterparts live in `energy`.

use crate::error::{Error, Result};
use crate::field::{jacobian_determinant, DisplacementField};
use crate::structures::{edt_squared_to_seeds, extract_surface};
use crate::volume::{ensure_same_grid, LabelMask};
use serde::{Deserialize, Serialize};

/// Liver-mask agreement between the fixed mask and the warped moving mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LiverMetrics {
    /// Dice similarity coefficient in percent.
    pub dsc: f64,
    /// Relative absolute volume difference in percent.
    pub ravd: f64,
    /// Average symmetric surface distance in mm.
    pub assd: f64,
    /// Maximum symmetric surface distance in mm.
    pub mssd: f64,
}

/// Vessel agreement. `dsc` compares the warped artery mask against the fixed
/// vein mask, so smaller is better; `connected_regions` counts 26-connected
/// components of the warped vessel mask (fragmentation indicator).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VesselMetrics {
    pub dsc: f64,
    pub connected_regions: usize,
}

/// Deformation-field quality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldMetrics {
    /// Percentage of voxels with non-positive Jacobian determinant.
    pub rfp: f64,
}

/// Endpoint-error statistics against a known ground-truth field, in voxels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthMetrics {
    pub mean_epe: f64,
    pub median_epe: f64,
    pub max_epe: f64,
}

/// Full evaluation report. Sections are optional so the same type covers
/// configurations without vessel masks or without ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub liver: Option<LiverMetrics>,
    pub vessel: Option<VesselMetrics>,
    pub field: Option<FieldMetrics>,
    pub truth: Option<TruthMetrics>,
}

fn count(mask: &LabelMask) -> usize {
    mask.data().iter().filter(|v| **v).count()
}

/// Hard Dice score in percent; 100 when both masks are empty.
pub fn dsc_hard(a: &LabelMask, b: &LabelMask) -> Result<f64> {
    ensure_same_grid(a.geometry(), b.geometry(), "dsc_hard")?;
    let na = count(a);
    let nb = count(b);
    if na + nb == 0 {
        return Ok(100.0);
    }
    let inter = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| **x && **y)
        .count();
    Ok(100.0 * 2.0 * inter as f64 / (na + nb) as f64)
}

/// Relative absolute volume difference in percent, with `b` as reference.
pub fn ravd(a: &LabelMask, b: &LabelMask) -> Result<f64> {
    ensure_same_grid(a.geometry(), b.geometry(), "ravd")?;
    let na = count(a) as f64;
    let nb = count(b) as f64;
    if nb == 0.0 {
        return Err(Error::EmptyMask("ravd reference mask".into()));
    }
    Ok(100.0 * (na - nb).abs() / nb)
}

/// Nearest distance in mm from each listed voxel to the seed set.
fn distances_to(surface: &[usize], seed_surface: &LabelMask) -> Vec<f64> {
    let g = seed_surface.geometry();
    let seeds = seed_surface.data();
    let sq = edt_squared_to_seeds(g, |i| seeds[i]);
    surface.iter().map(|&i| sq[i].sqrt()).collect()
}

/// Average and maximum symmetric surface distance in mm between the boundary
/// voxel clouds of two masks.
pub fn surface_distances(a: &LabelMask, b: &LabelMask) -> Result<(f64, f64)> {
    ensure_same_grid(a.geometry(), b.geometry(), "surface_distances")?;
    let surf_a = extract_surface(a)?;
    let surf_b = extract_surface(b)?;
    let d_ab = distances_to(surf_a.linear_indices(), &surf_b.to_mask());
    let d_ba = distances_to(surf_b.linear_indices(), &surf_a.to_mask());
    let total: f64 = d_ab.iter().chain(&d_ba).sum();
    let assd = total / (d_ab.len() + d_ba.len()) as f64;
    let mssd = d_ab
        .iter()
        .chain(&d_ba)
        .fold(0.0f64, |m, &d| m.max(d));
    Ok((assd, mssd))
}

/// Number of 26-connected foreground components.
pub fn connected_regions(mask: &LabelMask) -> usize {
    let g = mask.geometry();
    let data = mask.data();
    let [nx, ny, nz] = g.dims.map(|d| d as i64);
    let mut visited = vec![false; data.len()];
    let mut stack = Vec::new();
    let mut components = 0;
    for start in 0..data.len() {
        if !data[start] || visited[start] {
            continue;
        }
        components += 1;
        visited[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let p = g.coords(i).map(|v| v as i64);
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let (x, y, z) = (p[0] + dx, p[1] + dy, p[2] + dz);
                        if x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz {
                            continue;
                        }
                        let j = g.index(x as usize, y as usize, z as usize);
                        if data[j] && !visited[j] {
                            visited[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    components
}

/// Percentage of voxels whose Jacobian determinant of `id + u` is ≤ 0.
pub fn rfp(field: &DisplacementField) -> f64 {
    let jac = jacobian_determinant(field);
    let folded = jac.data().iter().filter(|d| **d <= 0.0).count();
    100.0 * folded as f64 / jac.data().len() as f64
}
