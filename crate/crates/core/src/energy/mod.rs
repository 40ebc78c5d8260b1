//! Registration energy: similarity, segmentation overlap, regularizers,
//! structure constraints, and inverse consistency.
//!
//! The total objective for a forward field φ = id + u_f and backward field
//! φ⁻¹ = id + u_b is
//!
//! ```text
//! E = sim(F, M∘φ)
//!   + λ_liver · overlap(S_F, S_M, φ)
//!   + λ_vessel · nonoverlap(V_F, V_M, φ)
//!   + λ_smooth · (reg(u_f) + reg(u_b))
//!   + λ_surface · (surf(O_F, u_f) + surf(O_M, u_b))
//!   + λ_centerline · (cent(C_F, u_f) + cent(C_M, u_b))
//!   + λ_ic · consistency(u_f, u_b)
//! ```
//!
//! where reg, surf, and cent divide the raw sums the individual operations
//! return by the grid voxel count, the masked-mean convention that keeps
//! every term on the same scale as the similarity losses.
//!
//! Image and segmentation data pull only on the forward field; the backward
//! field is shaped by its own regularizers and the consistency coupling.
//! Terms whose structure inputs are absent contribute exactly zero, so the
//! same driver handles mask-free configurations.

mod consistency;
mod dice;
mod ncc;
mod regularizers;

pub use consistency::inverse_consistency_loss;
pub use dice::{dice_soft, nonoverlap_loss, overlap_loss};
pub use ncc::ncc_loss;
pub use regularizers::{
    centerline_constraint, directional_gradient_sq, smoothness, surface_constraint,
};

use crate::error::Result;
use crate::field::DisplacementField;
use crate::structures::{VoxelSet, WeightedCenterline};
use crate::volume::{ensure_same_grid, warp_scalar_with_grad, LabelMask, ScalarVolume};
use serde::{Deserialize, Serialize};

/// Default edge length of the local NCC window.
pub const DEFAULT_NCC_WINDOW: usize = 9;

/// Term weights of the total energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub liver: f64,
    pub vessel: f64,
    pub smoothness: f64,
    pub surface: f64,
    pub centerline: f64,
    pub inverse_consistency: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            liver: 5.0,
            vessel: 4.0,
            smoothness: 1.0,
            surface: 0.5,
            centerline: 1.0,
            inverse_consistency: 1.0,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.liver,
            self.vessel,
            self.smoothness,
            self.surface,
            self.centerline,
            self.inverse_consistency,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(crate::error::Error::InvalidParameter(format!(
                "energy weights must be finite and non-negative, got {all:?}"
            )));
        }
        Ok(())
    }
}

/// Unweighted values of every energy term plus the weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub sim: f64,
    pub seg_liver: f64,
    pub seg_vessel: f64,
    pub reg_forward: f64,
    pub reg_backward: f64,
    pub surface_forward: f64,
    pub surface_backward: f64,
    pub centerline_forward: f64,
    pub centerline_backward: f64,
    pub inverse_consistency: f64,
    pub weights: EnergyWeights,
    pub total: f64,
}

impl EnergyBreakdown {
    /// Recombines the stored terms with the stored weights; equals `total`
    /// up to rounding.
    pub fn reconstruct_total(&self) -> f64 {
        let w = &self.weights;
        self.sim
            + w.liver * self.seg_liver
            + w.vessel * self.seg_vessel
            + w.smoothness * (self.reg_forward + self.reg_backward)
            + w.surface * (self.surface_forward + self.surface_backward)
            + w.centerline * (self.centerline_forward + self.centerline_backward)
            + w.inverse_consistency * self.inverse_consistency
    }
}

/// The image pair and optional segmentation masks driving the data terms.
/// The vessel pair holds two different structures (for liver CT: the fixed
/// image's veins and the moving image's arteries), which the vessel term
/// keeps apart.
#[derive(Clone, Copy)]
pub struct EnergyPair<'a> {
    pub fixed: &'a ScalarVolume,
    pub moving: &'a ScalarVolume,
    pub fixed_liver: Option<&'a LabelMask>,
    pub moving_liver: Option<&'a LabelMask>,
    pub fixed_vessel: Option<&'a LabelMask>,
    pub moving_vessel: Option<&'a LabelMask>,
}

impl<'a> EnergyPair<'a> {
    /// A pair with images only; masks can be added by struct update.
    pub fn images(fixed: &'a ScalarVolume, moving: &'a ScalarVolume) -> Self {
        EnergyPair {
            fixed,
            moving,
            fixed_liver: None,
            moving_liver: None,
            fixed_vessel: None,
            moving_vessel: None,
        }
    }
}

/// Extracted geometry anchors for the structure constraints. Fixed-image
/// structures constrain the forward field, moving-image structures the
/// backward field.
#[derive(Clone, Copy, Default)]
pub struct StructureInputs<'a> {
    pub fixed_surface: Option<&'a VoxelSet>,
    pub moving_surface: Option<&'a VoxelSet>,
    pub fixed_centerline: Option<&'a WeightedCenterline>,
    pub moving_centerline: Option<&'a WeightedCenterline>,
}

fn accumulate(dst: &mut [[f64; 3]], scale: f64, src: &[[f64; 3]]) {
    if scale == 0.0 {
        return;
    }
    for (d, s) in dst.iter_mut().zip(src) {
        for c in 0..3 {
            d[c] += scale * s[c];
        }
    }
}

/// Evaluates the full energy and its gradients with respect to both fields.
pub fn total_energy(
    pair: &EnergyPair,
    fwd: &DisplacementField,
    bwd: &DisplacementField,
    structures: &StructureInputs,
    weights: &EnergyWeights,
    ncc_window: usize,
) -> Result<(EnergyBreakdown, Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    weights.validate()?;
    let g = fwd.geometry();
    ensure_same_grid(g, bwd.geometry(), "total_energy fields")?;
    ensure_same_grid(g, pair.fixed.geometry(), "total_energy fixed image")?;
    ensure_same_grid(g, pair.moving.geometry(), "total_energy moving image")?;

    let n = g.voxel_count();
    let mut grad_f = vec![[0.0; 3]; n];
    let mut grad_b = vec![[0.0; 3]; n];
    let mut out = EnergyBreakdown {
        weights: *weights,
        ..EnergyBreakdown::default()
    };

    let (warped, spatial) = warp_scalar_with_grad(pair.moving, fwd)?;
    let (sim, dsim) = ncc_loss(pair.fixed, &warped, ncc_window)?;
    out.sim = sim;
    for i in 0..n {
        for c in 0..3 {
            grad_f[i][c] += dsim[i] * spatial[i][c];
        }
    }

    if let (Some(fl), Some(ml)) = (pair.fixed_liver, pair.moving_liver) {
        let (value, grad) = overlap_loss(fl, ml, fwd)?;
        out.seg_liver = value;
        accumulate(&mut grad_f, weights.liver, &grad);
    }
    if let (Some(fv), Some(mv)) = (pair.fixed_vessel, pair.moving_vessel) {
        let (value, grad) = nonoverlap_loss(fv, mv, fwd)?;
        out.seg_vessel = value;
        accumulate(&mut grad_f, weights.vessel, &grad);
    }

    // The regularizer operations return raw sums; the assembly scales each
    // by the grid voxel count, the same masked-mean convention for all of
    // them. The default weights assume this per-voxel scale.
    let per_voxel = 1.0 / n as f64;
    let (reg_f, grad) = smoothness(fwd);
    out.reg_forward = reg_f * per_voxel;
    accumulate(&mut grad_f, weights.smoothness * per_voxel, &grad);
    let (reg_b, grad) = smoothness(bwd);
    out.reg_backward = reg_b * per_voxel;
    accumulate(&mut grad_b, weights.smoothness * per_voxel, &grad);

    if let Some(surface) = structures.fixed_surface {
        let (value, grad) = surface_constraint(fwd, surface)?;
        out.surface_forward = value * per_voxel;
        accumulate(&mut grad_f, weights.surface * per_voxel, &grad);
    }
    if let Some(surface) = structures.moving_surface {
        let (value, grad) = surface_constraint(bwd, surface)?;
        out.surface_backward = value * per_voxel;
        accumulate(&mut grad_b, weights.surface * per_voxel, &grad);
    }
    if let Some(centerline) = structures.fixed_centerline {
        let (value, grad) = centerline_constraint(fwd, centerline)?;
        out.centerline_forward = value * per_voxel;
        accumulate(&mut grad_f, weights.centerline * per_voxel, &grad);
    }
    if let Some(centerline) = structures.moving_centerline {
        let (value, grad) = centerline_constraint(bwd, centerline)?;
        out.centerline_backward = value * per_voxel;
        accumulate(&mut grad_b, weights.centerline * per_voxel, &grad);
    }

    let (ic, ic_grad_f, ic_grad_b) = inverse_consistency_loss(fwd, bwd)?;
    out.inverse_consistency = ic;
    accumulate(&mut grad_f, weights.inverse_consistency, &ic_grad_f);
    accumulate(&mut grad_b, weights.inverse_consistency, &ic_grad_b);

    out.total = out.reconstruct_total();
    Ok((out, grad_f, grad_b))
}
