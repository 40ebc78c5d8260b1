//! Multi-resolution joint optimization of the forward and backward fields.
//!
//! Registration runs coarse to fine: volumes are box-filtered and masks
//! majority-voted down by powers of two, structures are re-extracted at each
//! level (downsampled skeletons lose their thinness guarantees), and the
//! fields found at one level seed the next through trilinear upsampling with
//! doubled magnitudes. The vessel overlap and centerline terms engage only
//! at full resolution, where the tubes they describe are resolved. Within a level the driver is adaptive-moment descent
//! wrapped in a monotone acceptance rule: a step that raises the energy is
//! rolled back (including the moment state) and the step size halved, so
//! accepted energies never increase.

use crate::energy::{total_energy, EnergyBreakdown, EnergyPair, EnergyWeights, StructureInputs};
use crate::error::{Error, Result};
use crate::field::{invert_field, upsample_field, DisplacementField};
use crate::metrics::{
    connected_regions, dsc_hard, ravd, rfp, surface_distances, FieldMetrics, LiverMetrics,
    MetricsReport, VesselMetrics,
};
use crate::skeleton::skeletonize;
use crate::structures::{
    centerline_weights, distance_map, extract_surface, VoxelSet, WeightedCenterline,
};
use crate::volume::{
    downsample_mask, downsample_volume, ensure_same_grid, warp_mask, LabelMask, ScalarVolume,
};
use serde::{Deserialize, Serialize};

/// Full configuration of one registration run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub weights: EnergyWeights,
    /// Pyramid depth; level k works at 1/2^k resolution.
    pub levels: usize,
    /// Iteration cap per level.
    pub iterations: usize,
    /// Base step size; per level the effective rate is
    /// `clamp(step_size / g, step_size, max_step)` with g the 99.9th
    /// percentile of the initial gradient component magnitudes.
    pub step_size: f64,
    /// Largest allowed per-iteration displacement change in voxels.
    pub max_step: f64,
    /// First and second moment decay of the adaptive-moment update.
    pub beta1: f64,
    pub beta2: f64,
    /// A level stops once the relative energy decrease over
    /// `tolerance_window` iterations falls below this; rejected steps leave
    /// the energy unchanged and count toward the window.
    pub tolerance: f64,
    pub tolerance_window: usize,
    /// Local NCC window edge length; 0 selects global NCC.
    pub ncc_window: usize,
    /// Fixed-point budget when deriving an inverse field.
    pub inversion_iterations: usize,
    pub inversion_tolerance: f64,
    /// Reserved for stochastic variants; the current solver is deterministic
    /// and ignores it beyond recording.
    pub seed: u64,
    /// When set, only the forward field is optimized and the backward field
    /// is derived from it afterwards instead of being a free variable.
    pub derive_backward: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            weights: EnergyWeights::default(),
            levels: 3,
            iterations: 200,
            step_size: 1e-4,
            max_step: 0.25,
            beta1: 0.9,
            beta2: 0.999,
            tolerance: 1e-6,
            tolerance_window: 10,
            ncc_window: crate::energy::DEFAULT_NCC_WINDOW,
            inversion_iterations: 60,
            inversion_tolerance: 1e-8,
            seed: 0,
            derive_backward: false,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.levels == 0 || self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "levels and iterations must be at least 1".into(),
            ));
        }
        if !(self.step_size > 0.0) || !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter(
                "step sizes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter(
                "moment decays must lie in [0, 1)".into(),
            ));
        }
        if self.tolerance_window == 0 {
            return Err(Error::InvalidParameter(
                "tolerance window must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Optional segmentation masks accompanying an image pair.
#[derive(Clone, Copy, Default)]
pub struct RegistrationMasks<'a> {
    pub fixed_liver: Option<&'a LabelMask>,
    pub moving_liver: Option<&'a LabelMask>,
    pub fixed_vessel: Option<&'a LabelMask>,
    pub moving_vessel: Option<&'a LabelMask>,
}

/// One resolution level: data plus the structures extracted from this
/// level's masks.
pub struct PyramidLevel {
    pub fixed: ScalarVolume,
    pub moving: ScalarVolume,
    pub fixed_liver: Option<LabelMask>,
    pub moving_liver: Option<LabelMask>,
    pub fixed_vessel: Option<LabelMask>,
    pub moving_vessel: Option<LabelMask>,
    pub fixed_surface: Option<VoxelSet>,
    pub moving_surface: Option<VoxelSet>,
    pub fixed_centerline: Option<WeightedCenterline>,
    pub moving_centerline: Option<WeightedCenterline>,
}

/// Energy state of one accepted iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub level: usize,
    pub iteration: usize,
    pub energy: EnergyBreakdown,
}

/// The outcome of a registration run.
pub struct RegistrationResult {
    pub forward: DisplacementField,
    pub backward: DisplacementField,
    pub trace: Vec<TraceEntry>,
    pub report: MetricsReport,
    /// Whether the finest level met the energy tolerance before its
    /// iteration cap.
    pub converged: bool,
}

/// Surface from a mask, or nothing if the mask is absent or has become empty
/// at this resolution.
fn surface_of(mask: Option<&LabelMask>) -> Option<VoxelSet> {
    mask.and_then(|m| extract_surface(m).ok())
}

/// Weighted centerline from a vessel mask, skipping masks that vanished
/// during coarsening.
fn centerline_of(mask: Option<&LabelMask>) -> Option<WeightedCenterline> {
    let mask = mask?;
    let skeleton = skeletonize(mask).ok()?;
    let dm = distance_map(mask);
    centerline_weights(&skeleton, &dm).ok()
}

fn make_level(
    fixed: ScalarVolume,
    moving: ScalarVolume,
    fixed_liver: Option<LabelMask>,
    moving_liver: Option<LabelMask>,
    fixed_vessel: Option<LabelMask>,
    moving_vessel: Option<LabelMask>,
) -> PyramidLevel {
    let fixed_surface = surface_of(fixed_liver.as_ref());
    let moving_surface = surface_of(moving_liver.as_ref());
    let fixed_centerline = centerline_of(fixed_vessel.as_ref());
    let moving_centerline = centerline_of(moving_vessel.as_ref());
    PyramidLevel {
        fixed,
        moving,
        fixed_liver,
        moving_liver,
        fixed_vessel,
        moving_vessel,
        fixed_surface,
        moving_surface,
        fixed_centerline,
        moving_centerline,
    }
}

/// Builds the resolution pyramid, finest level first.
pub fn build_pyramid(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    masks: &RegistrationMasks,
    levels: usize,
) -> Result<Vec<PyramidLevel>> {
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be at least 1".into()));
    }
    ensure_same_grid(fixed.geometry(), moving.geometry(), "build_pyramid")?;
    for mask in [
        masks.fixed_liver,
        masks.moving_liver,
        masks.fixed_vessel,
        masks.moving_vessel,
    ]
    .into_iter()
    .flatten()
    {
        ensure_same_grid(fixed.geometry(), mask.geometry(), "build_pyramid mask")?;
    }
    let coarsest = fixed
        .geometry()
        .dims
        .iter()
        .map(|&d| d >> (levels - 1))
        .min()
        .unwrap_or(0);
    if coarsest < 4 {
        return Err(Error::GridTooSmall(format!(
            "{:?} cannot support {levels} pyramid levels (coarsest axis would be {coarsest} < 4)",
            fixed.geometry().dims
        )));
    }

    let mut out = Vec::with_capacity(levels);
    let mut fixed = fixed.clone();
    let mut moving = moving.clone();
    let mut fixed_liver = masks.fixed_liver.cloned();
    let mut moving_liver = masks.moving_liver.cloned();
    let mut fixed_vessel = masks.fixed_vessel.cloned();
    let mut moving_vessel = masks.moving_vessel.cloned();
    for level in 0..levels {
        if level > 0 {
            fixed = downsample_volume(&fixed)?;
            moving = downsample_volume(&moving)?;
            let shrink = |m: &Option<LabelMask>| -> Result<Option<LabelMask>> {
                m.as_ref().map(downsample_mask).transpose()
            };
            fixed_liver = shrink(&fixed_liver)?;
            moving_liver = shrink(&moving_liver)?;
            fixed_vessel = shrink(&fixed_vessel)?;
            moving_vessel = shrink(&moving_vessel)?;
        }
        out.push(make_level(
            fixed.clone(),
            moving.clone(),
            fixed_liver.clone(),
            moving_liver.clone(),
            fixed_vessel.clone(),
            moving_vessel.clone(),
        ));
    }
    Ok(out)
}

struct AdamState {
    m: Vec<[f64; 3]>,
    v: Vec<[f64; 3]>,
    t: u32,
    /// Added to the root second moment before dividing. Scaled to the
    /// typical initial gradient magnitude: components well below it move
    /// proportionally to their gradient instead of taking full sign steps,
    /// which keeps voxels that are already aligned (zero-gradient kinks of
    /// the trilinear warp) from being kicked around at the step size.
    eps: f64,
}

impl AdamState {
    fn new(n: usize, eps: f64) -> Self {
        AdamState {
            m: vec![[0.0; 3]; n],
            v: vec![[0.0; 3]; n],
            t: 0,
            eps,
        }
    }

    /// One bias-corrected update of `u` against gradient `g`.
    fn step(&mut self, u: &mut [[f64; 3]], g: &[[f64; 3]], beta1: f64, beta2: f64, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..u.len() {
            for a in 0..3 {
                let grad = g[i][a];
                self.m[i][a] = beta1 * self.m[i][a] + (1.0 - beta1) * grad;
                self.v[i][a] = beta2 * self.v[i][a] + (1.0 - beta2) * grad * grad;
                let m_hat = self.m[i][a] / bc1;
                let v_hat = self.v[i][a] / bc2;
                u[i][a] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Root-mean-square over all gradient components of both fields.
fn gradient_rms(grad_f: &[[f64; 3]], grad_b: &[[f64; 3]]) -> f64 {
    let sum: f64 = grad_f
        .iter()
        .chain(grad_b.iter())
        .flat_map(|v| v.iter())
        .map(|c| c * c)
        .sum();
    (sum / (6 * grad_f.len()) as f64).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn run_level(
    level: &PyramidLevel,
    level_index: usize,
    fwd: &mut DisplacementField,
    bwd: &mut DisplacementField,
    weights: &EnergyWeights,
    config: &RegistrationConfig,
    trace: &mut Vec<TraceEntry>,
) -> Result<bool> {
    let pair = EnergyPair {
        fixed: &level.fixed,
        moving: &level.moving,
        fixed_liver: level.fixed_liver.as_ref(),
        moving_liver: level.moving_liver.as_ref(),
        fixed_vessel: level.fixed_vessel.as_ref(),
        moving_vessel: level.moving_vessel.as_ref(),
    };
    let structures = StructureInputs {
        fixed_surface: level.fixed_surface.as_ref(),
        moving_surface: level.moving_surface.as_ref(),
        fixed_centerline: level.fixed_centerline.as_ref(),
        moving_centerline: level.moving_centerline.as_ref(),
    };
    let eval = |fwd: &DisplacementField, bwd: &DisplacementField| {
        total_energy(&pair, fwd, bwd, &structures, weights, config.ncc_window)
    };

    let (mut breakdown, mut grad_f, mut grad_b) = eval(fwd, bwd)?;
    // The step scale follows the bulk of the gradient: sparse structure
    // terms concentrate components orders of magnitude above the rest, and
    // those outliers sit beyond the percentile.
    let mut magnitudes: Vec<f64> = grad_f
        .iter()
        .chain(grad_b.iter())
        .flat_map(|v| v.iter())
        .map(|c| c.abs())
        .collect();
    magnitudes.sort_by(|a, b| a.total_cmp(b));
    let g0 = magnitudes[((magnitudes.len() - 1) as f64 * 0.999) as usize];
    let mut lr = if g0 > 0.0 {
        (config.step_size / g0).clamp(config.step_size, config.max_step)
    } else {
        config.step_size
    };
    let eps = (0.1 * gradient_rms(&grad_f, &grad_b)).max(1e-12);

    let n = fwd.vectors().len();
    let mut adam_f = AdamState::new(n, eps);
    let mut adam_b = AdamState::new(n, eps);
    let mut recent_energies = vec![breakdown.total];
    trace.push(TraceEntry {
        level: level_index,
        iteration: 0,
        energy: breakdown.clone(),
    });

    let mut converged = false;
    for iter in 1..=config.iterations {
        let saved_fwd = fwd.vectors().to_vec();
        let saved_bwd = bwd.vectors().to_vec();
        let saved_mf = adam_f.m.clone();
        let saved_vf = adam_f.v.clone();
        let saved_mb = adam_b.m.clone();
        let saved_vb = adam_b.v.clone();
        let saved_t = adam_f.t;

        adam_f.step(fwd.vectors_mut(), &grad_f, config.beta1, config.beta2, lr);
        if !config.derive_backward {
            adam_b.step(bwd.vectors_mut(), &grad_b, config.beta1, config.beta2, lr);
        }

        let (candidate, cand_gf, cand_gb) = eval(fwd, bwd)?;
        if candidate.total <= breakdown.total {
            breakdown = candidate;
            grad_f = cand_gf;
            grad_b = cand_gb;
            trace.push(TraceEntry {
                level: level_index,
                iteration: iter,
                energy: breakdown.clone(),
            });
        } else {
            fwd.vectors_mut().copy_from_slice(&saved_fwd);
            bwd.vectors_mut().copy_from_slice(&saved_bwd);
            adam_f.m = saved_mf;
            adam_f.v = saved_vf;
            adam_f.t = saved_t;
            adam_b.m = saved_mb;
            adam_b.v = saved_vb;
            adam_b.t = saved_t;
            lr *= 0.5;
            if lr < 1e-12 {
                converged = true;
                break;
            }
        }

        recent_energies.push(breakdown.total);
        let window = config.tolerance_window;
        if recent_energies.len() > window {
            let old = recent_energies[recent_energies.len() - 1 - window];
            let new = breakdown.total;
            if (old - new).abs() <= config.tolerance * old.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }
    Ok(converged)
}

fn final_report(
    masks: &RegistrationMasks,
    forward: &DisplacementField,
) -> Result<MetricsReport> {
    let mut report = MetricsReport {
        field: Some(FieldMetrics { rfp: rfp(forward) }),
        ..MetricsReport::default()
    };
    if let (Some(fl), Some(ml)) = (masks.fixed_liver, masks.moving_liver) {
        let warped = warp_mask(ml, forward)?;
        let dsc = dsc_hard(fl, &warped)?;
        let ravd = ravd(&warped, fl)?;
        let (assd, mssd) = surface_distances(&warped, fl)?;
        report.liver = Some(LiverMetrics {
            dsc,
            ravd,
            assd,
            mssd,
        });
    }
    if let (Some(fv), Some(mv)) = (masks.fixed_vessel, masks.moving_vessel) {
        let warped = warp_mask(mv, forward)?;
        report.vessel = Some(VesselMetrics {
            dsc: dsc_hard(fv, &warped)?,
            connected_regions: connected_regions(&warped),
        });
    }
    Ok(report)
}

/// Registers `moving` onto `fixed`, optimizing forward and backward fields.
pub fn register(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    masks: &RegistrationMasks,
    config: &RegistrationConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    let pyramid = build_pyramid(fixed, moving, masks, config.levels)?;

    // In derived-backward mode the backward field is not a free variable, so
    // its couplings are dropped from the optimized energy.
    let weights = if config.derive_backward {
        EnergyWeights {
            inverse_consistency: 0.0,
            ..config.weights
        }
    } else {
        config.weights
    };

    let coarsest = pyramid.len() - 1;
    let mut fwd = DisplacementField::zeros(pyramid[coarsest].fixed.geometry());
    let mut bwd = DisplacementField::zeros(pyramid[coarsest].fixed.geometry());
    let mut trace = Vec::new();
    let mut converged = false;
    for (index, level) in pyramid.iter().enumerate().rev() {
        if index != coarsest {
            let dims = level.fixed.geometry().dims;
            fwd = upsample_field(&fwd, dims)?;
            bwd = upsample_field(&bwd, dims)?;
        }
        // Vessel-scale terms act only at full resolution; coarser grids do
        // not resolve tubes a couple of voxels wide.
        let level_weights = if index == 0 {
            weights
        } else {
            EnergyWeights {
                vessel: 0.0,
                centerline: 0.0,
                ..weights
            }
        };
        converged = run_level(
            level,
            index,
            &mut fwd,
            &mut bwd,
            &level_weights,
            config,
            &mut trace,
        )?;
    }

    if config.derive_backward {
        bwd = derive_inverse(&fwd, config);
    }

    let report = final_report(masks, &fwd)?;
    Ok(RegistrationResult {
        forward: fwd,
        backward: bwd,
        trace,
        report,
        converged,
    })
}

/// Fixed-point inverse of a forward field under the run's inversion budget.
pub fn derive_inverse(fwd: &DisplacementField, config: &RegistrationConfig) -> DisplacementField {
    invert_field(fwd, config.inversion_iterations, config.inversion_tolerance).field
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridGeometry;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn geom(dims: [usize; 3]) -> GridGeometry {
        GridGeometry::new(dims, [1.0; 3]).unwrap()
    }

    fn textured_volume(g: GridGeometry, seed: u64) -> ScalarVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vol = ScalarVolume::zeros(g);
        for z in 0..g.dims[2] {
            for y in 0..g.dims[1] {
                for x in 0..g.dims[0] {
                    let smooth = 0.5
                        + 0.2 * (x as f64 * 0.7).sin()
                        + 0.15 * (y as f64 * 0.5).cos()
                        + 0.1 * (z as f64 * 0.9).sin();
                    vol.set(x, y, z, smooth + rng.random_range(-0.02..0.02));
                }
            }
        }
        vol
    }

    fn ball(g: GridGeometry, center: [f64; 3], r: f64) -> LabelMask {
        let mut data = vec![false; g.voxel_count()];
        for (i, v) in data.iter_mut().enumerate() {
            let p = g.coords(i);
            let d2: f64 = (0..3).map(|a| (p[a] as f64 - center[a]).powi(2)).sum();
            *v = d2 <= r * r;
        }
        LabelMask::from_vec(g, data).unwrap()
    }

    fn quick_config() -> RegistrationConfig {
        RegistrationConfig {
            levels: 2,
            iterations: 40,
            ncc_window: 5,
            ..RegistrationConfig::default()
        }
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut config = RegistrationConfig::default();
        config.levels = 0;
        assert!(config.validate().is_err());
        config = RegistrationConfig::default();
        config.beta1 = 1.0;
        assert!(config.validate().is_err());
        config = RegistrationConfig::default();
        config.step_size = 0.0;
        assert!(config.validate().is_err());
        assert!(RegistrationConfig::default().validate().is_ok());
    }

    #[test]
    fn pyramid_halves_dimensions_and_reextracts_structures() {
        let g = geom([16, 16, 16]);
        let fixed = textured_volume(g, 1);
        let moving = textured_volume(g, 2);

        let single = build_pyramid(&fixed, &moving, &RegistrationMasks::default(), 1).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].fixed.geometry().dims, [16, 16, 16]);
        assert_eq!(single[0].fixed.data(), fixed.data());

        // A straight tube along z stays one connected skeleton component at
        // both resolutions.
        let mut tube = vec![false; g.voxel_count()];
        for z in 2..14 {
            for y in 7..10 {
                for x in 7..10 {
                    tube[g.index(x, y, z)] = true;
                }
            }
        }
        let tube = LabelMask::from_vec(g, tube).unwrap();
        let masks = RegistrationMasks {
            fixed_vessel: Some(&tube),
            moving_vessel: Some(&tube),
            ..RegistrationMasks::default()
        };
        let pyramid = build_pyramid(&fixed, &moving, &masks, 2).unwrap();
        assert_eq!(pyramid[1].fixed.geometry().dims, [8, 8, 8]);
        for level in &pyramid {
            let cl = level.fixed_centerline.as_ref().unwrap();
            let as_mask = cl.points().to_mask();
            assert_eq!(connected_regions(&as_mask), 1);
        }

        assert!(build_pyramid(&fixed, &moving, &RegistrationMasks::default(), 4).is_err());
    }

    #[test]
    fn identity_pair_stays_still() {
        let g = geom([16, 16, 16]);
        let image = textured_volume(g, 3);
        let liver = ball(g, [7.5, 7.5, 7.5], 5.5);
        let masks = RegistrationMasks {
            fixed_liver: Some(&liver),
            moving_liver: Some(&liver),
            ..RegistrationMasks::default()
        };
        let result = register(&image, &image, &masks, &quick_config()).unwrap();
        assert!(
            result.forward.max_abs_component() < 0.1,
            "identity pair moved by {}",
            result.forward.max_abs_component()
        );
        let report = result.report.liver.unwrap();
        assert!(report.dsc > 99.0);
        assert_eq!(result.report.field.unwrap().rfp, 0.0);
    }

    #[test]
    fn accepted_energies_never_increase_within_a_level() {
        let g = geom([12, 12, 12]);
        let fixed = textured_volume(g, 4);
        let moving = textured_volume(g, 5);
        let config = RegistrationConfig {
            levels: 1,
            iterations: 30,
            ncc_window: 5,
            ..RegistrationConfig::default()
        };
        let result = register(&fixed, &moving, &RegistrationMasks::default(), &config).unwrap();
        for pair in result.trace.windows(2) {
            if pair[0].level == pair[1].level {
                assert!(
                    pair[1].energy.total <= pair[0].energy.total + 1e-12,
                    "energy rose from {} to {}",
                    pair[0].energy.total,
                    pair[1].energy.total
                );
            }
        }
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let g = geom([12, 12, 12]);
        let fixed = textured_volume(g, 6);
        let moving = textured_volume(g, 7);
        let config = RegistrationConfig {
            levels: 1,
            iterations: 15,
            ncc_window: 5,
            ..RegistrationConfig::default()
        };
        let a = register(&fixed, &moving, &RegistrationMasks::default(), &config).unwrap();
        let b = register(&fixed, &moving, &RegistrationMasks::default(), &config).unwrap();
        assert_eq!(a.forward.vectors(), b.forward.vectors());
        assert_eq!(a.backward.vectors(), b.backward.vectors());
        assert_eq!(a.trace.len(), b.trace.len());
    }

    #[test]
    fn derived_inverse_mode_produces_consistent_fields() {
        let g = geom([12, 12, 12]);
        let fixed = textured_volume(g, 8);
        let moving = textured_volume(g, 9);
        let config = RegistrationConfig {
            derive_backward: true,
            levels: 1,
            iterations: 20,
            ncc_window: 5,
            ..RegistrationConfig::default()
        };
        let result = register(&fixed, &moving, &RegistrationMasks::default(), &config).unwrap();
        let (ic, _, _) =
            crate::energy::inverse_consistency_loss(&result.forward, &result.backward).unwrap();
        assert!(ic < 0.05, "derived inverse inconsistent: {ic}");
    }

    #[test]
    fn derive_inverse_handles_translations() {
        let g = geom([10, 10, 10]);
        let config = RegistrationConfig::default();
        let zero = DisplacementField::zeros(g);
        let inv = derive_inverse(&zero, &config);
        assert!(inv.vectors().iter().all(|v| *v == [0.0; 3]));

        let mut shift = DisplacementField::zeros(g);
        for v in shift.vectors_mut() {
            *v = [0.6, -0.4, 0.2];
        }
        let inv = derive_inverse(&shift, &config);
        let center = inv.at(5, 5, 5);
        for a in 0..3 {
            assert!((center[a] + shift.at(5, 5, 5)[a]).abs() < 1e-6);
        }
    }
}
