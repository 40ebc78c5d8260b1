//! Synthetic liver test pairs with analytically known deformations.
//!
//! A phantom is an ellipsoidal liver in darker surrounding tissue, both
//! carrying a shared two-octave intensity texture, with two disjoint tubular
//! trees (artery and vein) running close together near the liver axis. The
//! moving volume is the pre-image warped by a sum-of-Gaussian-bumps field
//! whose amplitudes are capped so the warp cannot fold; the stored
//! ground-truth forward field is the tightly converged inverse of that
//! generation field, so registering moving onto fixed should recover it.
//! Contrast differs per phase: the artery is bright only in the moving
//! volume and the vein only in the fixed one, reproducing the
//! unpaired-enhancement challenge of dynamic contrast-enhanced CT. The
//! deformation shears the vessel channel, so the unregistered overlay shows
//! spurious cross-class vessel overlap that only a recovered field removes.

use crate::error::{Error, Result};
use crate::field::{invert_field, DisplacementField};
use crate::metrics::rfp;
use crate::structures::edt_squared_to_seeds;
use crate::volume::{
    ensure_same_grid, sample_trilinear, warp_mask, warp_scalar, GridGeometry, LabelMask,
    ScalarVolume,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generation parameters. Sizes scale with the grid so the same spec works
/// for quick small-grid tests and full-size runs. Deserialization fills
/// omitted fields from the defaults, so a spec file only has to name what it
/// changes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub seed: u64,
    /// Liver ellipsoid semi-axes as fractions of the usable half-extents.
    pub liver_axes_frac: [f64; 3],
    /// Child branches per vessel tree.
    pub branch_count: usize,
    /// Vessel radii in mm, thin tips to thick trunk.
    pub radius_range_mm: (f64, f64),
    /// Minimum artery-to-vein separation in mm.
    pub clearance_mm: f64,
    /// Number of Gaussian bumps in the generation field. The first bump
    /// rides the vessel channel and shifts the moving artery's apparent
    /// position onto the fixed vein's side; the rest are random.
    pub bump_count: usize,
    /// Peak displacement magnitude in voxels (capped by the fold-free bound).
    pub max_magnitude: f64,
    /// Base bump standard deviation in voxels; individual bumps spread from
    /// 1.0 to 2.0 times this value.
    pub bump_sigma: f64,
    /// Texture amplitude added to all tissue; a half-period octave at 0.6
    /// of this amplitude is layered on top.
    pub texture_amplitude: f64,
    /// Intensity of each vessel class in (its bright phase, the other phase).
    pub vessel_contrast: (f64, f64),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 64],
            spacing: [1.0; 3],
            seed: 0,
            liver_axes_frac: [0.82, 0.72, 0.66],
            branch_count: 3,
            radius_range_mm: (0.9, 1.25),
            clearance_mm: 0.8,
            bump_count: 4,
            max_magnitude: 3.0,
            bump_sigma: 12.0,
            texture_amplitude: 0.1,
            vessel_contrast: (0.85, 0.64),
        }
    }
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 12) {
            return Err(Error::InvalidParameter(format!(
                "phantom grid must be at least 12 voxels per axis, got {:?}",
                self.dims
            )));
        }
        if self.liver_axes_frac.iter().any(|&f| !(0.0 < f && f <= 1.0)) {
            return Err(Error::InvalidParameter(
                "liver axis fractions must lie in (0, 1]".into(),
            ));
        }
        let (tip, trunk) = self.radius_range_mm;
        if !(tip > 0.0 && trunk >= tip) {
            return Err(Error::InvalidParameter(format!(
                "radius range must satisfy 0 < tip <= trunk, got ({tip}, {trunk})"
            )));
        }
        if !(self.clearance_mm >= 0.0)
            || !(self.max_magnitude >= 0.0)
            || !(self.bump_sigma > 0.0)
        {
            return Err(Error::InvalidParameter(
                "clearance and magnitude must be >= 0, bump sigma > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One generated test pair. The artery mask belongs to the moving phase and
/// the vein mask to the fixed phase; there is no paired counterpart, exactly
/// as in arterial/venous CT.
#[derive(Clone, Debug)]
pub struct PhantomPair {
    pub fixed: ScalarVolume,
    pub moving: ScalarVolume,
    pub fixed_liver: LabelMask,
    pub moving_liver: LabelMask,
    pub fixed_vein: LabelMask,
    pub moving_artery: LabelMask,
    /// Field that warps `moving` onto `fixed`.
    pub truth: DisplacementField,
}

struct Segment {
    a: [f64; 3],
    b: [f64; 3],
    radius_mm: f64,
}

fn ellipsoid_mask(g: GridGeometry, center: [f64; 3], semi: [f64; 3]) -> LabelMask {
    let mut data = vec![false; g.voxel_count()];
    for (i, v) in data.iter_mut().enumerate() {
        let p = g.coords(i);
        let rho: f64 = (0..3)
            .map(|a| ((p[a] as f64 - center[a]) / semi[a]).powi(2))
            .sum();
        *v = rho <= 1.0;
    }
    LabelMask::from_vec(g, data).unwrap()
}

fn clamp_into_ellipsoid(p: [f64; 3], center: [f64; 3], semi: [f64; 3], frac: f64) -> [f64; 3] {
    let rho: f64 = (0..3)
        .map(|a| ((p[a] - center[a]) / (semi[a] * frac)).powi(2))
        .sum::<f64>()
        .sqrt();
    if rho <= 1.0 {
        return p;
    }
    let mut out = [0.0; 3];
    for a in 0..3 {
        out[a] = center[a] + (p[a] - center[a]) / rho;
    }
    out
}

/// Trunk plus tapering child branches. The trunks run near-parallel on
/// either side of the liver axis, offset just past the clearance bound, so
/// the artery and vein face each other across a thin gap along their whole
/// length; branches are biased toward `side` (±x) and grow outward into
/// their own hemisphere. `radius_scale` narrows or widens the whole tree,
/// mirroring the calibers of a hepatic artery versus a portal vein.
fn build_tree(
    rng: &mut ChaCha8Rng,
    center: [f64; 3],
    semi: [f64; 3],
    side: f64,
    radius_scale: f64,
    spec: &PhantomSpec,
) -> Vec<Segment> {
    let (tip_r, trunk_r) = (
        radius_scale * spec.radius_range_mm.0,
        radius_scale * spec.radius_range_mm.1,
    );
    let offset = (trunk_r + 0.5 * spec.clearance_mm + 0.1) / spec.spacing[0];
    let jitter = |rng: &mut ChaCha8Rng, s: f64| rng.random_range(-s..s);
    let base = clamp_into_ellipsoid(
        [
            center[0] + side * offset + jitter(rng, 0.25),
            center[1] + jitter(rng, 0.5),
            center[2] - 0.55 * semi[2],
        ],
        center,
        semi,
        0.85,
    );
    let tip = clamp_into_ellipsoid(
        [
            center[0] + side * (offset + 0.25 * jitter(rng, 1.0).abs()),
            center[1] + jitter(rng, 0.5),
            center[2] + 0.55 * semi[2],
        ],
        center,
        semi,
        0.85,
    );
    let mut segments = vec![Segment {
        a: base,
        b: tip,
        radius_mm: trunk_r,
    }];
    for k in 0..spec.branch_count {
        let t = 0.3 + 0.5 * (k as f64 + rng.random_range(0.0..0.8)) / spec.branch_count as f64;
        let start = [
            base[0] + t * (tip[0] - base[0]),
            base[1] + t * (tip[1] - base[1]),
            base[2] + t * (tip[2] - base[2]),
        ];
        // Mostly outward; the occasional inward branch tip approaches the
        // other tree down to the clearance bound.
        let dir = {
            let u1 = side * rng.random_range(-0.25..1.0);
            let u2 = jitter(rng, 0.9);
            let u3 = rng.random_range(0.1..0.5);
            let norm = (u1 * u1 + u2 * u2 + u3 * u3).sqrt();
            [u1 / norm, u2 / norm, u3 / norm]
        };
        let len = rng.random_range(0.35..0.55) * semi.iter().cloned().fold(f64::INFINITY, f64::min);
        let end = clamp_into_ellipsoid(
            [
                start[0] + len * dir[0],
                start[1] + len * dir[1],
                start[2] + len * dir[2],
            ],
            center,
            semi,
            0.85,
        );
        let taper = (k as f64 + 1.0) / (spec.branch_count as f64 + 1.0);
        segments.push(Segment {
            a: start,
            b: end,
            radius_mm: trunk_r + (tip_r - trunk_r) * (0.4 + 0.6 * taper),
        });
    }
    segments
}

fn rasterize_tree(g: GridGeometry, segments: &[Segment]) -> LabelMask {
    let mut data = vec![false; g.voxel_count()];
    for seg in segments {
        let r = seg.radius_mm;
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..3 {
            let pad = r / g.spacing[a] + 1.0;
            lo[a] = (seg.a[a].min(seg.b[a]) - pad).floor() as i64;
            hi[a] = (seg.a[a].max(seg.b[a]) + pad).ceil() as i64;
            lo[a] = lo[a].clamp(0, g.dims[a] as i64 - 1);
            hi[a] = hi[a].clamp(0, g.dims[a] as i64 - 1);
        }
        let d = [
            (seg.b[0] - seg.a[0]) * g.spacing[0],
            (seg.b[1] - seg.a[1]) * g.spacing[1],
            (seg.b[2] - seg.a[2]) * g.spacing[2],
        ];
        let len_sq: f64 = d.iter().map(|c| c * c).sum();
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let q = [
                        (x as f64 - seg.a[0]) * g.spacing[0],
                        (y as f64 - seg.a[1]) * g.spacing[1],
                        (z as f64 - seg.a[2]) * g.spacing[2],
                    ];
                    let t = if len_sq > 0.0 {
                        ((q[0] * d[0] + q[1] * d[1] + q[2] * d[2]) / len_sq).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let dist_sq: f64 = (0..3).map(|a| (q[a] - t * d[a]).powi(2)).sum();
                    if dist_sq <= r * r {
                        data[g.index(x as usize, y as usize, z as usize)] = true;
                    }
                }
            }
        }
    }
    LabelMask::from_vec(g, data).unwrap()
}

/// Minimum distance in mm from any `b` voxel to the `a` set.
fn min_separation_mm(a: &LabelMask, b: &LabelMask) -> f64 {
    let g = a.geometry();
    let seeds = a.data();
    let sq = edt_squared_to_seeds(g, |i| seeds[i]);
    b.data()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .map(|(i, _)| sq[i])
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Low-frequency texture: coarse white noise interpolated onto the grid.
fn smooth_texture(
    rng: &mut ChaCha8Rng,
    g: GridGeometry,
    amplitude: f64,
    period: f64,
) -> ScalarVolume {
    let coarse_dims = g.dims.map(|d| (d as f64 / period).ceil() as usize + 2);
    let coarse_geom = GridGeometry::new(coarse_dims, [1.0; 3]).unwrap();
    let coarse_data: Vec<f64> = (0..coarse_geom.voxel_count())
        .map(|_| rng.random_range(-amplitude..amplitude))
        .collect();
    let coarse = ScalarVolume::from_vec(coarse_geom, coarse_data).unwrap();
    let mut out = ScalarVolume::zeros(g);
    for z in 0..g.dims[2] {
        for y in 0..g.dims[1] {
            for x in 0..g.dims[0] {
                let p = [x as f64 / period, y as f64 / period, z as f64 / period];
                out.set(x, y, z, sample_trilinear(&coarse, p));
            }
        }
    }
    out
}

struct Bump {
    center: [f64; 3],
    amplitude: [f64; 3],
    sigma: f64,
}

/// Gaussian-bump displacement field. The slope of one bump along any ray is
/// at most `|a| · exp(-1/2) / sigma`, so keeping the summed slopes below 0.9
/// keeps `det(I + ∂u/∂p)` positive everywhere.
fn bump_field(g: GridGeometry, bumps: &[Bump]) -> DisplacementField {
    let mut field = DisplacementField::zeros(g);
    for (i, v) in field.vectors_mut().iter_mut().enumerate() {
        let p = g.coords(i);
        for bump in bumps {
            let r_sq: f64 = (0..3)
                .map(|a| (p[a] as f64 - bump.center[a]).powi(2))
                .sum();
            let w = (-r_sq / (2.0 * bump.sigma * bump.sigma)).exp();
            for a in 0..3 {
                v[a] += w * bump.amplitude[a];
            }
        }
    }
    field
}

const MAX_ATTEMPTS: u64 = 8;

/// Builds a deterministic phantom pair for the spec.
pub fn generate(spec: &PhantomSpec) -> Result<PhantomPair> {
    spec.validate()?;
    let g = GridGeometry::new(spec.dims, spec.spacing)?;
    let center = spec.dims.map(|d| (d as f64 - 1.0) / 2.0);
    let semi = [
        spec.liver_axes_frac[0] * (spec.dims[0] as f64 / 2.0 - 2.0),
        spec.liver_axes_frac[1] * (spec.dims[1] as f64 / 2.0 - 2.0),
        spec.liver_axes_frac[2] * (spec.dims[2] as f64 / 2.0 - 2.0),
    ];

    let mut accepted = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng =
            ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(attempt.wrapping_mul(0x9E3779B9)));
        let artery_segs = build_tree(&mut rng, center, semi, -1.0, 0.85, spec);
        let vein_segs = build_tree(&mut rng, center, semi, 1.0, 1.15, spec);
        let artery = rasterize_tree(g, &artery_segs);
        let vein = rasterize_tree(g, &vein_segs);
        if artery.data().iter().all(|v| !v) || vein.data().iter().all(|v| !v) {
            continue;
        }
        if min_separation_mm(&artery, &vein) >= spec.clearance_mm {
            accepted = Some((rng, artery, vein));
            break;
        }
    }
    let (mut rng, artery, vein) = accepted.ok_or_else(|| {
        Error::InvalidParameter(format!(
            "phantom vessel clearance {} mm unsatisfiable after {MAX_ATTEMPTS} attempts",
            spec.clearance_mm
        ))
    })?;

    let liver = ellipsoid_mask(g, center, semi);

    // Generation field: random bumps with widths spread from 1.0 to 2.0
    // times the base sigma, then a global rescale to the requested
    // magnitude, capped by the fold bound.
    let mut bumps = Vec::with_capacity(spec.bump_count);
    if spec.bump_count > 0 {
        // Channel shear: the warp samples the pre-image at p + g(p), so a
        // negative-x bump shifts the artery's appearance in the moving
        // volume toward the vein side, and the unregistered pair shows
        // cross-class vessel overlap just like misaligned contrast phases.
        // The bump is deterministic and the only x displacement in the
        // field, so the apparent shift survives the global rescale on every
        // seed.
        bumps.push(Bump {
            center,
            amplitude: [-1.0, 0.0, 0.0],
            sigma: 2.0 * spec.bump_sigma,
        });
    }
    let base_angle = rng.random_range(0.0..std::f64::consts::TAU);
    for k in 1..spec.bump_count {
        // The remaining bumps displace within the section plane, with
        // directions spread around the circle so their wide tails never sum
        // to a peak rivaling the shear, and centers kept off the vessel
        // channel.
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let c = [
            center[0] + sign * rng.random_range(0.3..0.7) * semi[0],
            center[1] + rng.random_range(-0.7..0.7) * semi[1],
            center[2] + rng.random_range(-0.7..0.7) * semi[2],
        ];
        let angle = base_angle
            + std::f64::consts::TAU * (k - 1) as f64 / (spec.bump_count - 1).max(1) as f64
            + rng.random_range(-0.4..0.4);
        let dir = [0.0, angle.cos(), angle.sin()];
        let mag = rng.random_range(0.25..0.45);
        let spread = if spec.bump_count > 1 {
            k as f64 / (spec.bump_count - 1) as f64
        } else {
            0.5
        };
        bumps.push(Bump {
            center: c,
            amplitude: [mag * dir[0], mag * dir[1], mag * dir[2]],
            sigma: spec.bump_sigma * (1.0 + spread),
        });
    }
    let generation = if spec.max_magnitude > 0.0 && spec.bump_count > 0 {
        let raw = bump_field(g, &bumps);
        let peak = raw.max_norm();
        let mut scale = if peak > 0.0 { spec.max_magnitude / peak } else { 0.0 };
        let slope_budget: f64 = bumps
            .iter()
            .map(|b| {
                let norm: f64 = b.amplitude.iter().map(|c| c * c).sum::<f64>().sqrt();
                norm * (-0.5f64).exp() / b.sigma
            })
            .sum();
        if slope_budget * scale > 0.9 {
            scale = 0.9 / slope_budget;
        }
        for b in &mut bumps {
            for a in 0..3 {
                b.amplitude[a] *= scale;
            }
        }
        bump_field(g, &bumps)
    } else {
        DisplacementField::zeros(g)
    };
    debug_assert_eq!(rfp(&generation), 0.0);

    let mut texture = smooth_texture(&mut rng, g, spec.texture_amplitude, 8.0);
    let fine_octave = smooth_texture(&mut rng, g, 0.6 * spec.texture_amplitude, 4.0);
    for (t, f) in texture.data_mut().iter_mut().zip(fine_octave.data()) {
        *t += f;
    }
    let (bright, faint) = spec.vessel_contrast;
    let paint = |bright_mask: &LabelMask, faint_mask: &LabelMask| -> ScalarVolume {
        let mut vol = ScalarVolume::zeros(g);
        for i in 0..g.voxel_count() {
            let p = g.coords(i);
            let v = if bright_mask.data()[i] {
                bright
            } else if faint_mask.data()[i] {
                faint
            } else if liver.data()[i] {
                0.55 + texture.data()[i]
            } else {
                0.25 + texture.data()[i]
            };
            vol.set(p[0], p[1], p[2], v);
        }
        vol
    };
    let pre_fixed = paint(&vein, &artery);
    let pre_moving = paint(&artery, &vein);

    let moving = warp_scalar(&pre_moving, &generation)?;
    let moving_liver = warp_mask(&liver, &generation)?;
    let moving_artery = warp_mask(&artery, &generation)?;
    let inverse = invert_field(&generation, 60, 1e-10);
    let truth = inverse.field;

    Ok(PhantomPair {
        fixed: pre_fixed,
        moving,
        fixed_liver: liver,
        moving_liver,
        fixed_vein: vein,
        moving_artery,
        truth,
    })
}

/// Mean, median, and max endpoint error in voxels between two fields,
/// restricted to the region of interest.
pub fn ground_truth_error(
    recovered: &DisplacementField,
    truth: &DisplacementField,
    roi: &LabelMask,
) -> Result<(f64, f64, f64)> {
    ensure_same_grid(recovered.geometry(), truth.geometry(), "ground_truth_error")?;
    ensure_same_grid(recovered.geometry(), roi.geometry(), "ground_truth_error roi")?;
    let mut errors: Vec<f64> = roi
        .data()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .map(|(i, _)| {
            let r = recovered.vectors()[i];
            let t = truth.vectors()[i];
            (0..3).map(|a| (r[a] - t[a]).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    if errors.is_empty() {
        return Err(Error::EmptyMask("ground_truth_error roi".into()));
    }
    errors.sort_by(|a, b| a.total_cmp(b));
    let n = errors.len();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        errors[n / 2]
    } else {
        0.5 * (errors[n / 2 - 1] + errors[n / 2])
    };
    Ok((mean, median, errors[n - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::connected_regions;
    use approx::assert_relative_eq;

    fn small_spec(seed: u64) -> PhantomSpec {
        PhantomSpec {
            dims: [32, 32, 32],
            bump_sigma: 7.0,
            max_magnitude: 2.0,
            seed,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec(42);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.fixed.data(), b.fixed.data());
        assert_eq!(a.moving.data(), b.moving.data());
        assert_eq!(a.moving_artery.data(), b.moving_artery.data());
        assert_eq!(a.truth.vectors(), b.truth.vectors());
    }

    #[test]
    fn zero_magnitude_yields_identical_geometry() {
        let spec = PhantomSpec {
            max_magnitude: 0.0,
            ..small_spec(7)
        };
        let pair = generate(&spec).unwrap();
        assert!(pair.truth.vectors().iter().all(|v| *v == [0.0; 3]));
        assert_eq!(pair.fixed_liver.data(), pair.moving_liver.data());
        // Same anatomy, different contrast: vessels differ, tissue matches.
        let g = pair.fixed.geometry();
        for i in 0..g.voxel_count() {
            if !pair.moving_artery.data()[i] && !pair.fixed_vein.data()[i] {
                assert_eq!(pair.fixed.data()[i], pair.moving.data()[i]);
            }
        }
    }

    #[test]
    fn default_spec_satisfies_its_invariants() {
        let pair = generate(&PhantomSpec::default()).unwrap();
        assert_eq!(rfp(&pair.truth), 0.0);
        assert!(pair.moving_artery.data().iter().any(|v| *v));
        assert!(pair.fixed_vein.data().iter().any(|v| *v));
        // Warping the artery back onto the fixed grid with the truth field
        // restores the generation-space separation, so a perfect
        // registration scores zero vessel overlap.
        let restored = warp_mask(&pair.moving_artery, &pair.truth).unwrap();
        let overlap = restored
            .data()
            .iter()
            .zip(pair.fixed_vein.data())
            .filter(|(a, v)| **a && **v)
            .count();
        assert_eq!(overlap, 0, "truth-aligned vessel classes must not overlap");
    }

    /// All-pairs separation check, independent of the EDT.
    fn brute_min_separation(a: &LabelMask, b: &LabelMask) -> f64 {
        let g = a.geometry();
        let pa: Vec<[usize; 3]> = a
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| g.coords(i))
            .collect();
        let pb: Vec<[usize; 3]> = b
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| g.coords(i))
            .collect();
        let mut best = f64::INFINITY;
        for p in &pa {
            for q in &pb {
                let d: f64 = (0..3)
                    .map(|c| ((p[c] as f64 - q[c] as f64) * g.spacing[c]).powi(2))
                    .sum();
                best = best.min(d);
            }
        }
        best.sqrt()
    }

    #[test]
    fn generation_space_clearance_is_enforced() {
        let spec = small_spec(3);
        // Regenerate the unwarped trees through the public surface: with
        // zero deformation the emitted masks are the generation-space ones.
        let frozen = PhantomSpec {
            max_magnitude: 0.0,
            ..spec.clone()
        };
        let pair = generate(&frozen).unwrap();
        let sep = brute_min_separation(&pair.moving_artery, &pair.fixed_vein);
        assert!(
            sep >= frozen.clearance_mm,
            "separation {sep} below clearance {}",
            frozen.clearance_mm
        );
    }

    #[test]
    fn liver_masks_are_linked_by_the_truth_field() {
        let pair = generate(&small_spec(11)).unwrap();
        let back = warp_mask(&pair.moving_liver, &pair.truth).unwrap();
        let g = back.geometry();
        let fixed = pair.fixed_liver.data();
        let mut disagreements = 0usize;
        for i in 0..g.voxel_count() {
            if back.data()[i] == fixed[i] {
                continue;
            }
            disagreements += 1;
            // Every disagreement must hug the mask boundary (double
            // nearest-neighbor rounding shifts it by at most one voxel).
            let p = g.coords(i).map(|v| v as i64);
            let mut near_boundary = false;
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (x, y, z) = (p[0] + dx, p[1] + dy, p[2] + dz);
                        if x < 0
                            || y < 0
                            || z < 0
                            || x as usize >= g.dims[0]
                            || y as usize >= g.dims[1]
                            || z as usize >= g.dims[2]
                        {
                            continue;
                        }
                        if fixed[g.index(x as usize, y as usize, z as usize)] != fixed[i] {
                            near_boundary = true;
                        }
                    }
                }
            }
            assert!(near_boundary, "interior disagreement at {:?}", g.coords(i));
        }
        let liver_volume = fixed.iter().filter(|v| **v).count();
        assert!(
            (disagreements as f64) < 0.05 * liver_volume as f64,
            "{disagreements} disagreements on a {liver_volume}-voxel liver"
        );
    }

    #[test]
    fn trees_are_connected_and_tubular() {
        let pair = generate(&PhantomSpec::default()).unwrap();
        assert_eq!(connected_regions(&pair.fixed_vein), 1);
        let artery_voxels = pair.moving_artery.data().iter().filter(|v| **v).count();
        let liver_voxels = pair.fixed_liver.data().iter().filter(|v| **v).count();
        assert!(artery_voxels > 50, "artery too small: {artery_voxels}");
        assert!(
            artery_voxels < liver_voxels / 10,
            "artery implausibly thick: {artery_voxels} of {liver_voxels}"
        );
    }

    #[test]
    fn truth_field_reaches_the_requested_magnitude() {
        let spec = small_spec(5);
        let pair = generate(&spec).unwrap();
        let peak = pair.truth.max_norm();
        // The truth is the inverse of the generation field, so its peak
        // matches the requested magnitude only approximately.
        assert!(peak > 0.6 * spec.max_magnitude, "peak {peak}");
        assert!(peak < 1.4 * spec.max_magnitude, "peak {peak}");
    }

    #[test]
    fn error_statistics_match_their_definition() {
        let g = GridGeometry::new([8, 8, 8], [1.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut truth = DisplacementField::zeros(g);
        for v in truth.vectors_mut() {
            for c in v.iter_mut() {
                *c = rng.random_range(-1.0..1.0);
            }
        }
        let roi_data: Vec<bool> = (0..g.voxel_count()).map(|_| rng.random_bool(0.5)).collect();
        let roi = LabelMask::from_vec(g, roi_data.clone()).unwrap();

        let (mean, median, max) = ground_truth_error(&truth, &truth, &roi).unwrap();
        assert_eq!((mean, median, max), (0.0, 0.0, 0.0));

        let mut shifted = truth.clone();
        for v in shifted.vectors_mut() {
            v[0] += 1.0;
        }
        let (mean, median, max) = ground_truth_error(&shifted, &truth, &roi).unwrap();
        assert_relative_eq!(mean, 1.0, epsilon = 1e-12);
        assert_relative_eq!(median, 1.0, epsilon = 1e-12);
        assert_relative_eq!(max, 1.0, epsilon = 1e-12);

        let mut recovered = truth.clone();
        for v in recovered.vectors_mut() {
            for c in v.iter_mut() {
                *c += rng.random_range(-0.5..0.5);
            }
        }
        let (mean, _, max) = ground_truth_error(&recovered, &truth, &roi).unwrap();
        let mut norms: Vec<f64> = roi_data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| {
                let r = recovered.vectors()[i];
                let t = truth.vectors()[i];
                (0..3).map(|a| (r[a] - t[a]).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        norms.sort_by(|a, b| a.total_cmp(b));
        let mean_oracle = norms.iter().sum::<f64>() / norms.len() as f64;
        assert_relative_eq!(mean, mean_oracle, epsilon = 1e-12);
        assert_eq!(max, *norms.last().unwrap());

        let empty = LabelMask::from_vec(g, vec![false; g.voxel_count()]).unwrap();
        assert!(ground_truth_error(&truth, &truth, &empty).is_err());
    }

    #[test]
    fn impossible_clearance_is_reported() {
        let spec = PhantomSpec {
            clearance_mm: 500.0,
            ..small_spec(1)
        };
        assert!(generate(&spec).is_err());
    }
}
