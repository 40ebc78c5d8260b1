//! Soft Dice overlap terms for segmentation guidance.
//!
//! `dice_soft` works on real-valued occupancy volumes so that masks stay
//! differentiable after trilinear warping. The liver term rewards overlap
//! (`overlap_loss = -dice`), the vessel term penalizes it
//! (`nonoverlap_loss = +dice`, used to keep warped arteries out of veins).
//! Both propagate gradients through the warp to the displacement field.

use crate::error::Result;
use crate::field::DisplacementField;
use crate::parallel;
use crate::volume::{ensure_same_grid, warp_scalar_with_grad, LabelMask, ScalarVolume};

const EPS: f64 = 1e-7;

/// Soft Dice `2·Σab / (Σa + Σb + ε)` with gradients for both inputs.
pub fn dice_soft(
    a: &ScalarVolume,
    b: &ScalarVolume,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    ensure_same_grid(a.geometry(), b.geometry(), "dice_soft")?;
    let av = a.data();
    let bv = b.data();
    let n = av.len();
    let inter = parallel::sum_chunked(n, |i| av[i] * bv[i]);
    let denom = parallel::sum_chunked(n, |i| av[i] + bv[i]) + EPS;
    let dice = 2.0 * inter / denom;
    let mut grad_a = vec![0.0; n];
    let mut grad_b = vec![0.0; n];
    parallel::fill_slots(&mut grad_a, |i| (2.0 * bv[i] - dice) / denom);
    parallel::fill_slots(&mut grad_b, |i| (2.0 * av[i] - dice) / denom);
    Ok((dice, grad_a, grad_b))
}

fn warped_dice(
    fixed_mask: &LabelMask,
    moving_mask: &LabelMask,
    field: &DisplacementField,
) -> Result<(f64, Vec<[f64; 3]>)> {
    let moving = moving_mask.to_scalar();
    let (warped, spatial) = warp_scalar_with_grad(&moving, field)?;
    let fixed = fixed_mask.to_scalar();
    let (dice, _, grad_warped) = dice_soft(&fixed, &warped)?;
    let mut grad = vec![[0.0; 3]; grad_warped.len()];
    parallel::update_slots(&mut grad, |i, g| {
        for axis in 0..3 {
            g[axis] = grad_warped[i] * spatial[i][axis];
        }
    });
    Ok((dice, grad))
}

/// `-dice(fixed, warp(moving))`: minimized when the warped mask covers the
/// fixed one. Gradient is with respect to the field.
pub fn overlap_loss(
    fixed_mask: &LabelMask,
    moving_mask: &LabelMask,
    field: &DisplacementField,
) -> Result<(f64, Vec<[f64; 3]>)> {
    let (dice, mut grad) = warped_dice(fixed_mask, moving_mask, field)?;
    for g in &mut grad {
        for axis in 0..3 {
            g[axis] = -g[axis];
        }
    }
    Ok((-dice, grad))
}

/// `+dice(fixed, warp(moving))`: minimized when the warped mask avoids the
/// fixed one. Gradient is with respect to the field.
pub fn nonoverlap_loss(
    fixed_mask: &LabelMask,
    moving_mask: &LabelMask,
    field: &DisplacementField,
) -> Result<(f64, Vec<[f64; 3]>)> {
    warped_dice(fixed_mask, moving_mask, field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridGeometry;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn geom(dims: [usize; 3]) -> GridGeometry {
        GridGeometry::new(dims, [1.0; 3]).unwrap()
    }

    fn ball_mask(dims: [usize; 3], center: [f64; 3], r: f64) -> LabelMask {
        let g = geom(dims);
        let mut data = vec![false; g.voxel_count()];
        for (i, v) in data.iter_mut().enumerate() {
            let p = g.coords(i);
            let d2: f64 = (0..3).map(|a| (p[a] as f64 - center[a]).powi(2)).sum();
            *v = d2 <= r * r;
        }
        LabelMask::from_vec(g, data).unwrap()
    }

    fn random_volume(dims: [usize; 3], seed: u64) -> ScalarVolume {
        let g = geom(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..g.voxel_count()).map(|_| rng.random_range(0.0..1.0)).collect();
        ScalarVolume::from_vec(g, data).unwrap()
    }

    fn random_field(dims: [usize; 3], seed: u64) -> DisplacementField {
        let g = geom(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = DisplacementField::zeros(g);
        for v in field.vectors_mut() {
            for c in v.iter_mut() {
                // Stay clear of integer sample positions so trilinear
                // interpolation is smooth around every probe.
                let mag = rng.random_range(0.1..0.45);
                *c = if rng.random_bool(0.5) { mag } else { -mag };
            }
        }
        field
    }

    #[test]
    fn identical_disjoint_and_half_overlap() {
        let g = geom([4, 4, 4]);
        let a = ball_mask([4, 4, 4], [1.0, 1.0, 1.0], 1.2).to_scalar();
        let (d, _, _) = dice_soft(&a, &a).unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-6);

        let mut b = vec![0.0; g.voxel_count()];
        let mut c = vec![0.0; g.voxel_count()];
        b[0] = 1.0;
        c[1] = 1.0;
        let b = ScalarVolume::from_vec(g, b).unwrap();
        let c = ScalarVolume::from_vec(g, c).unwrap();
        let (d, _, _) = dice_soft(&b, &c).unwrap();
        assert_relative_eq!(d, 0.0, epsilon = 1e-9);

        // |A| = |B| = 8, |A∩B| = 4 gives dice 2*4/16 = 0.5.
        let mut a8 = vec![0.0; g.voxel_count()];
        let mut b8 = vec![0.0; g.voxel_count()];
        for i in 0..8 {
            a8[i] = 1.0;
            b8[i + 4] = 1.0;
        }
        let a8 = ScalarVolume::from_vec(g, a8).unwrap();
        let b8 = ScalarVolume::from_vec(g, b8).unwrap();
        let (d, _, _) = dice_soft(&a8, &b8).unwrap();
        assert_relative_eq!(d, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn dice_is_symmetric() {
        let a = random_volume([5, 4, 5], 1);
        let b = random_volume([5, 4, 5], 2);
        let (dab, ga, gb) = dice_soft(&a, &b).unwrap();
        let (dba, gb2, ga2) = dice_soft(&b, &a).unwrap();
        assert_relative_eq!(dab, dba, epsilon = 1e-12);
        for i in 0..ga.len() {
            assert_relative_eq!(ga[i], ga2[i], epsilon = 1e-12);
            assert_relative_eq!(gb[i], gb2[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let a = random_volume([4, 5, 4], 3);
        let mut b = random_volume([4, 5, 4], 4);
        let (_, _, grad_b) = dice_soft(&a, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..40 {
            let j = rng.random_range(0..b.data().len());
            let orig = b.data()[j];
            b.data_mut()[j] = orig + h;
            let (up, _, _) = dice_soft(&a, &b).unwrap();
            b.data_mut()[j] = orig - h;
            let (dn, _, _) = dice_soft(&a, &b).unwrap();
            b.data_mut()[j] = orig;
            let fd = (up - dn) / (2.0 * h);
            let denom = grad_b[j].abs().max(fd.abs()).max(1e-10);
            assert!(((grad_b[j] - fd) / denom).abs() < 1e-4);
        }
    }

    #[test]
    fn overlap_extremes_under_zero_field() {
        let mask = ball_mask([8, 8, 8], [3.5, 3.5, 3.5], 2.5);
        let zero = DisplacementField::zeros(geom([8, 8, 8]));
        let (loss, _) = overlap_loss(&mask, &mask, &zero).unwrap();
        assert_relative_eq!(loss, -1.0, epsilon = 1e-6);

        let left = ball_mask([8, 8, 8], [1.5, 3.5, 3.5], 1.2);
        let right = ball_mask([8, 8, 8], [6.0, 3.5, 3.5], 1.2);
        let (loss, _) = nonoverlap_loss(&left, &right, &zero).unwrap();
        assert_relative_eq!(loss, 0.0, epsilon = 1e-9);
        let (loss, _) = nonoverlap_loss(&right, &right, &zero).unwrap();
        assert_relative_eq!(loss, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_field_nonoverlap_equals_hard_dice() {
        // With an identity warp the soft value reduces to the plain voxel
        // count formula.
        let a = ball_mask([9, 9, 9], [4.0, 4.0, 4.0], 2.6);
        let b = ball_mask([9, 9, 9], [5.5, 4.0, 4.0], 2.6);
        let zero = DisplacementField::zeros(geom([9, 9, 9]));
        let (loss, _) = nonoverlap_loss(&a, &b, &zero).unwrap();
        let na = a.data().iter().filter(|v| **v).count() as f64;
        let nb = b.data().iter().filter(|v| **v).count() as f64;
        let inter = a
            .data()
            .iter()
            .zip(b.data())
            .filter(|(x, y)| **x && **y)
            .count() as f64;
        assert_relative_eq!(loss, 2.0 * inter / (na + nb), epsilon = 1e-6);
    }

    #[test]
    fn field_gradient_matches_finite_differences() {
        let fixed = ball_mask([6, 6, 6], [2.5, 2.5, 2.5], 1.8);
        let moving = ball_mask([6, 6, 6], [3.1, 2.6, 2.4], 1.8);
        let mut field = random_field([6, 6, 6], 6);
        let (_, grad) = overlap_loss(&fixed, &moving, &field).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-3;
        let mut checked = 0;
        while checked < 30 {
            let j = rng.random_range(0..grad.len());
            let axis = rng.random_range(0..3);
            let orig = field.vectors()[j][axis];
            field.vectors_mut()[j][axis] = orig + h;
            let (up, _) = overlap_loss(&fixed, &moving, &field).unwrap();
            field.vectors_mut()[j][axis] = orig - h;
            let (dn, _) = overlap_loss(&fixed, &moving, &field).unwrap();
            field.vectors_mut()[j][axis] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = grad[j][axis];
            if an.abs() < 1e-10 && fd.abs() < 1e-10 {
                continue;
            }
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((an - fd) / denom).abs() < 1e-4,
                "voxel {j} axis {axis}: analytic {an} vs fd {fd}"
            );
            checked += 1;
        }
    }
}
