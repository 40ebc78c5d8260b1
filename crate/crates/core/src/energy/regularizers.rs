//! Field regularizers: global smoothness plus structure-anchored terms.
//!
//! The smoothness term sums squared forward differences of the field over
//! the whole grid. The structure terms instead sum, at selected voxels, the
//! squared directional gradients along the 13 unique directions of the
//! 26-neighborhood, each normalized by its physical step length. Surface
//! voxels enter uniformly; centerline voxels carry `exp(-distance)` weights,
//! so thin peripheral branches are held more rigidly than thick trunks.

use crate::error::{Error, Result};
use crate::field::DisplacementField;
use crate::structures::{VoxelSet, WeightedCenterline};
use crate::volume::GridGeometry;

/// The 13 forward representatives of the 26-neighborhood directions:
/// 3 axis-aligned, 6 face diagonals, 4 body diagonals.
pub(crate) const DIRECTIONS: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

/// Sum of squared forward differences of every field component along every
/// axis, in voxel units, with its gradient.
pub fn smoothness(field: &DisplacementField) -> (f64, Vec<[f64; 3]>) {
    let g = field.geometry();
    let u = field.vectors();
    let [nx, ny, nz] = g.dims;
    let mut value = 0.0;
    let mut grad = vec![[0.0; 3]; u.len()];
    let strides = [1, nx, nx * ny];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = g.index(x, y, z);
                let p = [x, y, z];
                for axis in 0..3 {
                    if p[axis] + 1 >= g.dims[axis] {
                        continue;
                    }
                    let j = i + strides[axis];
                    for c in 0..3 {
                        let d = u[j][c] - u[i][c];
                        value += d * d;
                        grad[j][c] += 2.0 * d;
                        grad[i][c] -= 2.0 * d;
                    }
                }
            }
        }
    }
    (value, grad)
}

fn step_lengths_sq(g: GridGeometry) -> [f64; 13] {
    let mut out = [0.0; 13];
    for (k, d) in DIRECTIONS.iter().enumerate() {
        out[k] = (0..3)
            .map(|a| (d[a] as f64 * g.spacing[a]).powi(2))
            .sum();
    }
    out
}

/// Shared kernel: per-point sums of `|u(p+m) - u(p)|² / |m|²` over the 13
/// directions, a weighted total, and the gradient of that total.
fn directional_core(
    field: &DisplacementField,
    points: &[usize],
    weights: Option<&[f64]>,
) -> (Vec<f64>, f64, Vec<[f64; 3]>) {
    let g = field.geometry();
    let u = field.vectors();
    let len_sq = step_lengths_sq(g);
    let mut per_point = vec![0.0; points.len()];
    let mut total = 0.0;
    let mut grad = vec![[0.0; 3]; u.len()];
    for (k, &i) in points.iter().enumerate() {
        let p = g.coords(i);
        let w = weights.map_or(1.0, |ws| ws[k]);
        let mut v = 0.0;
        for (di, m) in DIRECTIONS.iter().enumerate() {
            let mut q = [0i64; 3];
            let mut inside = true;
            for a in 0..3 {
                q[a] = p[a] as i64 + m[a];
                inside &= q[a] >= 0 && (q[a] as usize) < g.dims[a];
            }
            if !inside {
                continue;
            }
            let j = g.index(q[0] as usize, q[1] as usize, q[2] as usize);
            let inv = 1.0 / len_sq[di];
            for c in 0..3 {
                let d = u[j][c] - u[i][c];
                v += d * d * inv;
                grad[j][c] += 2.0 * w * d * inv;
                grad[i][c] -= 2.0 * w * d * inv;
            }
        }
        per_point[k] = v;
        total += w * v;
    }
    (per_point, total, grad)
}

/// Squared directional gradients of the field at each listed voxel, plus the
/// gradient of their unweighted sum.
pub fn directional_gradient_sq(
    field: &DisplacementField,
    points: &VoxelSet,
) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    if points.geometry() != field.geometry() {
        return Err(Error::GridMismatch(
            "directional_gradient_sq: point set grid differs from field grid".into(),
        ));
    }
    let (per_point, _, grad) = directional_core(field, points.linear_indices(), None);
    Ok((per_point, grad))
}

/// Uniform directional-gradient penalty over a surface voxel set.
pub fn surface_constraint(
    field: &DisplacementField,
    surface: &VoxelSet,
) -> Result<(f64, Vec<[f64; 3]>)> {
    if surface.geometry() != field.geometry() {
        return Err(Error::GridMismatch(
            "surface_constraint: surface grid differs from field grid".into(),
        ));
    }
    let (_, total, grad) = directional_core(field, surface.linear_indices(), None);
    Ok((total, grad))
}

/// Confidence-weighted directional-gradient penalty over a centerline.
pub fn centerline_constraint(
    field: &DisplacementField,
    centerline: &WeightedCenterline,
) -> Result<(f64, Vec<[f64; 3]>)> {
    if centerline.points().geometry() != field.geometry() {
        return Err(Error::GridMismatch(
            "centerline_constraint: centerline grid differs from field grid".into(),
        ));
    }
    let (_, total, grad) = directional_core(
        field,
        centerline.points().linear_indices(),
        Some(centerline.weights()),
    );
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{centerline_weights, distance_map};
    use crate::volume::LabelMask;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn geom(dims: [usize; 3]) -> GridGeometry {
        GridGeometry::new(dims, [1.0; 3]).unwrap()
    }

    fn random_field(g: GridGeometry, seed: u64) -> DisplacementField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = DisplacementField::zeros(g);
        for v in field.vectors_mut() {
            for c in v.iter_mut() {
                *c = rng.random_range(-0.5..0.5);
            }
        }
        field
    }

    #[test]
    fn constant_fields_cost_nothing() {
        let g = geom([4, 5, 4]);
        let mut field = DisplacementField::zeros(g);
        assert_eq!(smoothness(&field).0, 0.0);
        for v in field.vectors_mut() {
            *v = [1.25, -0.5, 3.0];
        }
        let (value, grad) = smoothness(&field);
        assert_eq!(value, 0.0);
        assert!(grad.iter().all(|v| *v == [0.0; 3]));

        let points = VoxelSet::from_points(g, [[1, 1, 1], [2, 3, 2]]).unwrap();
        let (per_point, grad) = directional_gradient_sq(&field, &points).unwrap();
        assert!(per_point.iter().all(|v| *v == 0.0));
        assert!(grad.iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn linear_ramp_has_known_smoothness() {
        // u_x = x on a 3x3x3 grid: 18 unit x-differences, nothing else.
        let g = geom([3, 3, 3]);
        let mut field = DisplacementField::zeros(g);
        for (i, v) in field.vectors_mut().iter_mut().enumerate() {
            v[0] = g.coords(i)[0] as f64;
        }
        let (value, _) = smoothness(&field);
        assert_relative_eq!(value, 18.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothness_gradient_matches_finite_differences() {
        let g = geom([4, 4, 4]);
        let mut field = random_field(g, 1);
        let (_, grad) = smoothness(&field);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-5;
        for _ in 0..40 {
            let j = rng.random_range(0..grad.len());
            let axis = rng.random_range(0..3);
            let orig = field.vectors()[j][axis];
            field.vectors_mut()[j][axis] = orig + h;
            let up = smoothness(&field).0;
            field.vectors_mut()[j][axis] = orig - h;
            let dn = smoothness(&field).0;
            field.vectors_mut()[j][axis] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = grad[j][axis];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(((an - fd) / denom).abs() < 1e-4);
        }
    }

    #[test]
    fn single_diagonal_jump_contributes_half() {
        // u differs by one voxel only at p + (1,1,0); the face diagonal has
        // squared length 2, so the point's directional sum is 1/2.
        let g = geom([4, 4, 4]);
        let mut field = DisplacementField::zeros(g);
        let p = [1usize, 1, 1];
        field.vectors_mut()[g.index(2, 2, 1)][0] = 1.0;
        let points = VoxelSet::from_points(g, [p]).unwrap();
        let (per_point, _) = directional_gradient_sq(&field, &points).unwrap();
        assert_relative_eq!(per_point[0], 0.5, epsilon = 1e-12);
    }

    /// Direction-by-direction enumeration over the full 26-neighborhood,
    /// visiting each unordered pair once.
    fn brute_directional(
        field: &DisplacementField,
        points: &[usize],
        weights: Option<&[f64]>,
    ) -> (Vec<f64>, f64) {
        let g = field.geometry();
        let u = field.vectors();
        let mut per_point = vec![0.0; points.len()];
        let mut total = 0.0;
        for (k, &i) in points.iter().enumerate() {
            let p = g.coords(i).map(|v| v as i64);
            let mut v = 0.0;
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        // Keep one representative per +/- pair, skip zero.
                        if (dx, dy, dz) <= (-dx, -dy, -dz) {
                            continue;
                        }
                        let q = [p[0] + dx, p[1] + dy, p[2] + dz];
                        if q.iter().zip(g.dims).any(|(c, n)| *c < 0 || *c as usize >= n) {
                            continue;
                        }
                        let j = g.index(q[0] as usize, q[1] as usize, q[2] as usize);
                        let len_sq: f64 = [dx, dy, dz]
                            .iter()
                            .zip(g.spacing)
                            .map(|(m, s)| (*m as f64 * s).powi(2))
                            .sum();
                        for c in 0..3 {
                            let d = u[j][c] - u[i][c];
                            v += d * d / len_sq;
                        }
                    }
                }
            }
            per_point[k] = v;
            total += weights.map_or(1.0, |w| w[k]) * v;
        }
        (per_point, total)
    }

    #[test]
    fn directional_sum_matches_brute_force() {
        let g = GridGeometry::new([5, 4, 6], [0.8, 1.0, 1.6]).unwrap();
        let field = random_field(g, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points: Vec<[usize; 3]> = (0..15)
            .map(|_| {
                [
                    rng.random_range(0..5),
                    rng.random_range(0..4),
                    rng.random_range(0..6),
                ]
            })
            .collect();
        let set = VoxelSet::from_points(g, points).unwrap();
        let (per_point, _) = directional_gradient_sq(&field, &set).unwrap();
        let (expected, total) = brute_directional(&field, set.linear_indices(), None);
        for (a, b) in per_point.iter().zip(&expected) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let (value, _) = surface_constraint(&field, &set).unwrap();
        assert_relative_eq!(value, total, epsilon = 1e-12);
    }

    #[test]
    fn axis_relabeling_preserves_the_sum() {
        // Over the full grid the term is a sum over unordered 26-adjacent
        // pairs, so with isotropic spacing it is invariant under axis
        // relabeling of both field and components.
        let g = geom([4, 4, 4]);
        let field = random_field(g, 5);
        let mut swapped = DisplacementField::zeros(g);
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let v = field.vectors()[g.index(x, y, z)];
                    swapped.vectors_mut()[g.index(y, x, z)] = [v[1], v[0], v[2]];
                }
            }
        }
        let all: Vec<[usize; 3]> = (0..g.voxel_count()).map(|i| g.coords(i)).collect();
        let set = VoxelSet::from_points(g, all).unwrap();
        let (a, _) = surface_constraint(&field, &set).unwrap();
        let (b, _) = surface_constraint(&swapped, &set).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-10);
    }

    #[test]
    fn surface_gradient_matches_finite_differences() {
        let g = GridGeometry::new([4, 5, 4], [1.0, 0.7, 1.3]).unwrap();
        let mut field = random_field(g, 6);
        let points = VoxelSet::from_points(g, [[0, 0, 0], [1, 2, 1], [3, 4, 3], [2, 2, 2]]).unwrap();
        let (_, grad) = surface_constraint(&field, &points).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..40 {
            let j = rng.random_range(0..grad.len());
            let axis = rng.random_range(0..3);
            let orig = field.vectors()[j][axis];
            field.vectors_mut()[j][axis] = orig + h;
            let up = surface_constraint(&field, &points).unwrap().0;
            field.vectors_mut()[j][axis] = orig - h;
            let dn = surface_constraint(&field, &points).unwrap().0;
            field.vectors_mut()[j][axis] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = grad[j][axis];
            if an.abs() < 1e-12 && fd.abs() < 1e-7 {
                continue;
            }
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(((an - fd) / denom).abs() < 1e-4);
        }
    }

    #[test]
    fn centerline_term_applies_confidence_weights() {
        let g = geom([7, 7, 7]);
        // A thick slab gives interior depths > 1, so weights differ between
        // a deep voxel and a shallow one.
        let mut mask = vec![false; g.voxel_count()];
        for z in 0..7 {
            for y in 0..7 {
                for x in 0..7 {
                    mask[g.index(x, y, z)] = z < 5;
                }
            }
        }
        let mask = LabelMask::from_vec(g, mask).unwrap();
        let dm = distance_map(&mask);
        let deep = [3usize, 3, 2];
        let shallow = [3usize, 3, 4];
        let points = VoxelSet::from_points(g, [deep, shallow]).unwrap();
        let wc = centerline_weights(&points, &dm).unwrap();
        let field = random_field(g, 8);
        let (value, _) = centerline_constraint(&field, &wc).unwrap();
        let (per_point, _) = directional_gradient_sq(&field, &points).unwrap();
        let expected: f64 = wc
            .weights()
            .iter()
            .zip(&per_point)
            .map(|(w, v)| w * v)
            .sum();
        assert_relative_eq!(value, expected, epsilon = 1e-12);
        assert!(wc.weights()[0] < wc.weights()[1]);
    }

    #[test]
    fn centerline_gradient_matches_finite_differences() {
        let g = geom([5, 5, 5]);
        let points = VoxelSet::from_points(g, [[2, 2, 1], [2, 2, 2], [2, 2, 3]]).unwrap();
        let weights = vec![0.4, 1.0, 0.7];
        let wc = WeightedCenterline::new(points, weights).unwrap();
        let mut field = random_field(g, 9);
        let (_, grad) = centerline_constraint(&field, &wc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = 1e-5;
        for _ in 0..30 {
            let j = rng.random_range(0..grad.len());
            let axis = rng.random_range(0..3);
            let orig = field.vectors()[j][axis];
            field.vectors_mut()[j][axis] = orig + h;
            let up = centerline_constraint(&field, &wc).unwrap().0;
            field.vectors_mut()[j][axis] = orig - h;
            let dn = centerline_constraint(&field, &wc).unwrap().0;
            field.vectors_mut()[j][axis] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = grad[j][axis];
            if an.abs() < 1e-12 && fd.abs() < 1e-7 {
                continue;
            }
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(((an - fd) / denom).abs() < 1e-4);
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let g = geom([4, 4, 4]);
        let other = geom([5, 4, 4]);
        let field = DisplacementField::zeros(g);
        let points = VoxelSet::from_points(other, [[0, 0, 0]]).unwrap();
        assert!(directional_gradient_sq(&field, &points).is_err());
        assert!(surface_constraint(&field, &points).is_err());
    }
}
