//! Inverse-consistency coupling between the forward and backward fields.
//!
//! The residual at voxel p is `u_f(p) + u_b(p + u_f(p))`: following the
//! forward displacement and then the sampled backward displacement should
//! return to p. The loss is the mean squared residual norm, symmetrized over
//! both fields, with exact gradients for both (including the chain through
//! the trilinear sample of the opposite field).

use crate::error::Result;
use crate::field::DisplacementField;
use crate::volume::{ensure_same_grid, TrilinearCell};

fn one_direction(
    outer: &DisplacementField,
    inner: &DisplacementField,
    grad_outer: &mut [[f64; 3]],
    grad_inner: &mut [[f64; 3]],
) -> f64 {
    let g = outer.geometry();
    let u = outer.vectors();
    let v = inner.vectors();
    let inv_n = 1.0 / g.voxel_count() as f64;
    let mut sum = 0.0;
    for (i, ui) in u.iter().enumerate() {
        let p = g.coords(i);
        let x = [
            p[0] as f64 + ui[0],
            p[1] as f64 + ui[1],
            p[2] as f64 + ui[2],
        ];
        let cell = TrilinearCell::at(&g, x);
        let (s, jac) = cell.vector_and_jacobian(v);
        let r = [ui[0] + s[0], ui[1] + s[1], ui[2] + s[2]];
        sum += r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        for a in 0..3 {
            let chained: f64 = (0..3).map(|c| r[c] * jac[c][a]).sum();
            grad_outer[i][a] += 2.0 * inv_n * (r[a] + chained);
        }
        for corner in 0..8 {
            let j = cell.idx[corner];
            let w = 2.0 * inv_n * cell.w[corner];
            for c in 0..3 {
                grad_inner[j][c] += w * r[c];
            }
        }
    }
    sum * inv_n
}

/// Mean squared round-trip residual of both field compositions, with
/// gradients for the forward and backward fields.
pub fn inverse_consistency_loss(
    forward: &DisplacementField,
    backward: &DisplacementField,
) -> Result<(f64, Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    ensure_same_grid(
        forward.geometry(),
        backward.geometry(),
        "inverse_consistency_loss",
    )?;
    let n = forward.geometry().voxel_count();
    let mut grad_f = vec![[0.0; 3]; n];
    let mut grad_b = vec![[0.0; 3]; n];
    let value = one_direction(forward, backward, &mut grad_f, &mut grad_b)
        + one_direction(backward, forward, &mut grad_b, &mut grad_f);
    Ok((value, grad_f, grad_b))
}
