//! Squared normalized cross-correlation similarity loss.
//!
//! For each voxel p, statistics are gathered over a cubic window (clipped at
//! the grid) and the local squared correlation is
//!
//! `cc(p) = cross² / (varF · varW + ε)`
//!
//! with `cross = Σ(F−μF)(W−μW)`, the variances defined analogously, and
//! ε = 1e-9 guarding constant windows. The loss is `−mean_p cc(p)`; its
//! gradient with respect to every warped value is exact. Window 0 selects a
//! single global window.

use crate::error::{Error, Result};
use crate::parallel;
use crate::volume::{ensure_same_grid, GridGeometry, ScalarVolume};

const EPS: f64 = 1e-9;

/// Sliding clipped-window sum along one axis, prefix-sum based.
fn box_sum_axis(data: &[f64], g: GridGeometry, axis: usize, radius: usize) -> Vec<f64> {
    let n = g.dims[axis];
    let mut out = vec![0.0; data.len()];
    let (a1, a2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut prefix = vec![0.0; n + 1];
    for i2 in 0..g.dims[a2] {
        for i1 in 0..g.dims[a1] {
            let mut p = [0usize; 3];
            p[a1] = i1;
            p[a2] = i2;
            let idx = |k: usize, p: &mut [usize; 3]| {
                p[axis] = k;
                g.index(p[0], p[1], p[2])
            };
            for k in 0..n {
                prefix[k + 1] = prefix[k] + data[idx(k, &mut p)];
            }
            for k in 0..n {
                let lo = k.saturating_sub(radius);
                let hi = (k + radius).min(n - 1);
                out[idx(k, &mut p)] = prefix[hi + 1] - prefix[lo];
            }
        }
    }
    out
}

/// Sum of `data` over the clipped cubic window of the given radius around
/// every voxel.
fn box_sum(data: &[f64], g: GridGeometry, radius: usize) -> Vec<f64> {
    let x = box_sum_axis(data, g, 0, radius);
    let y = box_sum_axis(&x, g, 1, radius);
    box_sum_axis(&y, g, 2, radius)
}

/// Number of in-grid voxels in the clipped window around voxel `i`.
fn window_count(g: GridGeometry, i: usize, radius: usize) -> f64 {
    let p = g.coords(i);
    let mut count = 1.0;
    for a in 0..3 {
        let lo = p[a].saturating_sub(radius);
        let hi = (p[a] + radius).min(g.dims[a] - 1);
        count *= (hi - lo + 1) as f64;
    }
    count
}

/// Loss `-mean cc` and its exact gradient with respect to the warped
/// values. `window` is the cubic window edge length (odd), or 0 for one
/// global window.
pub fn ncc_loss(
    fixed: &ScalarVolume,
    warped: &ScalarVolume,
    window: usize,
) -> Result<(f64, Vec<f64>)> {
    ensure_same_grid(fixed.geometry(), warped.geometry(), "ncc_loss")?;
    if window == 0 {
        return global_ncc(fixed, warped);
    }
    if window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "ncc window must be odd or 0, got {window}"
        )));
    }
    let radius = (window - 1) / 2;
    let g = fixed.geometry();
    let n_total = g.voxel_count();
    let f = fixed.data();
    let w = warped.data();

    let ff: Vec<f64> = f.iter().map(|v| v * v).collect();
    let ww: Vec<f64> = w.iter().map(|v| v * v).collect();
    let fw: Vec<f64> = f.iter().zip(w).map(|(a, b)| a * b).collect();
    let s_f = box_sum(f, g, radius);
    let s_w = box_sum(w, g, radius);
    let s_ff = box_sum(&ff, g, radius);
    let s_ww = box_sum(&ww, g, radius);
    let s_fw = box_sum(&fw, g, radius);

    // Per-center coefficients of the gradient gather:
    // dcc/dW_j = A(p)(F_j - muF(p)) - B(p)(W_j - muW(p)) for j in the window
    // of p, so the gradient at j collects A, A*muF, B, B*muW over the
    // windows centered within radius of j.
    let mut coef = vec![[0.0f64; 4]; n_total];
    let loss_sum = {
        let coef_ref = &mut coef;
        parallel::update_slots(coef_ref, |i, c| {
            let n = window_count(g, i, radius);
            let mu_f = s_f[i] / n;
            let mu_w = s_w[i] / n;
            let cross = s_fw[i] - s_f[i] * s_w[i] / n;
            let var_f = (s_ff[i] - s_f[i] * s_f[i] / n).max(0.0);
            let var_w = (s_ww[i] - s_w[i] * s_w[i] / n).max(0.0);
            let den = var_f * var_w + EPS;
            let a = 2.0 * cross / den;
            let b = 2.0 * cross * cross * var_f / (den * den);
            *c = [a, a * mu_f, b, b * mu_w];
        });
        parallel::sum_chunked(n_total, |i| {
            let n = window_count(g, i, radius);
            let cross = s_fw[i] - s_f[i] * s_w[i] / n;
            let var_f = (s_ff[i] - s_f[i] * s_f[i] / n).max(0.0);
            let var_w = (s_ww[i] - s_w[i] * s_w[i] / n).max(0.0);
            cross * cross / (var_f * var_w + EPS)
        })
    };

    let a_vals: Vec<f64> = coef.iter().map(|c| c[0]).collect();
    let amu: Vec<f64> = coef.iter().map(|c| c[1]).collect();
    let b_vals: Vec<f64> = coef.iter().map(|c| c[2]).collect();
    let bmu: Vec<f64> = coef.iter().map(|c| c[3]).collect();
    let box_a = box_sum(&a_vals, g, radius);
    let box_amu = box_sum(&amu, g, radius);
    let box_b = box_sum(&b_vals, g, radius);
    let box_bmu = box_sum(&bmu, g, radius);

    let inv_n = 1.0 / n_total as f64;
    let mut grad = vec![0.0; n_total];
    parallel::fill_slots(&mut grad, |j| {
        -inv_n * (f[j] * box_a[j] - box_amu[j] - w[j] * box_b[j] + box_bmu[j])
    });
    Ok((-loss_sum * inv_n, grad))
}

fn global_ncc(fixed: &ScalarVolume, warped: &ScalarVolume) -> Result<(f64, Vec<f64>)> {
    let n = fixed.data().len() as f64;
    let f = fixed.data();
    let w = warped.data();
    let sum_f = parallel::sum_chunked(f.len(), |i| f[i]);
    let sum_w = parallel::sum_chunked(f.len(), |i| w[i]);
    let mu_f = sum_f / n;
    let mu_w = sum_w / n;
    let cross = parallel::sum_chunked(f.len(), |i| (f[i] - mu_f) * (w[i] - mu_w));
    let var_f = parallel::sum_chunked(f.len(), |i| (f[i] - mu_f) * (f[i] - mu_f)).max(0.0);
    let var_w = parallel::sum_chunked(f.len(), |i| (w[i] - mu_w) * (w[i] - mu_w)).max(0.0);
    let den = var_f * var_w + EPS;
    let cc = cross * cross / den;
    let a = 2.0 * cross / den;
    let b = 2.0 * cross * cross * var_f / (den * den);
    let mut grad = vec![0.0; f.len()];
    parallel::fill_slots(&mut grad, |j| {
        -(a * (f[j] - mu_f) - b * (w[j] - mu_w))
    });
    Ok((-cc, grad))
}
