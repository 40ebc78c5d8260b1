//! Multiscale Hessian vesselness filtering for bright tubular structures.
//!
//! Per scale σ (millimeters): Gaussian-smooth the volume, form the Hessian
//! with physical-unit second differences, normalize by σ², and score each
//! voxel from the eigenvalues |λ1| ≤ |λ2| ≤ |λ3|:
//!
//! `V = (1 − exp(−RA²/2α²)) · exp(−RB²/2β²) · (1 − exp(−S²/2c²))`
//!
//! with `RA = |λ2|/|λ3|`, `RB = |λ1|/√(|λ2 λ3|)`, `S = √(Σ λᵢ²)`, and zero
//! response where λ2 > 0 or λ3 > 0 (bright polarity). The final output is
//! the maximum response over scales.

use crate::error::{Error, Result};
use crate::parallel;
use crate::volume::{GridGeometry, ScalarVolume};

/// Filter configuration; `c: None` selects half the per-scale maximum
/// Hessian Frobenius norm.
#[derive(Clone, Debug)]
pub struct FrangiParams {
    /// Tube scales in millimeters.
    pub scales: Vec<f64>,
    /// Plate-vs-line sensitivity.
    pub alpha: f64,
    /// Blob-vs-line sensitivity.
    pub beta: f64,
    /// Structureness scale; `None` selects it per scale from the data.
    pub c: Option<f64>,
}

impl Default for FrangiParams {
    fn default() -> Self {
        Self {
            scales: vec![1.0, 2.0, 3.0],
            alpha: 0.5,
            beta: 0.5,
            c: None,
        }
    }
}

/// Normalized 1-D Gaussian taps for a standard deviation in voxels.
fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_vox).ceil().max(1.0) as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in -(radius as i64)..=(radius as i64) {
        let t = i as f64 / sigma_vox;
        k.push((-0.5 * t * t).exp());
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian smoothing with replicate padding; σ is in
/// millimeters and converted per axis through the grid spacing.
pub fn gaussian_smooth(vol: &ScalarVolume, sigma_mm: f64) -> Result<ScalarVolume> {
    if !(sigma_mm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma_mm}"
        )));
    }
    let g = vol.geometry();
    let mut data = vol.data().to_vec();
    for axis in 0..3 {
        let kernel = gaussian_kernel(sigma_mm / g.spacing[axis]);
        data = convolve_axis(&data, g, axis, &kernel);
    }
    ScalarVolume::from_vec(g, data)
}

fn convolve_axis(data: &[f64], g: GridGeometry, axis: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as i64;
    let n = g.dims[axis] as i64;
    let mut out = vec![0.0; data.len()];
    parallel::fill_slots(&mut out, |i| {
        let p = g.coords(i);
        let mut acc = 0.0;
        for (t, &k) in kernel.iter().enumerate() {
            let off = t as i64 - radius;
            let mut q = [p[0] as i64, p[1] as i64, p[2] as i64];
            q[axis] = (q[axis] + off).clamp(0, n - 1);
            acc += k * data[g.index(q[0] as usize, q[1] as usize, q[2] as usize)];
        }
        acc
    });
    out
}

/// Eigenvalues of a symmetric 3x3 matrix via cyclic Jacobi rotations.
/// Input as `[a11, a22, a33, a12, a13, a23]`.
pub(crate) fn eigenvalues_symmetric3(m: [f64; 6]) -> [f64; 3] {
    let mut a = [
        [m[0], m[3], m[4]],
        [m[3], m[1], m[5]],
        [m[4], m[5], m[2]],
    ];
    let scale = m.iter().fold(0.0f64, |s, &v| s.max(v.abs())).max(1e-300);
    for _ in 0..64 {
        // Largest off-diagonal element.
        let (mut p, mut q, mut big) = (0usize, 1usize, a[0][1].abs());
        if a[0][2].abs() > big {
            p = 0;
            q = 2;
            big = a[0][2].abs();
        }
        if a[1][2].abs() > big {
            p = 1;
            q = 2;
            big = a[1][2].abs();
        }
        if big <= 1e-15 * scale {
            break;
        }
        let app = a[p][p];
        let aqq = a[q][q];
        let apq = a[p][q];
        let theta = (aqq - app) / (2.0 * apq);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..3 {
            let akp = a[k][p];
            let akq = a[k][q];
            a[k][p] = c * akp - s * akq;
            a[k][q] = s * akp + c * akq;
        }
        for k in 0..3 {
            let apk = a[p][k];
            let aqk = a[q][k];
            a[p][k] = c * apk - s * aqk;
            a[q][k] = s * apk + c * aqk;
        }
        a[p][q] = 0.0;
        a[q][p] = 0.0;
    }
    [a[0][0], a[1][1], a[2][2]]
}

/// Hessian of `smoothed` at linear index `i`, in 1/mm² units, as
/// `[hxx, hyy, hzz, hxy, hxz, hyz]`. Indices clamp at the grid faces.
fn hessian_at(smoothed: &[f64], g: GridGeometry, i: usize) -> [f64; 6] {
    let p = g.coords(i);
    let sp = g.spacing;
    let sample = |dx: i64, dy: i64, dz: i64| -> f64 {
        let x = (p[0] as i64 + dx).clamp(0, g.dims[0] as i64 - 1) as usize;
        let y = (p[1] as i64 + dy).clamp(0, g.dims[1] as i64 - 1) as usize;
        let z = (p[2] as i64 + dz).clamp(0, g.dims[2] as i64 - 1) as usize;
        smoothed[g.index(x, y, z)]
    };
    let center = smoothed[i];
    let hxx = (sample(1, 0, 0) - 2.0 * center + sample(-1, 0, 0)) / (sp[0] * sp[0]);
    let hyy = (sample(0, 1, 0) - 2.0 * center + sample(0, -1, 0)) / (sp[1] * sp[1]);
    let hzz = (sample(0, 0, 1) - 2.0 * center + sample(0, 0, -1)) / (sp[2] * sp[2]);
    let hxy = (sample(1, 1, 0) - sample(1, -1, 0) - sample(-1, 1, 0) + sample(-1, -1, 0))
        / (4.0 * sp[0] * sp[1]);
    let hxz = (sample(1, 0, 1) - sample(1, 0, -1) - sample(-1, 0, 1) + sample(-1, 0, -1))
        / (4.0 * sp[0] * sp[2]);
    let hyz = (sample(0, 1, 1) - sample(0, 1, -1) - sample(0, -1, 1) + sample(0, -1, -1))
        / (4.0 * sp[1] * sp[2]);
    [hxx, hyy, hzz, hxy, hxz, hyz]
}

/// Multiscale Frangi vesselness of a volume; response in [0, 1).
pub fn frangi_vesselness(vol: &ScalarVolume, params: &FrangiParams) -> Result<ScalarVolume> {
    if params.scales.is_empty() {
        return Err(Error::InvalidParameter("frangi scales must be non-empty".into()));
    }
    if params.scales.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "frangi scales must be positive, got {:?}",
            params.scales
        )));
    }
    if !(params.alpha > 0.0) || !(params.beta > 0.0) {
        return Err(Error::InvalidParameter(
            "frangi alpha and beta must be positive".into(),
        ));
    }
    let g = vol.geometry();
    let n = g.voxel_count();
    let mut best = vec![0.0f64; n];
    for &sigma in &params.scales {
        let smoothed = gaussian_smooth(vol, sigma)?;
        // σ²-normalized eigenvalues, sorted by magnitude.
        let mut eigs = vec![[0.0f64; 3]; n];
        let sm = smoothed.data();
        parallel::fill_slots(&mut eigs, |i| {
            let mut h = hessian_at(sm, g, i);
            for v in &mut h {
                *v *= sigma * sigma;
            }
            let mut lam = eigenvalues_symmetric3(h);
            lam.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
            lam
        });
        let c = match params.c {
            Some(c) => c,
            None => {
                let max_s2 = eigs
                    .iter()
                    .map(|l| l[0] * l[0] + l[1] * l[1] + l[2] * l[2])
                    .fold(0.0, f64::max);
                0.5 * max_s2.sqrt()
            }
        };
        if !(c > 0.0) {
            // No structure anywhere at this scale.
            continue;
        }
        let alpha2 = 2.0 * params.alpha * params.alpha;
        let beta2 = 2.0 * params.beta * params.beta;
        let c2 = 2.0 * c * c;
        parallel::update_slots(&mut best, |i, out| {
            let [l1, l2, l3] = eigs[i];
            if l2 > 0.0 || l3 > 0.0 || l3.abs() < 1e-12 {
                return;
            }
            let ra = l2.abs() / l3.abs();
            let rb = l1.abs() / (l2.abs() * l3.abs()).sqrt();
            let s2 = l1 * l1 + l2 * l2 + l3 * l3;
            let v = (1.0 - (-ra * ra / alpha2).exp())
                * (-rb * rb / beta2).exp()
                * (1.0 - (-s2 / c2).exp());
            if v > *out {
                *out = v;
            }
        });
    }
    ScalarVolume::from_vec(g, best)
}
