//! Regular-grid volumes, label masks, and trilinear sampling.
//!
//! Voxel data is stored x-fastest: `index(x, y, z) = x + nx*(y + ny*z)`.
//! Sampling clamps coordinates to the grid (clamp-to-edge), and all
//! coordinates are in voxel units; `GridGeometry::spacing` converts to
//! millimeters where physical lengths matter.

use crate::error::{Error, Result};
use crate::field::DisplacementField;
use crate::parallel;

/// Dimensions and physical voxel spacing of a regular grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    /// Grid extent in voxels, `[nx, ny, nz]`.
    pub dims: [usize; 3],
    /// Voxel spacing in millimeters, `[sx, sy, sz]`.
    pub spacing: [f64; 3],
}

impl GridGeometry {
    /// Creates a geometry, rejecting empty extents and nonpositive spacing.
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!(
                "dims must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        Ok(Self { dims, spacing })
    }

    /// Geometry with equal spacing along all axes.
    pub fn isotropic(dims: [usize; 3], spacing: f64) -> Result<Self> {
        Self::new(dims, [spacing; 3])
    }

    /// Total number of voxels.
    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Linear index of voxel `(x, y, z)`; x varies fastest.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Voxel coordinates of a linear index.
    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Whether signed voxel coordinates fall inside the grid.
    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }
}

pub(crate) fn ensure_same_grid(a: GridGeometry, b: GridGeometry, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!(
            "{what}: {:?}/{:?} vs {:?}/{:?}",
            a.dims, a.spacing, b.dims, b.spacing
        )));
    }
    Ok(())
}

/// Dense scalar volume with `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    geometry: GridGeometry,
    data: Vec<f64>,
}

impl ScalarVolume {
    /// All-zero volume on the given grid.
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            data: vec![0.0; geometry.voxel_count()],
            geometry,
        }
    }

    /// Wraps an existing buffer; its length must match the grid.
    pub fn from_vec(geometry: GridGeometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.voxel_count() {
            return Err(Error::InvalidGeometry(format!(
                "buffer length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geometry.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.geometry.index(x, y, z);
        self.data[i] = value;
    }

    /// Minimum and maximum sample, ignoring nothing; empty volumes cannot
    /// exist so the result is always defined.
    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Binary mask on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMask {
    geometry: GridGeometry,
    data: Vec<bool>,
}

impl LabelMask {
    /// All-background mask.
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            data: vec![false; geometry.voxel_count()],
            geometry,
        }
    }

    /// Wraps an existing buffer; its length must match the grid.
    pub fn from_vec(geometry: GridGeometry, data: Vec<bool>) -> Result<Self> {
        if data.len() != geometry.voxel_count() {
            return Err(Error::InvalidGeometry(format!(
                "buffer length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.geometry.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.geometry.index(x, y, z);
        self.data[i] = value;
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Mask as a 0/1-valued scalar volume.
    pub fn to_scalar(&self) -> ScalarVolume {
        ScalarVolume {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Thresholds a scalar volume at `>= 0.5` into a mask.
    pub fn from_scalar(vol: &ScalarVolume) -> Self {
        Self {
            geometry: vol.geometry,
            data: vol.data.iter().map(|&v| v >= 0.5).collect(),
        }
    }
}

/// Corner indices, interpolation weights, and weight derivatives for one
/// trilinear sample. `dw[a]` holds the derivative of each corner weight with
/// respect to coordinate `a`; it is zero along axes where the coordinate was
/// clamped outside the grid.
#[derive(Clone, Copy, Debug)]
pub(crate) struct TrilinearCell {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub dw: [[f64; 8]; 3],
}

impl TrilinearCell {
    pub fn at(geometry: &GridGeometry, p: [f64; 3]) -> Self {
        let mut i0 = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut gate = [0.0f64; 3];
        for a in 0..3 {
            let n = geometry.dims[a];
            let c = p[a];
            let hi = (n - 1) as f64;
            // Derivatives vanish where clamping makes the value constant.
            gate[a] = if c >= 0.0 && c <= hi && n > 1 { 1.0 } else { 0.0 };
            let cc = c.clamp(0.0, hi);
            if n == 1 {
                i0[a] = 0;
                frac[a] = 0.0;
            } else {
                // Snap the base corner into [0, n-2] so the upper corner is
                // always a real voxel; at cc = n-1 this yields frac = 1.
                let base = (cc.floor() as usize).min(n - 2);
                i0[a] = base;
                frac[a] = cc - base as f64;
            }
        }
        let w1 = [1.0 - frac[0], frac[0]];
        let w2 = [1.0 - frac[1], frac[1]];
        let w3 = [1.0 - frac[2], frac[2]];
        let d1 = [-gate[0], gate[0]];
        let d2 = [-gate[1], gate[1]];
        let d3 = [-gate[2], gate[2]];
        let mut cell = TrilinearCell {
            idx: [0; 8],
            w: [0.0; 8],
            dw: [[0.0; 8]; 3],
        };
        let nx = geometry.dims[0];
        let ny = geometry.dims[1];
        let step = |a: usize, b: usize| -> usize {
            if b == 1 && geometry.dims[a] > 1 {
                1
            } else {
                0
            }
        };
        let mut corner = 0;
        for bz in 0..2 {
            for by in 0..2 {
                for bx in 0..2 {
                    let x = i0[0] + step(0, bx);
                    let y = i0[1] + step(1, by);
                    let z = i0[2] + step(2, bz);
                    cell.idx[corner] = x + nx * (y + ny * z);
                    cell.w[corner] = w1[bx] * w2[by] * w3[bz];
                    cell.dw[0][corner] = d1[bx] * w2[by] * w3[bz];
                    cell.dw[1][corner] = w1[bx] * d2[by] * w3[bz];
                    cell.dw[2][corner] = w1[bx] * w2[by] * d3[bz];
                    corner += 1;
                }
            }
        }
        cell
    }

    /// Interpolated value from a scalar buffer.
    #[inline]
    pub fn value(&self, data: &[f64]) -> f64 {
        (0..8).map(|c| self.w[c] * data[self.idx[c]]).sum()
    }

    /// Interpolated value and its derivative with respect to the sample
    /// coordinates.
    #[inline]
    pub fn value_and_grad(&self, data: &[f64]) -> (f64, [f64; 3]) {
        let mut v = 0.0;
        let mut g = [0.0; 3];
        for c in 0..8 {
            let s = data[self.idx[c]];
            v += self.w[c] * s;
            g[0] += self.dw[0][c] * s;
            g[1] += self.dw[1][c] * s;
            g[2] += self.dw[2][c] * s;
        }
        (v, g)
    }

    /// Interpolated 3-vector from a vector buffer.
    #[inline]
    pub fn vector(&self, data: &[[f64; 3]]) -> [f64; 3] {
        let mut v = [0.0; 3];
        for c in 0..8 {
            let s = data[self.idx[c]];
            for a in 0..3 {
                v[a] += self.w[c] * s[a];
            }
        }
        v
    }

    /// Interpolated 3-vector plus its Jacobian with respect to the sample
    /// coordinates, `jac[c][a] = d v_c / d x_a`.
    #[inline]
    pub fn vector_and_jacobian(&self, data: &[[f64; 3]]) -> ([f64; 3], [[f64; 3]; 3]) {
        let mut v = [0.0; 3];
        let mut jac = [[0.0; 3]; 3];
        for corner in 0..8 {
            let s = data[self.idx[corner]];
            for c in 0..3 {
                v[c] += self.w[corner] * s[c];
                for a in 0..3 {
                    jac[c][a] += self.dw[a][corner] * s[c];
                }
            }
        }
        (v, jac)
    }
}

/// Trilinear sample of `vol` at voxel coordinates `p`, clamped to the grid.
pub fn sample_trilinear(vol: &ScalarVolume, p: [f64; 3]) -> f64 {
    TrilinearCell::at(&vol.geometry, p).value(&vol.data)
}

/// Warps `vol` by `field`: `out(p) = vol(p + u(p))`, sampled trilinearly.
pub fn warp_scalar(vol: &ScalarVolume, field: &DisplacementField) -> Result<ScalarVolume> {
    ensure_same_grid(vol.geometry, field.geometry(), "warp_scalar")?;
    let geometry = vol.geometry;
    let src = &vol.data;
    let u = field.vectors();
    let mut out = vec![0.0; geometry.voxel_count()];
    parallel::fill_slots(&mut out, |i| {
        let [x, y, z] = geometry.coords(i);
        let d = u[i];
        let p = [x as f64 + d[0], y as f64 + d[1], z as f64 + d[2]];
        TrilinearCell::at(&geometry, p).value(src)
    });
    ScalarVolume::from_vec(geometry, out)
}

/// Warps `vol` and also returns the spatial gradient of the interpolant at
/// each sample point, the term the chain rule needs to push energy gradients
/// from warped intensities onto the displacement field.
pub(crate) fn warp_scalar_with_grad(
    vol: &ScalarVolume,
    field: &DisplacementField,
) -> Result<(ScalarVolume, Vec<[f64; 3]>)> {
    ensure_same_grid(vol.geometry, field.geometry(), "warp_scalar_with_grad")?;
    let geometry = vol.geometry;
    let src = &vol.data;
    let u = field.vectors();
    let mut out = vec![(0.0, [0.0; 3]); geometry.voxel_count()];
    parallel::fill_slots(&mut out, |i| {
        let [x, y, z] = geometry.coords(i);
        let d = u[i];
        let p = [x as f64 + d[0], y as f64 + d[1], z as f64 + d[2]];
        TrilinearCell::at(&geometry, p).value_and_grad(src)
    });
    let mut values = Vec::with_capacity(out.len());
    let mut grads = Vec::with_capacity(out.len());
    for (v, g) in out {
        values.push(v);
        grads.push(g);
    }
    Ok((ScalarVolume::from_vec(geometry, values)?, grads))
}

/// Warps a mask by nearest-neighbor lookup: `out(p) = mask(round(p + u(p)))`
/// with the rounded point clamped to the grid.
pub fn warp_mask(mask: &LabelMask, field: &DisplacementField) -> Result<LabelMask> {
    ensure_same_grid(mask.geometry, field.geometry(), "warp_mask")?;
    let geometry = mask.geometry;
    let src = &mask.data;
    let u = field.vectors();
    let mut out = vec![false; geometry.voxel_count()];
    parallel::fill_slots(&mut out, |i| {
        let [x, y, z] = geometry.coords(i);
        let d = u[i];
        let mut q = [0usize; 3];
        let p = [x as f64 + d[0], y as f64 + d[1], z as f64 + d[2]];
        for a in 0..3 {
            let r = p[a].round().clamp(0.0, (geometry.dims[a] - 1) as f64);
            q[a] = r as usize;
        }
        src[geometry.index(q[0], q[1], q[2])]
    });
    LabelMask::from_vec(geometry, out)
}

/// Warps a mask as a real-valued 0/1 volume with trilinear sampling; used by
/// the differentiable overlap terms.
pub fn warp_mask_soft(mask: &LabelMask, field: &DisplacementField) -> Result<ScalarVolume> {
    warp_scalar(&mask.to_scalar(), field)
}

/// Halves each grid dimension (rounding up) by averaging 2x2x2 blocks;
/// partial blocks at the far faces average over the voxels they cover.
pub fn downsample_volume(vol: &ScalarVolume) -> Result<ScalarVolume> {
    let g = vol.geometry;
    let dims = [
        g.dims[0].div_ceil(2),
        g.dims[1].div_ceil(2),
        g.dims[2].div_ceil(2),
    ];
    let spacing = [g.spacing[0] * 2.0, g.spacing[1] * 2.0, g.spacing[2] * 2.0];
    let coarse = GridGeometry::new(dims, spacing)?;
    let mut out = ScalarVolume::zeros(coarse);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut sum = 0.0;
                let mut n = 0.0;
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (sx, sy, sz) = (2 * x + dx, 2 * y + dy, 2 * z + dz);
                            if sx < g.dims[0] && sy < g.dims[1] && sz < g.dims[2] {
                                sum += vol.at(sx, sy, sz);
                                n += 1.0;
                            }
                        }
                    }
                }
                out.set(x, y, z, sum / n);
            }
        }
    }
    Ok(out)
}

/// Halves each grid dimension by majority vote over 2x2x2 blocks; ties go to
/// foreground so thin structures survive coarsening.
pub fn downsample_mask(mask: &LabelMask) -> Result<LabelMask> {
    let g = mask.geometry;
    let dims = [
        g.dims[0].div_ceil(2),
        g.dims[1].div_ceil(2),
        g.dims[2].div_ceil(2),
    ];
    let spacing = [g.spacing[0] * 2.0, g.spacing[1] * 2.0, g.spacing[2] * 2.0];
    let coarse = GridGeometry::new(dims, spacing)?;
    let mut out = LabelMask::zeros(coarse);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut fg = 0usize;
                let mut total = 0usize;
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (sx, sy, sz) = (2 * x + dx, 2 * y + dy, 2 * z + dz);
                            if sx < g.dims[0] && sy < g.dims[1] && sz < g.dims[2] {
                                total += 1;
                                if mask.at(sx, sy, sz) {
                                    fg += 1;
                                }
                            }
                        }
                    }
                }
                out.set(x, y, z, 2 * fg >= total);
            }
        }
    }
    Ok(out)
}
