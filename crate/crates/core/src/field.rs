//! Dense displacement fields and field-level operations.
//!
//! A field stores one displacement vector per voxel, in voxel units of its
//! own grid. The warp it induces is `phi(p) = p + u(p)`. Composition,
//! fixed-point inversion, Jacobian determinants, and resolution changes for
//! the multiresolution pyramid live here.

use crate::error::Result;
use crate::parallel;
use crate::volume::{ensure_same_grid, GridGeometry, ScalarVolume, TrilinearCell};

/// Dense per-voxel displacement field in voxel units.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    geometry: GridGeometry,
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    /// Identity transform (all-zero displacements).
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            vectors: vec![[0.0; 3]; geometry.voxel_count()],
            geometry,
        }
    }

    /// Wraps an existing buffer; its length must match the grid.
    pub fn from_vec(geometry: GridGeometry, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != geometry.voxel_count() {
            return Err(crate::error::Error::InvalidGeometry(format!(
                "buffer length {} does not match dims {:?}",
                vectors.len(),
                geometry.dims
            )));
        }
        Ok(Self { geometry, vectors })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.vectors
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.vectors[self.geometry.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: [f64; 3]) {
        let i = self.geometry.index(x, y, z);
        self.vectors[i] = v;
    }

    /// Trilinear sample of the field at voxel coordinates `p`, clamped to
    /// the grid.
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        TrilinearCell::at(&self.geometry, p).vector(&self.vectors)
    }

    /// Largest Euclidean displacement magnitude.
    pub fn max_norm(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest absolute vector component; used to scale step sizes.
    pub fn max_abs_component(&self) -> f64 {
        self.vectors
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, &c| m.max(c.abs()))
    }
}

/// Composes two warps: the returned field satisfies
/// `phi_out = phi_outer . phi_inner`, i.e.
/// `u(p) = u_inner(p) + u_outer(p + u_inner(p))`.
pub fn compose(outer: &DisplacementField, inner: &DisplacementField) -> Result<DisplacementField> {
    ensure_same_grid(outer.geometry, inner.geometry, "compose")?;
    let geometry = outer.geometry;
    let mut out = vec![[0.0; 3]; geometry.voxel_count()];
    parallel::fill_slots(&mut out, |i| {
        let [x, y, z] = geometry.coords(i);
        let ui = inner.vectors[i];
        let p = [x as f64 + ui[0], y as f64 + ui[1], z as f64 + ui[2]];
        let uo = TrilinearCell::at(&geometry, p).vector(&outer.vectors);
        [ui[0] + uo[0], ui[1] + uo[1], ui[2] + uo[2]]
    });
    DisplacementField::from_vec(geometry, out)
}

/// Result of [`invert_field`].
#[derive(Clone, Debug)]
pub struct FieldInverse {
    /// Approximate inverse displacement field.
    pub field: DisplacementField,
    /// Largest remaining composition error `max_p |v(p) + u(p + v(p))|`
    /// in voxels.
    pub residual: f64,
    /// Fixed-point iterations performed.
    pub iterations: usize,
    /// Whether the residual fell below the tolerance.
    pub converged: bool,
}

/// Approximates the inverse of a displacement field by fixed-point
/// iteration: `v_{k+1}(p) = -u(p + v_k(p))`, starting from `v_0 = 0`.
/// Stops once the composition residual drops below `tolerance` (in voxels)
/// or after `max_iterations` updates, whichever comes first.
pub fn invert_field(
    field: &DisplacementField,
    max_iterations: usize,
    tolerance: f64,
) -> FieldInverse {
    let geometry = field.geometry;
    let n = geometry.voxel_count();
    let mut v = DisplacementField::zeros(geometry);

    // One sweep evaluates u at p + v(p), which yields both the residual of
    // the current iterate and the next iterate.
    let sweep = |v: &DisplacementField, next: &mut Vec<([f64; 3], f64)>| {
        parallel::fill_slots(next, |i| {
            let [x, y, z] = geometry.coords(i);
            let vi = v.vectors[i];
            let p = [x as f64 + vi[0], y as f64 + vi[1], z as f64 + vi[2]];
            let s = TrilinearCell::at(&geometry, p).vector(&field.vectors);
            let r = [vi[0] + s[0], vi[1] + s[1], vi[2] + s[2]];
            let rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            ([-s[0], -s[1], -s[2]], rn)
        });
    };

    let mut buf = vec![([0.0; 3], 0.0); n];
    let mut iterations = 0;
    loop {
        sweep(&v, &mut buf);
        let residual = buf.iter().map(|&(_, r)| r).fold(0.0, f64::max);
        if residual < tolerance {
            return FieldInverse {
                field: v,
                residual,
                iterations,
                converged: true,
            };
        }
        if iterations >= max_iterations {
            return FieldInverse {
                field: v,
                residual,
                iterations,
                converged: false,
            };
        }
        for (i, &(next, _)) in buf.iter().enumerate() {
            v.vectors[i] = next;
        }
        iterations += 1;
    }
}

/// Determinant of the warp Jacobian `det(I + du/dp)` at every voxel, with
/// derivatives taken in voxel units: central differences in the interior and
/// one-sided differences on the faces. Values at or below zero indicate
/// folding.
pub fn jacobian_determinant(field: &DisplacementField) -> ScalarVolume {
    let geometry = field.geometry;
    let dims = geometry.dims;
    let u = &field.vectors;
    let mut out = vec![0.0; geometry.voxel_count()];
    parallel::fill_slots(&mut out, |i| {
        let [x, y, z] = geometry.coords(i);
        let p = [x, y, z];
        // j[r][c] = d(p_r + u_r)/d p_c
        let mut j = [[0.0f64; 3]; 3];
        for c in 0..3 {
            let n = dims[c];
            let (lo, hi, scale) = if n == 1 {
                (i, i, 0.0)
            } else if p[c] == 0 {
                let mut q = p;
                q[c] += 1;
                (i, geometry.index(q[0], q[1], q[2]), 1.0)
            } else if p[c] == n - 1 {
                let mut q = p;
                q[c] -= 1;
                (geometry.index(q[0], q[1], q[2]), i, 1.0)
            } else {
                let mut qm = p;
                let mut qp = p;
                qm[c] -= 1;
                qp[c] += 1;
                (
                    geometry.index(qm[0], qm[1], qm[2]),
                    geometry.index(qp[0], qp[1], qp[2]),
                    0.5,
                )
            };
            for r in 0..3 {
                j[r][c] = scale * (u[hi][r] - u[lo][r]);
            }
            j[c][c] += 1.0;
        }
        j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
            - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
    });
    ScalarVolume::from_vec(geometry, out).expect("buffer sized from geometry")
}

/// Transfers a coarse-level field to a finer grid: samples the coarse field
/// at the coarse-space image of each fine voxel and doubles the displacement
/// to convert it to fine voxel units.
pub fn upsample_field(field: &DisplacementField, fine_dims: [usize; 3]) -> Result<DisplacementField> {
    let coarse = field.geometry;
    for a in 0..3 {
        if fine_dims[a].div_ceil(2) != coarse.dims[a] {
            return Err(crate::error::Error::GridMismatch(format!(
                "fine dims {:?} do not coarsen to {:?}",
                fine_dims, coarse.dims
            )));
        }
    }
    let fine = GridGeometry::new(
        fine_dims,
        [
            coarse.spacing[0] / 2.0,
            coarse.spacing[1] / 2.0,
            coarse.spacing[2] / 2.0,
        ],
    )?;
    let mut out = vec![[0.0; 3]; fine.voxel_count()];
    parallel::fill_slots(&mut out, |i| {
        let [x, y, z] = fine.coords(i);
        // A coarse voxel c covers fine voxels 2c and 2c+1, so the coarse
        // coordinate of fine voxel f is f/2 - 1/4.
        let p = [
            x as f64 / 2.0 - 0.25,
            y as f64 / 2.0 - 0.25,
            z as f64 / 2.0 - 0.25,
        ];
        let s = TrilinearCell::at(&coarse, p).vector(&field.vectors);
        [2.0 * s[0], 2.0 * s[1], 2.0 * s[2]]
    });
    DisplacementField::from_vec(fine, out)
}
