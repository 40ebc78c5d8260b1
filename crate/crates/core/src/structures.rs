//! Geometric structures the constraints are built on: voxel sets, surfaces,
//! distance maps, and weighted centerlines.
//!
//! Distances are Euclidean in millimeters. Voxels beyond the grid count as
//! background for boundary and distance purposes.

use crate::error::{Error, Result};
use crate::volume::{GridGeometry, LabelMask, ScalarVolume};

/// Set of voxel coordinates on a grid, stored as sorted unique linear
/// indices for deterministic iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelSet {
    geometry: GridGeometry,
    indices: Vec<usize>,
}

impl VoxelSet {
    /// Collects all foreground voxels of a mask.
    pub fn from_mask(mask: &LabelMask) -> Self {
        let indices = mask
            .data()
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
            .collect();
        Self {
            geometry: mask.geometry(),
            indices,
        }
    }

    /// Builds a set from voxel coordinates, rejecting out-of-grid points.
    pub fn from_points<I>(geometry: GridGeometry, points: I) -> Result<Self>
    where
        I: IntoIterator<Item = [usize; 3]>,
    {
        let mut indices = Vec::new();
        for p in points {
            if p[0] >= geometry.dims[0] || p[1] >= geometry.dims[1] || p[2] >= geometry.dims[2] {
                return Err(Error::InvalidGeometry(format!(
                    "point {p:?} outside dims {:?}",
                    geometry.dims
                )));
            }
            indices.push(geometry.index(p[0], p[1], p[2]));
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(Self { geometry, indices })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Sorted linear indices of the member voxels.
    pub fn linear_indices(&self) -> &[usize] {
        &self.indices
    }

    /// Member voxels as coordinates, in linear-index order.
    pub fn iter_coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.indices.iter().map(|&i| self.geometry.coords(i))
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        if !self.geometry.contains([p[0] as i64, p[1] as i64, p[2] as i64]) {
            return false;
        }
        self.indices
            .binary_search(&self.geometry.index(p[0], p[1], p[2]))
            .is_ok()
    }

    /// Renders the set as a binary mask.
    pub fn to_mask(&self) -> LabelMask {
        let mut mask = LabelMask::zeros(self.geometry);
        for &i in &self.indices {
            mask.data_mut()[i] = true;
        }
        mask
    }
}

/// Per-voxel shortest Euclidean distance (millimeters) to the nearest
/// background voxel center; zero on background itself.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap {
    volume: ScalarVolume,
}

impl DistanceMap {
    pub fn geometry(&self) -> GridGeometry {
        self.volume.geometry()
    }

    pub fn volume(&self) -> &ScalarVolume {
        &self.volume
    }

    pub fn into_volume(self) -> ScalarVolume {
        self.volume
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.volume.at(x, y, z)
    }
}

/// Centerline voxels with the weights `w(p) = exp(-dm(p))` used by the
/// centerline constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedCenterline {
    points: VoxelSet,
    weights: Vec<f64>,
}

impl WeightedCenterline {
    /// Pairs points with weights; weights must be in (0, 1] and match the
    /// point count.
    pub fn new(points: VoxelSet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != points.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w <= 1.0)) {
            return Err(Error::InvalidParameter(
                "centerline weights must lie in (0, 1]".into(),
            ));
        }
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &VoxelSet {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Foreground voxels with at least one of their 6 face neighbors on the
/// background (or outside the grid): the morphological inner boundary.
pub fn extract_surface(mask: &LabelMask) -> Result<VoxelSet> {
    let g = mask.geometry();
    let mut indices = Vec::new();
    let dims = g.dims;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if !mask.at(x, y, z) {
                    continue;
                }
                let p = [x as i64, y as i64, z as i64];
                let mut boundary = false;
                for (axis, step) in [(0, -1i64), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
                    let mut q = p;
                    q[axis] += step;
                    if !g.contains(q) || !mask.at(q[0] as usize, q[1] as usize, q[2] as usize) {
                        boundary = true;
                        break;
                    }
                }
                if boundary {
                    indices.push(g.index(x, y, z));
                }
            }
        }
    }
    if indices.is_empty() {
        return Err(Error::EmptyMask("extract_surface on an empty mask".into()));
    }
    Ok(VoxelSet {
        geometry: g,
        indices,
    })
}

/// One-dimensional squared-distance transform (lower-envelope method) along
/// a line of sites spaced `step` millimeters apart. `f` holds per-site costs
/// (squared millimeters, `INFINITY` for absent sites); the result is exact
/// because the final evaluation squares integer index differences scaled by
/// the spacing instead of accumulating rounded positions.
fn dt1d(f: &[f64], step: f64, d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qs = q as f64 * step;
        loop {
            if k < 0 {
                break;
            }
            let vk = v[k as usize];
            let vs = vk as f64 * step;
            let s = (fq + qs * qs - (f[vk] + vs * vs)) / (2.0 * (qs - vs));
            if s <= z[k as usize] {
                k -= 1;
            } else {
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
        if k < 0 {
            k = 0;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
        }
    }
    if k < 0 {
        d[..n].fill(f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for q in 0..n {
        let x = q as f64 * step;
        while z[k + 1] < x {
            k += 1;
        }
        let dq = (q as f64 - v[k] as f64) * step;
        d[q] = f[v[k]] + dq * dq;
    }
}

/// Exact anisotropic squared Euclidean distance (mm²) from every voxel to
/// the nearest seed voxel. Grids without seeds yield all-infinite output.
pub(crate) fn edt_squared_to_seeds(
    geometry: GridGeometry,
    is_seed: impl Fn(usize) -> bool,
) -> Vec<f64> {
    let [nx, ny, nz] = geometry.dims;
    let [sx, sy, sz] = geometry.spacing;
    let mut dist: Vec<f64> = (0..geometry.voxel_count())
        .map(|i| if is_seed(i) { 0.0 } else { f64::INFINITY })
        .collect();

    let maxn = nx.max(ny).max(nz);
    let mut f = vec![0.0; maxn];
    let mut d = vec![0.0; maxn];
    let mut v = vec![0usize; maxn];
    let mut z = vec![0.0; maxn + 1];

    // Pass along x for every (y, z) line.
    for zz in 0..nz {
        for yy in 0..ny {
            let base = geometry.index(0, yy, zz);
            for xx in 0..nx {
                f[xx] = dist[base + xx];
            }
            dt1d(&f[..nx], sx, &mut d, &mut v, &mut z);
            for xx in 0..nx {
                dist[base + xx] = d[xx];
            }
        }
    }
    // Pass along y.
    for zz in 0..nz {
        for xx in 0..nx {
            for yy in 0..ny {
                f[yy] = dist[geometry.index(xx, yy, zz)];
            }
            dt1d(&f[..ny], sy, &mut d, &mut v, &mut z);
            for yy in 0..ny {
                dist[geometry.index(xx, yy, zz)] = d[yy];
            }
        }
    }
    // Pass along z.
    for yy in 0..ny {
        for xx in 0..nx {
            for zz in 0..nz {
                f[zz] = dist[geometry.index(xx, yy, zz)];
            }
            dt1d(&f[..nz], sz, &mut d, &mut v, &mut z);
            for zz in 0..nz {
                dist[geometry.index(xx, yy, zz)] = d[zz];
            }
        }
    }
    dist
}

/// Exact Euclidean distance transform of a mask: distance in millimeters
/// from each voxel to the nearest background voxel, with everything beyond
/// the grid counting as background. Background voxels map to zero.
///
/// The exterior is handled by running the transform on a grid padded with a
/// single all-background shell: clamping any farther exterior voxel onto
/// that shell never increases its distance to an interior voxel, so one
/// layer is exact.
pub fn distance_map(mask: &LabelMask) -> DistanceMap {
    let g = mask.geometry();
    let padded = GridGeometry::new(
        [g.dims[0] + 2, g.dims[1] + 2, g.dims[2] + 2],
        g.spacing,
    )
    .expect("padded dims remain valid");
    let is_seed = |i: usize| {
        let [x, y, z] = padded.coords(i);
        if x == 0
            || y == 0
            || z == 0
            || x == padded.dims[0] - 1
            || y == padded.dims[1] - 1
            || z == padded.dims[2] - 1
        {
            return true;
        }
        !mask.at(x - 1, y - 1, z - 1)
    };
    let sq = edt_squared_to_seeds(padded, is_seed);
    let mut out = ScalarVolume::zeros(g);
    for z in 0..g.dims[2] {
        for y in 0..g.dims[1] {
            for x in 0..g.dims[0] {
                let v = sq[padded.index(x + 1, y + 1, z + 1)];
                out.set(x, y, z, v.sqrt());
            }
        }
    }
    DistanceMap { volume: out }
}

/// Attaches the weight `w(p) = exp(-dm(p))` to every centerline point.
pub fn centerline_weights(centerline: &VoxelSet, dm: &DistanceMap) -> Result<WeightedCenterline> {
    crate::volume::ensure_same_grid(centerline.geometry(), dm.geometry(), "centerline_weights")?;
    let weights = centerline
        .linear_indices()
        .iter()
        .map(|&i| (-dm.volume().data()[i]).exp())
        .collect();
    WeightedCenterline::new(centerline.clone(), weights)
}
