//! Topology-preserving 3D thinning for centerline extraction.
//!
//! Foreground uses 26-adjacency, background 6-adjacency (the standard
//! complementary pair). Points are deleted one at a time and only when
//! simple, so the 26-component count and the cavity/tunnel topology of the
//! input mask are preserved by construction. Six directional sub-iterations
//! keep the erosion symmetric so the result stays medial; curve endpoints
//! (exactly one foreground 26-neighbor) are kept.

use crate::error::{Error, Result};
use crate::structures::VoxelSet;
use crate::volume::LabelMask;

/// Local 3x3x3 neighborhood snapshot, center at (1,1,1); voxels beyond the
/// grid read as background.
fn neighborhood(mask: &LabelMask, p: [usize; 3]) -> [bool; 27] {
    let g = mask.geometry();
    let mut cube = [false; 27];
    let mut n = 0;
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let q = [p[0] as i64 + dx, p[1] as i64 + dy, p[2] as i64 + dz];
                cube[n] = g.contains(q) && mask.at(q[0] as usize, q[1] as usize, q[2] as usize);
                n += 1;
            }
        }
    }
    cube
}

/// Number of 26-connected components among the foreground voxels of the
/// 26-neighborhood (center excluded).
fn foreground_components_26(cube: &[bool; 27]) -> usize {
    let mut seen = [false; 27];
    let mut components = 0;
    for start in 0..27 {
        if start == 13 || !cube[start] || seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (iz, rem) = (i / 9, i % 9);
            let (iy, ix) = (rem / 3, rem % 3);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny, nz) = (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                        if !(0..3).contains(&nx) || !(0..3).contains(&ny) || !(0..3).contains(&nz) {
                            continue;
                        }
                        let j = (nz * 9 + ny * 3 + nx) as usize;
                        if j == 13 || j == i || seen[j] || !cube[j] {
                            continue;
                        }
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    components
}

/// Number of 6-connected components of background voxels within the
/// 18-neighborhood that touch a face neighbor of the center.
fn background_components_6(cube: &[bool; 27]) -> usize {
    // Positions of the 18-neighborhood: offsets with at most two nonzero
    // coordinates, center excluded.
    let in_n18 = |i: usize| -> bool {
        let (z, rem) = (i / 9, i % 9);
        let (y, x) = (rem / 3, rem % 3);
        let nz = (x != 1) as usize + (y != 1) as usize + (z != 1) as usize;
        nz == 1 || nz == 2
    };
    let is_face = |i: usize| -> bool {
        let (z, rem) = (i / 9, i % 9);
        let (y, x) = (rem / 3, rem % 3);
        (x != 1) as usize + (y != 1) as usize + (z != 1) as usize == 1
    };
    let mut seen = [false; 27];
    let mut components = 0;
    for start in 0..27 {
        if !in_n18(start) || cube[start] || seen[start] {
            continue;
        }
        // Flood the 6-connected background patch inside N18.
        let mut touches_face = is_face(start);
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (iz, rem) = (i / 9, i % 9);
            let (iy, ix) = (rem / 3, rem % 3);
            for (dx, dy, dz) in [
                (1i64, 0i64, 0i64),
                (-1, 0, 0),
                (0, 1, 0),
                (0, -1, 0),
                (0, 0, 1),
                (0, 0, -1),
            ] {
                let (nx, ny, nz) = (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                if !(0..3).contains(&nx) || !(0..3).contains(&ny) || !(0..3).contains(&nz) {
                    continue;
                }
                let j = (nz * 9 + ny * 3 + nx) as usize;
                if j == 13 || seen[j] || !in_n18(j) || cube[j] {
                    continue;
                }
                seen[j] = true;
                touches_face |= is_face(j);
                stack.push(j);
            }
        }
        if touches_face {
            components += 1;
        }
    }
    components
}

/// Whether deleting the center voxel preserves local topology: exactly one
/// foreground 26-component in the punctured neighborhood and exactly one
/// background 6-component among the 18-neighbors adjacent to the center.
fn is_simple(cube: &[bool; 27]) -> bool {
    foreground_components_26(cube) == 1 && background_components_6(cube) == 1
}

/// Curve endpoints have exactly one foreground 26-neighbor.
fn is_endpoint(cube: &[bool; 27]) -> bool {
    let count = cube
        .iter()
        .enumerate()
        .filter(|&(i, &v)| i != 13 && v)
        .count();
    count == 1
}

/// Thins a mask to its medial curve skeleton by iterative simple-point
/// removal in six directional sub-iterations until stable.
pub fn skeletonize(mask: &LabelMask) -> Result<VoxelSet> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask("skeletonize on an empty mask".into()));
    }
    let g = mask.geometry();
    let mut work = mask.clone();
    let directions: [[i64; 3]; 6] = [
        [0, 0, 1],
        [0, 0, -1],
        [0, 1, 0],
        [0, -1, 0],
        [1, 0, 0],
        [-1, 0, 0],
    ];
    loop {
        let mut deleted_this_round = 0usize;
        for dir in directions {
            // Border points facing this direction, in linear-index order.
            let mut candidates = Vec::new();
            for (i, &fg) in work.data().iter().enumerate() {
                if !fg {
                    continue;
                }
                let [x, y, z] = g.coords(i);
                let q = [x as i64 + dir[0], y as i64 + dir[1], z as i64 + dir[2]];
                let neighbor_bg =
                    !g.contains(q) || !work.at(q[0] as usize, q[1] as usize, q[2] as usize);
                if neighbor_bg {
                    candidates.push([x, y, z]);
                }
            }
            // Delete sequentially, re-checking against the current state so
            // every removal is a genuine simple-point deletion.
            for p in candidates {
                let cube = neighborhood(&work, p);
                if is_endpoint(&cube) || !is_simple(&cube) {
                    continue;
                }
                work.set(p[0], p[1], p[2], false);
                deleted_this_round += 1;
            }
        }
        if deleted_this_round == 0 {
            break;
        }
    }
    Ok(VoxelSet::from_mask(&work))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::distance_map;
    use crate::volume::GridGeometry;

    fn geom(dims: [usize; 3]) -> GridGeometry {
        GridGeometry::new(dims, [1.0; 3]).unwrap()
    }

    /// Independent 26-connectivity component count by flood fill over the
    /// full grid.
    fn count_components(mask: &LabelMask) -> usize {
        let g = mask.geometry();
        let mut seen = vec![false; g.voxel_count()];
        let mut count = 0;
        for start in 0..g.voxel_count() {
            if !mask.data()[start] || seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let [x, y, z] = g.coords(i);
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let q = [x as i64 + dx, y as i64 + dy, z as i64 + dz];
                            if !g.contains(q) {
                                continue;
                            }
                            let j = g.index(q[0] as usize, q[1] as usize, q[2] as usize);
                            if mask.data()[j] && !seen[j] {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        count
    }

    fn cylinder_x(g: GridGeometry, x0: usize, x1: usize, cy: i64, cz: i64, r2: i64) -> LabelMask {
        let mut mask = LabelMask::zeros(g);
        for x in x0..=x1 {
            for dy in -3i64..=3 {
                for dz in -3i64..=3 {
                    if dy * dy + dz * dz <= r2 {
                        mask.set(x, (cy + dy) as usize, (cz + dz) as usize, true);
                    }
                }
            }
        }
        mask
    }

    /// Largest interior depth of the skeleton mask; width <= 2 means no
    /// voxel sits deeper than one layer from background.
    fn max_depth(set: &VoxelSet) -> f64 {
        let dm = distance_map(&set.to_mask());
        dm.volume().data().iter().cloned().fold(0.0, f64::max)
    }

    #[test]
    fn single_voxel_is_its_own_skeleton() {
        let g = geom([5, 5, 5]);
        let mut mask = LabelMask::zeros(g);
        mask.set(2, 2, 2, true);
        let skel = skeletonize(&mask).unwrap();
        assert_eq!(skel.len(), 1);
        assert!(skel.contains([2, 2, 2]));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let g = geom([4, 4, 4]);
        assert!(matches!(
            skeletonize(&LabelMask::zeros(g)),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn straight_cylinder_thins_to_a_single_curve() {
        let g = geom([24, 9, 9]);
        let mask = cylinder_x(g, 2, 21, 4, 4, 4);
        let skel = skeletonize(&mask).unwrap();
        assert_eq!(count_components(&skel.to_mask()), 1);
        assert!(max_depth(&skel) <= 1.0, "depth {}", max_depth(&skel));
        // The curve must span most of the cylinder's axis extent.
        let xs: Vec<usize> = skel.iter_coords().map(|p| p[0]).collect();
        let span = xs.iter().max().unwrap() - xs.iter().min().unwrap();
        assert!(span >= 16, "span {span}");
        // Skeleton stays inside the input mask.
        for p in skel.iter_coords() {
            assert!(mask.at(p[0], p[1], p[2]));
        }
    }

    #[test]
    fn two_disjoint_cylinders_keep_two_components() {
        let g = geom([24, 16, 9]);
        let mut mask = cylinder_x(g, 2, 21, 3, 4, 2);
        let other = cylinder_x(g, 2, 21, 12, 4, 2);
        for (a, &b) in mask.data_mut().iter_mut().zip(other.data()) {
            *a |= b;
        }
        assert_eq!(count_components(&mask), 2);
        let skel = skeletonize(&mask).unwrap();
        assert_eq!(count_components(&skel.to_mask()), 2);
    }

    #[test]
    fn solid_cube_collapses_without_changing_topology() {
        let g = geom([9, 9, 9]);
        let mut mask = LabelMask::zeros(g);
        for z in 1..8 {
            for y in 1..8 {
                for x in 1..8 {
                    mask.set(x, y, z, true);
                }
            }
        }
        let skel = skeletonize(&mask).unwrap();
        assert_eq!(count_components(&skel.to_mask()), 1);
        assert!(skel.len() < mask.count() / 4);
        assert!(max_depth(&skel) <= 2.0f64.sqrt() + 1e-12);
    }

    #[test]
    fn l_shaped_tube_keeps_one_component_and_reaches_both_arms() {
        let g = geom([20, 20, 7]);
        let mut mask = LabelMask::zeros(g);
        for x in 2..18 {
            for dy in -1i64..=1 {
                for dz in -1i64..=1 {
                    mask.set(x, (3 + dy) as usize, (3 + dz) as usize, true);
                }
            }
        }
        for y in 3..18 {
            for dx in -1i64..=1 {
                for dz in -1i64..=1 {
                    mask.set((16 + dx) as usize, y, (3 + dz) as usize, true);
                }
            }
        }
        let skel = skeletonize(&mask).unwrap();
        assert_eq!(count_components(&skel.to_mask()), 1);
        let max_x = skel.iter_coords().map(|p| p[0]).max().unwrap();
        let min_x = skel.iter_coords().map(|p| p[0]).min().unwrap();
        let max_y = skel.iter_coords().map(|p| p[1]).max().unwrap();
        assert!(min_x <= 4 && max_x >= 15 && max_y >= 15);
    }

    #[test]
    fn hollow_ring_skeleton_keeps_its_cycle() {
        // A solid torus-like ring in the z=3 plane. Simple-point deletion
        // preserves the tunnel, so the skeleton's 26-adjacency graph must
        // still contain a cycle: a tree on n voxels has n-1 edges, a loop
        // forces at least n.
        let g = geom([19, 19, 7]);
        let mut mask = LabelMask::zeros(g);
        let c = 9.0;
        for z in 2..5usize {
            for y in 0..19 {
                for x in 0..19 {
                    let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                    if (4.0..=7.0).contains(&r) {
                        mask.set(x, y, z, true);
                    }
                }
            }
        }
        let skel = skeletonize(&mask).unwrap();
        let skel_mask = skel.to_mask();
        assert_eq!(count_components(&skel_mask), 1);
        let mut edges = 0usize;
        for p in skel.iter_coords() {
            let cube = neighborhood(&skel_mask, p);
            edges += cube
                .iter()
                .enumerate()
                .filter(|&(i, &v)| i != 13 && v)
                .count();
        }
        edges /= 2;
        assert!(
            edges >= skel.len(),
            "{} edges for {} voxels: cycle was lost",
            edges,
            skel.len()
        );
    }

    #[test]
    fn component_count_is_preserved_on_random_blobs() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let g = geom([14, 14, 14]);
        for seed in 0..8u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mask = LabelMask::zeros(g);
            for _ in 0..4 {
                let c = [
                    rng.random_range(3..11) as i64,
                    rng.random_range(3..11) as i64,
                    rng.random_range(3..11) as i64,
                ];
                let r = rng.random_range(1..=3) as i64;
                for z in 0..14i64 {
                    for y in 0..14i64 {
                        for x in 0..14i64 {
                            let d2 = (x - c[0]).pow(2) + (y - c[1]).pow(2) + (z - c[2]).pow(2);
                            if d2 <= r * r {
                                mask.set(x as usize, y as usize, z as usize, true);
                            }
                        }
                    }
                }
            }
            if mask.count() == 0 {
                continue;
            }
            let before = count_components(&mask);
            let skel = skeletonize(&mask).unwrap();
            assert_eq!(count_components(&skel.to_mask()), before, "seed {seed}");
        }
    }
}
