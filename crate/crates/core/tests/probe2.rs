use sareg_core::metrics::{connected_regions, dsc_hard};
use sareg_core::phantom::{generate, PhantomSpec};
use sareg_core::volume::warp_mask;

#[test]
#[ignore]
fn probe_geometry_sweep() {
    for seed in 1..=10u64 {
        let spec = PhantomSpec {
            seed,
            ..PhantomSpec::default()
        };
        let pair = generate(&spec).unwrap();
        let cross = dsc_hard(&pair.fixed_vein, &pair.moving_artery).unwrap();
        let truth_warped = warp_mask(&pair.moving_artery, &pair.truth).unwrap();
        let centroid = |m: &sareg_core::volume::LabelMask| -> [f64; 3] {
            let g = m.geometry();
            let (mut acc, mut n) = ([0.0f64; 3], 0.0);
            for (i, v) in m.data().iter().enumerate() {
                if *v {
                    let p = g.coords(i);
                    for a in 0..3 {
                        acc[a] += p[a] as f64;
                    }
                    n += 1.0;
                }
            }
            acc.map(|c| c / n)
        };
        let ca = centroid(&pair.moving_artery);
        let cv = centroid(&pair.fixed_vein);
        let max_ux = pair
            .truth
            .vectors()
            .iter()
            .map(|v| v[0].abs())
            .fold(0.0f64, f64::max);
        println!("  max |u_x| = {max_ux:.3}");
        println!(
            "seed {seed}: noreg cross {cross:.3} | artery vox {} regions(moving {} truthwarp {}) | vein vox {} | truth max |u| {:.3} | artery c=({:.1},{:.1},{:.1}) vein c=({:.1},{:.1},{:.1})",
            pair.moving_artery.data().iter().filter(|v| **v).count(),
            connected_regions(&pair.moving_artery),
            connected_regions(&truth_warped),
            pair.fixed_vein.data().iter().filter(|v| **v).count(),
            pair.truth.max_norm(),
            ca[0], ca[1], ca[2], cv[0], cv[1], cv[2],
        );
    }
}
