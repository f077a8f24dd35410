mod common;

use ococ_core::active::local_maxima;
use ococ_core::weaklabel::extract_subcloud;
use ococ_core::SpatialIndex;
use proptest::prelude::*;

fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(
        prop::array::uniform3(0i32..40).prop_map(|a| [a[0] as f64 * 0.25, a[1] as f64 * 0.25, a[2] as f64 * 0.25]),
        1..120,
    )
}

proptest! {
    #[test]
    fn knn_matches_scan(pts in cloud(), q in prop::array::uniform3(-1.0f64..11.0), k in 1usize..20) {
        let index = SpatialIndex::new(&pts).unwrap();
        let k = k.min(pts.len());
        let got: Vec<(usize, f64)> = index.knn(q, k).unwrap().iter().map(|n| (n.index, n.distance)).collect();
        let want: Vec<(usize, f64)> = common::knn(&pts, q, k).into_iter().map(|(i, d)| (i, d.sqrt())).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn radius_matches_scan(pts in cloud(), q in prop::array::uniform3(-1.0f64..11.0), r in 0.1f64..4.0) {
        let index = SpatialIndex::new(&pts).unwrap();
        prop_assert_eq!(index.radius_query(q, r), common::radius(&pts, q, r));
    }

    #[test]
    fn radius_on_grid_spacing_is_inclusive(pts in cloud()) {
        // grid points sit at exactly 0.25 m spacing
        let index = SpatialIndex::new(&pts).unwrap();
        let q = pts[0];
        prop_assert_eq!(index.radius_query(q, 0.5), common::radius(&pts, q, 0.5));
    }

    #[test]
    fn subcloud_membership_matches_scan(pts in cloud(), pick in any::<prop::sample::Index>(), r in 0.25f64..3.0) {
        let index = SpatialIndex::new(&pts).unwrap();
        let center = pts[pick.index(pts.len())];
        let sub = extract_subcloud(&index, center, r, 1, 0).unwrap();
        prop_assert_eq!(&sub.members, &common::radius(&pts, center, r));
        prop_assert!(sub.members.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn local_maxima_match_scan(pts in cloud(), levels in prop::collection::vec(0u8..4, 120), r in 0.25f64..3.0) {
        // few distinct values so plateaus are common
        let values: Vec<f64> = (0..pts.len()).map(|i| levels[i] as f64).collect();
        let seeds = local_maxima(&pts, &values, r).unwrap();
        prop_assert_eq!(&seeds.indices, &common::local_maxima(&pts, &values, r));
        for &s in &seeds.indices {
            prop_assert!(common::radius(&pts, pts[s], r).iter().all(|&j| values[s] >= values[j]));
        }
    }
}
