use ghost2_core::geometry::KdTree;
use ghost2_core::Matrix;
use proptest::prelude::*;

fn brute_knn(points: &Matrix, q: usize, k: usize, mask: Option<&[bool]>) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..points.rows())
        .filter(|&j| j != q && mask.is_none_or(|m| m[j]))
        .map(|j| {
            let d: f64 = points.row(q).iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, j)
        })
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, j)| j).collect()
}

fn dataset() -> impl Strategy<Value = (Matrix, usize, usize)> {
    (2usize..120, 1usize..8, 1usize..10).prop_flat_map(|(n, d, cap)| {
        // a coarse grid of values makes exact distance ties common
        prop::collection::vec(0i32..6, n * d).prop_map(move |v| {
            let data: Vec<f64> = v.into_iter().map(|x| x as f64 * 0.25).collect();
            (Matrix::from_vec(n, d, data), cap, n)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_brute_force((points, cap, n) in dataset(), k in 1usize..8, mask_bits in prop::collection::vec(any::<bool>(), 120)) {
        let tree = KdTree::build(&points, cap).unwrap();
        let k = k.min(n - 1);
        for q in 0..n {
            prop_assert_eq!(tree.knn(q, k, None).unwrap(), brute_knn(&points, q, k, None));
        }
        let mask: Vec<bool> = mask_bits[..n].to_vec();
        for q in 0..n {
            let avail = (0..n).filter(|&j| j != q && mask[j]).count();
            match tree.knn(q, k, Some(&mask)) {
                Ok(got) => prop_assert_eq!(got, brute_knn(&points, q, k, Some(&mask))),
                Err(_) => prop_assert!(avail < k),
            }
        }
    }

    #[test]
    fn leaves_partition_points_within_capacity((points, cap, n) in dataset()) {
        let tree = KdTree::build(&points, cap).unwrap();
        let mut seen: Vec<usize> = tree.leaves().iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        for leaf in tree.leaves() {
            prop_assert!(!leaf.is_empty() && leaf.len() <= cap);
        }
    }
}
