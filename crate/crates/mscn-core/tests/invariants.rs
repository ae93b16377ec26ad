//! Property-based invariants: neighborhood search against a brute-force
//! oracle, sampling hygiene, and the geometric symmetries of the network.

use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mscn_core::geometry::{
    downsample_indices, farthest_point_indices, generate_primitive, knn, PointCloud,
};
use mscn_core::layers::{
    conv_dist, mscn_forward, DistKernel, MscnParams, NetworkConfig, Sampling,
};

fn random_points(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    Array2::from_shape_fn((n, 3), |_| rng.gen_range(-10.0..10.0))
}

/// O(N^2) nearest-neighbor oracle returning sorted index sets.
fn brute_force_neighbors(points: &Array2<f64>, m: usize) -> Vec<Vec<usize>> {
    let n = points.nrows();
    (0..n)
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let diff = &points.row(i) - &points.row(j);
                    (diff.dot(&diff), j)
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut idx: Vec<usize> = d[..m].iter().map(|&(_, j)| j).collect();
            idx.sort_unstable();
            idx
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn knn_matches_brute_force(n in 20usize..200, m in 1usize..8, seed in 0u64..1_000_000) {
        let points = random_points(n, seed);
        let fields = knn(&points, m).unwrap();
        let oracle = brute_force_neighbors(&points, m);
        for (i, field) in fields.iter().enumerate() {
            prop_assert_eq!(field.center_index, i);
            let mut got = field.neighbor_indices.clone();
            got.sort_unstable();
            // Ties (equidistant neighbors) may legitimately differ; compare
            // squared distances instead of raw indices in that case.
            if got != oracle[i] {
                let dist = |j: usize| {
                    let diff = &points.row(i) - &points.row(j);
                    diff.dot(&diff)
                };
                let a: Vec<f64> = got.iter().map(|&j| dist(j)).collect();
                let b: Vec<f64> = oracle[i].iter().map(|&j| dist(j)).collect();
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn downsampling_has_no_duplicates(n in 2usize..300, seed in 0u64..1_000_000) {
        let n_out = 1 + seed as usize % n;
        let keep = downsample_indices(n, n_out, seed);
        prop_assert_eq!(keep.len(), n_out);
        let mut sorted = keep.clone();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), n_out, "duplicate indices");
        prop_assert!(keep.iter().all(|&i| i < n));
    }

    #[test]
    fn farthest_point_sampling_is_deterministic(n in 8usize..128, seed in 0u64..1_000_000) {
        let points = random_points(n, seed);
        let a = farthest_point_indices(&points, n / 2);
        let b = farthest_point_indices(&points, n / 2);
        prop_assert_eq!(&a, &b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), a.len());
    }

    #[test]
    fn conv_dist_is_scale_homogeneous(
        seed in 0u64..1_000_000,
        s in prop::sample::select(vec![0.01f64, 0.5, 2.0, 100.0]),
    ) {
        let points = random_points(24, seed);
        let fields = knn(&points, 4).unwrap();
        let scaled = knn(&(points * s), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        use rand::Rng;
        let k = DistKernel {
            center_weight: rng.gen_range(-1.0..1.0),
            branch_weights: ndarray::Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0)),
        };
        for (f, fs) in fields.iter().zip(scaled.iter()) {
            let a = conv_dist(f, &k);
            let b = conv_dist(fs, &k);
            let rel = (b - s * a).abs() / (s * a).abs().max(1e-12);
            prop_assert!(rel < 1e-6, "rel {rel} at s {s}");
        }
    }
}

proptest! {
    // Full-network properties are costly; a handful of cases suffices.
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn network_is_translation_invariant(
        seed in 0u64..1_000,
        shift in prop::array::uniform3(-100.0f64..100.0),
    ) {
        let params = MscnParams::init(&NetworkConfig::tiny(3), 7).unwrap();
        let cloud = generate_primitive((seed % 3) as usize, 48, seed, 0.0).unwrap();
        let mut moved = cloud.clone();
        for mut row in moved.points.rows_mut() {
            row[0] += shift[0];
            row[1] += shift[1];
            row[2] += shift[2];
        }
        let (a, _) = mscn_forward(&cloud, &params, &Sampling::Seed(3)).unwrap();
        let (b, _) = mscn_forward(&moved, &params, &Sampling::Seed(3)).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
    }

    #[test]
    fn network_is_permutation_invariant(seed in 0u64..1_000) {
        let params = MscnParams::init(&NetworkConfig::tiny(3), 7).unwrap();
        let cloud = generate_primitive((seed % 3) as usize, 48, seed, 0.0).unwrap();
        let (_, selections) = mscn_forward(&cloud, &params, &Sampling::Seed(seed)).unwrap();
        let (a, _) =
            mscn_forward(&cloud, &params, &Sampling::Explicit(selections.clone())).unwrap();

        // Permute the points and map the explicit selections through the
        // same permutation so both runs aggregate identical point sets.
        let n = cloud.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
        perm.shuffle(&mut rng);
        let mut inverse = vec![0usize; n];
        for (new_pos, &old) in perm.iter().enumerate() {
            inverse[old] = new_pos;
        }
        let mut permuted = Array2::zeros((n, 3));
        for (new_pos, &old) in perm.iter().enumerate() {
            permuted.row_mut(new_pos).assign(&cloud.points.row(old));
        }
        let mut shuffled = PointCloud::new(permuted);
        shuffled.label = cloud.label;
        // Selections are indices into the previous stage's point order; the
        // first stage maps through `inverse`, later stages follow from the
        // (sorted) relabeling of the kept set.
        let mut mapped = Vec::with_capacity(selections.len());
        let mut cur_map: Vec<usize> = inverse.clone();
        for sel in &selections {
            let mut stage: Vec<usize> = sel.iter().map(|&i| cur_map[i]).collect();
            let mut order: Vec<usize> = (0..stage.len()).collect();
            order.sort_by_key(|&i| stage[i]);
            let mut next_map = vec![0usize; sel.len()];
            for (rank, &i) in order.iter().enumerate() {
                next_map[i] = rank;
            }
            stage.sort_unstable();
            mapped.push(stage);
            cur_map = next_map;
        }
        let (b, _) = mscn_forward(&shuffled, &params, &Sampling::Explicit(mapped)).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }
}
