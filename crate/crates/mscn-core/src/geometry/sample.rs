//! Downsampling: uniform random (default) and farthest-point sampling.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Picks `n_out` of `n` row indices uniformly without replacement.
/// The returned indices are sorted ascending so the relative input order of
/// the survivors is preserved. Deterministic given the seed.
pub fn downsample_indices(n: usize, n_out: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut keep = idx[..n_out].to_vec();
    keep.sort_unstable();
    keep
}

/// Uniform random downsampling by rate `r >= 1`: keeps `floor(N/r)` points.
/// Features rows follow their points.
pub fn random_downsample(cloud: &PointCloud, r: f64, seed: u64, min_out: usize) -> Result<PointCloud> {
    if r < 1.0 {
        return Err(Error::Validation(format!("sampling rate {r} must be >= 1")));
    }
    let n = cloud.len();
    let n_out = (n as f64 / r).floor() as usize;
    if n_out < min_out {
        return Err(Error::InsufficientAfterSampling {
            have: n_out,
            need: min_out,
        });
    }
    let keep = downsample_indices(n, n_out, seed);
    Ok(cloud.select(&keep))
}

/// Farthest-point sampling from a canonical start (the lexicographically
/// smallest point). Deterministic and permutation-invariant up to exact
/// coordinate ties; kept as a config alternative to random downsampling.
pub fn farthest_point_indices(points: &Array2<f64>, n_out: usize) -> Vec<usize> {
    let n = points.nrows();
    assert!(n_out >= 1 && n_out <= n);
    let start = (0..n)
        .min_by(|&a, &b| {
            let ra = points.row(a);
            let rb = points.row(b);
            ra.iter()
                .zip(rb.iter())
                .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        })
        .unwrap();
    let mut chosen = vec![start];
    let mut best_d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points, i, start))
        .collect();
    while chosen.len() < n_out {
        let next = (0..n)
            .max_by(|&a, &b| {
                best_d2[a]
                    .partial_cmp(&best_d2[b])
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .unwrap();
        chosen.push(next);
        for i in 0..n {
            let d2 = sq_dist(points, i, next);
            if d2 < best_d2[i] {
                best_d2[i] = d2;
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

fn sq_dist(points: &Array2<f64>, a: usize, b: usize) -> f64 {
    let pa = points.row(a);
    let pb = points.row(b);
    (pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
        PointCloud::new(pts)
    }

    #[test]
    fn rate_four_quarters_the_cloud() {
        let c = random_cloud(1024, 1);
        let d = random_downsample(&c, 4.0, 0, 4).unwrap();
        assert_eq!(d.len(), 256);
    }

    #[test]
    fn rate_one_is_identity_multiset() {
        // 1 + eps below the f64 resolution of N/r collapses to keeping all N.
        let c = random_cloud(100, 2);
        let d = random_downsample(&c, 1.0 + 1e-17, 0, 4).unwrap();
        assert_eq!(d.len(), 100);
        assert_eq!(d.points, c.points);
    }

    #[test]
    fn same_seed_same_selection() {
        let c = random_cloud(100, 3);
        let a = random_downsample(&c, 3.0, 7, 4).unwrap();
        let b = random_downsample(&c, 3.0, 7, 4).unwrap();
        assert_eq!(a.len(), 33);
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn too_small_output_errors() {
        let c = random_cloud(10, 4);
        assert!(matches!(
            random_downsample(&c, 5.0, 0, 4),
            Err(Error::InsufficientAfterSampling { have: 2, need: 4 })
        ));
    }

    #[test]
    fn no_duplicate_indices() {
        let keep = downsample_indices(100, 40, 9);
        let mut seen = std::collections::HashSet::new();
        assert!(keep.iter().all(|i| seen.insert(*i)));
    }

    #[test]
    fn fps_is_deterministic_and_spread() {
        let c = random_cloud(64, 5);
        let a = farthest_point_indices(&c.points, 16);
        let b = farthest_point_indices(&c.points, 16);
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
    }
}
