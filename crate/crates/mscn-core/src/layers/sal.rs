//! The structural aggregation layer: receptive-field max pooling plus
//! downsampling (local view), an internal SCL, and global-feature
//! concatenation (global view).

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{downsample_indices, knn, ReceptiveField};
use crate::layers::scl::{FeatureSource, SclParams, SclVars};
use crate::nn::{join, Binder, Parameterized};
use crate::tape::{Tape, Var};

/// Parameters of one `SAL(D_in, 2*D_mid)`: just its internal SCL; pooling
/// and concatenation are parameter-free.
#[derive(Debug, Clone, PartialEq)]
pub struct SalParams {
    pub scl: SclParams,
    pub r: f64,
}

impl SalParams {
    pub fn init(d_in: usize, d_mid: usize, s: usize, r: f64, rng: &mut ChaCha8Rng) -> Self {
        SalParams {
            scl: SclParams::init(d_in, d_mid, s, rng),
            r,
        }
    }

    pub fn bind(&self, b: &mut Binder<'_>, prefix: &str) -> SalVars {
        SalVars {
            scl: self.scl.bind(b, &join(prefix, "scl")),
            r: self.r,
        }
    }

    pub fn bind_frozen(&self, b: &mut Binder<'_>) -> SalVars {
        SalVars {
            scl: self.scl.bind_frozen(b),
            r: self.r,
        }
    }
}

impl Parameterized for SalParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.scl.visit(&join(prefix, "scl"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.scl.visit_mut(&join(prefix, "scl"), f);
    }
}

#[derive(Clone, Copy)]
pub struct SalVars {
    pub scl: SclVars,
    pub r: f64,
}

pub struct SalOutput {
    pub points: Var,
    pub features: Var,
    pub fields: Vec<ReceptiveField>,
}

impl SalVars {
    /// Runs the aggregation layer. `keep` lists the surviving row indices
    /// of the downsampling step (already drawn by the caller so evaluation
    /// can be made deterministic and permutation tests can map selections).
    pub fn forward(
        &self,
        t: &mut Tape,
        points: Var,
        features: Var,
        fields: &[ReceptiveField],
        keep: &[usize],
        m: usize,
    ) -> Result<SalOutput> {
        // Local view: channel-wise max over each receptive field (center
        // included), then downsample.
        let mut idx = Vec::with_capacity(fields.len() * (m + 1));
        for f in fields {
            idx.push(f.center_index);
            idx.extend_from_slice(&f.neighbor_indices);
        }
        let gathered = t.gather_rows(features, &idx);
        let pooled = t.max_group_rows(gathered, m + 1); // N x D_in

        let pts_out = t.gather_rows(points, keep);
        let f_local = t.gather_rows(pooled, keep);

        // Receptive fields on the downsampled coordinates.
        let sub_fields = knn(t.value(pts_out), m)?;

        // Internal structural convolution at the coarser scale.
        let f_mid = self
            .scl
            .forward(t, pts_out, FeatureSource::Layer(f_local), &sub_fields);

        // Global view: channel-wise max over all points, broadcast back and
        // concatenated onto every row.
        let global = t.max_cols(f_mid); // 1 x D_mid
        let n_out = keep.len();
        let global_b = t.broadcast_rows(global, n_out);
        let f_out = t.concat_cols(f_mid, global_b); // N' x 2*D_mid

        Ok(SalOutput {
            points: pts_out,
            features: f_out,
            fields: sub_fields,
        })
    }
}

/// Reference (non-tape) local view aggregation: per-field channel-wise max
/// including the center, then seeded uniform downsampling to `floor(N/r)`.
pub fn local_view_aggregation(
    points: &Array2<f64>,
    features: &Array2<f64>,
    fields: &[ReceptiveField],
    r: f64,
    seed: u64,
    min_out: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = points.nrows();
    let d = features.ncols();
    let mut pooled = Array2::zeros((n, d));
    for (i, f) in fields.iter().enumerate() {
        for c in 0..d {
            let mut best = features[[f.center_index, c]];
            for &j in &f.neighbor_indices {
                best = best.max(features[[j, c]]);
            }
            pooled[[i, c]] = best;
        }
    }
    let n_out = (n as f64 / r).floor() as usize;
    if n_out < min_out {
        return Err(crate::error::Error::InsufficientAfterSampling {
            have: n_out,
            need: min_out,
        });
    }
    let keep = downsample_indices(n, n_out, seed);
    Ok((
        crate::geometry::select_rows(points, &keep),
        crate::geometry::select_rows(&pooled, &keep),
    ))
}

/// Reference global view aggregation: channel-wise max over all rows.
pub fn global_view_aggregation(features: &Array2<f64>) -> Array1<f64> {
    let d = features.ncols();
    Array1::from_shape_fn(d, |c| {
        features
            .column(c)
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn global_aggregation_single_point_is_identity() {
        let f = ndarray::array![[1.0, -2.0, 3.0]];
        let g = global_view_aggregation(&f);
        assert_eq!(g, ndarray::array![1.0, -2.0, 3.0]);
    }

    #[test]
    fn global_aggregation_permutation_invariant_and_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Array2::from_shape_fn((20, 6), |_| rng.gen_range(-1.0..1.0f64));
        let g = global_view_aggregation(&f);
        for c in 0..6 {
            let mut best = f64::NEG_INFINITY;
            for r in 0..20 {
                best = best.max(f[[r, c]]);
            }
            assert_eq!(g[c], best);
        }
        let mut shuffled = f.clone();
        for i in 0..10 {
            let a = shuffled.row(i).to_owned();
            let b = shuffled.row(19 - i).to_owned();
            shuffled.row_mut(i).assign(&b);
            shuffled.row_mut(19 - i).assign(&a);
        }
        assert_eq!(global_view_aggregation(&shuffled), g);
    }

    #[test]
    fn local_aggregation_identical_features_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = Array2::from_shape_fn((16, 3), |_| rng.gen_range(-1.0..1.0f64));
        let feats = Array2::from_elem((16, 4), 0.7);
        let fields = knn(&pts, 3).unwrap();
        let (_, pooled) = local_view_aggregation(&pts, &feats, &fields, 1.0, 0, 4).unwrap();
        assert!(pooled.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn local_aggregation_rate_shrinks_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Array2::from_shape_fn((1024, 3), |_| rng.gen_range(-1.0..1.0f64));
        let feats = Array2::from_shape_fn((1024, 2), |_| rng.gen_range(-1.0..1.0f64));
        let fields = knn(&pts, 3).unwrap();
        let (p, f) = local_view_aggregation(&pts, &feats, &fields, 4.0, 9, 4).unwrap();
        assert_eq!(p.nrows(), 256);
        assert_eq!(f.nrows(), 256);
    }

    #[test]
    fn local_aggregation_matches_explicit_member_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = Array2::from_shape_fn((12, 3), |_| rng.gen_range(-1.0..1.0f64));
        let feats = Array2::from_shape_fn((12, 5), |_| rng.gen_range(-1.0..1.0f64));
        let fields = knn(&pts, 3).unwrap();
        // r = 1 keeps everything, so pooled rows line up with input rows.
        let (_, pooled) = local_view_aggregation(&pts, &feats, &fields, 1.0, 0, 4).unwrap();
        for (i, fld) in fields.iter().enumerate() {
            for c in 0..5 {
                let members: Vec<f64> = std::iter::once(feats[[i, c]])
                    .chain(fld.neighbor_indices.iter().map(|&j| feats[[j, c]]))
                    .collect();
                let expect = members.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                assert_eq!(pooled[[i, c]], expect);
            }
        }
    }
}
