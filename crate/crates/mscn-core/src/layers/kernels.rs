//! Direction- and distance-based convolution kernels and their scalar
//! reference operations.
//!
//! These scalar forms define the layer semantics; the vectorized tape
//! implementation in [`super::scl`] must agree with them (covered by tests).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::geometry::ReceptiveField;

/// Below this direction norm a pair of points is treated as coincident and
/// contributes no directional evidence (cosine factor 0).
pub const DEGENERATE_DIR_EPS: f64 = 1e-12;

/// One direction-based kernel: a center weight vector plus `S` branches,
/// each a weight vector with a 3D direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirKernel {
    /// `D_in` center weight.
    pub center_weight: Array1<f64>,
    /// `S x D_in` branch weights.
    pub branch_weights: Array2<f64>,
    /// `S x 3` branch directions; rows must be nonzero.
    pub branch_directions: Array2<f64>,
}

impl DirKernel {
    pub fn validate(&self) -> Result<()> {
        for (s, row) in self.branch_directions.rows().into_iter().enumerate() {
            let n2: f64 = row.iter().map(|x| x * x).sum();
            if n2 < DEGENERATE_DIR_EPS * DEGENERATE_DIR_EPS {
                return Err(Error::Validation(format!(
                    "branch direction {s} is (near-)zero"
                )));
            }
        }
        let finite = self.center_weight.iter().all(|v| v.is_finite())
            && self.branch_weights.iter().all(|v| v.is_finite())
            && self.branch_directions.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("non-finite kernel parameter".into()));
        }
        Ok(())
    }
}

/// One distance-based kernel: scalar center weight plus `S` branch weights.
/// Branches carry no directions; both weight groups multiply the
/// farthest-neighbor distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistKernel {
    pub center_weight: f64,
    /// Length `S`.
    pub branch_weights: Array1<f64>,
}

/// Feature/direction similarity: `<F(p_m), w_s> * cos(d_mn, b_s)`.
///
/// A degenerate `d_mn` (coincident points) yields 0 rather than NaN.
pub fn sim(
    f_pm: ArrayView1<f64>,
    w_s: ArrayView1<f64>,
    d_mn: ArrayView1<f64>,
    b_s: ArrayView1<f64>,
) -> f64 {
    let feat = f_pm.dot(&w_s);
    let d_norm = d_mn.dot(&d_mn).sqrt();
    let b_norm = b_s.dot(&b_s).sqrt();
    if d_norm < DEGENERATE_DIR_EPS || b_norm < DEGENERATE_DIR_EPS {
        return 0.0;
    }
    let cos = d_mn.dot(&b_s) / (d_norm * b_norm);
    feat * cos
}

/// Direction-based convolution of one receptive field with one kernel:
/// center inner product plus, per branch, the signed max of `sim` over the
/// field's neighbors.
///
/// `f_center` is the center point's feature; `f_neighbors` holds one row per
/// neighbor in field order (row `j` pairs with `field.directions` row `j`).
pub fn conv_dir(
    field: &ReceptiveField,
    f_center: ArrayView1<f64>,
    f_neighbors: ArrayView2<f64>,
    k: &DirKernel,
) -> Result<f64> {
    let d_in = k.center_weight.len();
    if f_center.len() != d_in {
        return Err(Error::DimMismatch {
            context: "conv_dir center feature".into(),
            expected: d_in,
            got: f_center.len(),
        });
    }
    if f_neighbors.ncols() != d_in || f_neighbors.nrows() != field.neighbor_indices.len() {
        return Err(Error::DimMismatch {
            context: "conv_dir neighbor features".into(),
            expected: d_in,
            got: f_neighbors.ncols(),
        });
    }
    let mut out = f_center.dot(&k.center_weight);
    for s in 0..k.branch_weights.nrows() {
        let w_s = k.branch_weights.row(s);
        let b_s = k.branch_directions.row(s);
        let mut best = f64::NEG_INFINITY;
        for m in 0..f_neighbors.nrows() {
            let v = sim(f_neighbors.row(m), w_s, field.directions.row(m), b_s);
            if v > best {
                best = v;
            }
        }
        out += best;
    }
    Ok(out)
}

/// Distance-based convolution: the farthest-neighbor distance times the sum
/// of all kernel weights (center and branches both multiply the distance, so
/// the result is exactly positively homogeneous in the point scale).
pub fn conv_dist(field: &ReceptiveField, k: &DistKernel) -> f64 {
    let max_dist = field
        .distances
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    (k.center_weight + k.branch_weights.sum()) * max_dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_field() -> ReceptiveField {
        ReceptiveField {
            center_index: 0,
            neighbor_indices: vec![1, 2, 3],
            directions: array![[1.0, 0.0, 0.0], [0.0, 1.5, 0.0], [0.0, 0.0, 0.5]],
            distances: vec![1.0, 1.5, 0.5],
        }
    }

    #[test]
    fn sim_orthogonal_is_zero() {
        let f = array![2.0, -1.0, 3.0];
        let w = array![0.5, 0.5, 0.5];
        let d = array![1.0, 0.0, 0.0];
        let b = array![0.0, 1.0, 0.0];
        assert_eq!(sim(f.view(), w.view(), d.view(), b.view()), 0.0);
    }

    #[test]
    fn sim_aligned_unit_basis_is_one() {
        let e1 = array![1.0, 0.0, 0.0];
        let d = array![2.0, 0.0, 0.0];
        let b = array![5.0, 0.0, 0.0];
        let v = sim(e1.view(), e1.view(), d.view(), b.view());
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sim_degenerate_direction_is_zero_not_nan() {
        let f = array![1.0, 2.0, 3.0];
        let d = array![0.0, 0.0, 0.0];
        let b = array![1.0, 0.0, 0.0];
        let v = sim(f.view(), f.view(), d.view(), b.view());
        assert_eq!(v, 0.0);
    }

    #[test]
    fn conv_dir_zero_kernel_is_zero() {
        let field = toy_field();
        let k = DirKernel {
            center_weight: Array1::zeros(3),
            branch_weights: Array2::zeros((1, 3)),
            branch_directions: array![[1.0, 0.0, 0.0]],
        };
        let f_center = array![1.0, 2.0, 3.0];
        let f_nbrs = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let v = conv_dir(&field, f_center.view(), f_nbrs.view(), &k).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn conv_dir_matches_exhaustive_enumeration() {
        // Independent evaluation: explicit loops over all (m, s) pairs.
        let field = toy_field();
        let k = DirKernel {
            center_weight: array![0.3, -0.7, 0.2],
            branch_weights: array![[0.5, 0.1, -0.4], [1.0, 0.0, 0.3]],
            branch_directions: array![[1.0, 1.0, 0.0], [0.0, -1.0, 2.0]],
        };
        let f_center = array![0.2, 0.4, -0.6];
        let f_nbrs = array![[1.0, 0.5, 0.0], [-0.3, 0.8, 0.1], [0.0, 0.2, 0.9]];

        let got = conv_dir(&field, f_center.view(), f_nbrs.view(), &k).unwrap();

        let mut expect = f_center.dot(&k.center_weight);
        for s in 0..2 {
            let mut best = f64::NEG_INFINITY;
            for m in 0..3 {
                let fw: f64 = f_nbrs.row(m).dot(&k.branch_weights.row(s));
                let d = field.directions.row(m);
                let b = k.branch_directions.row(s);
                let cos = d.dot(&b) / (d.dot(&d).sqrt() * b.dot(&b).sqrt());
                best = best.max(fw * cos);
            }
            expect += best;
        }
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn conv_dist_hand_case() {
        // S=1, branch weight 2, center 0, farthest neighbor at 1.5 -> 3.0.
        let field = toy_field();
        let k = DistKernel {
            center_weight: 0.0,
            branch_weights: array![2.0],
        };
        assert!((conv_dist(&field, &k) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn conv_dist_zero_weights_is_zero() {
        let field = toy_field();
        let k = DistKernel {
            center_weight: 0.0,
            branch_weights: Array1::zeros(3),
        };
        assert_eq!(conv_dist(&field, &k), 0.0);
    }

    #[test]
    fn conv_dist_scales_linearly_with_the_cloud() {
        let field = toy_field();
        let k = DistKernel {
            center_weight: 0.4,
            branch_weights: array![1.2, -0.3],
        };
        let base = conv_dist(&field, &k);
        for s in [0.01, 0.5, 2.0, 100.0] {
            let scaled = ReceptiveField {
                center_index: field.center_index,
                neighbor_indices: field.neighbor_indices.clone(),
                directions: field.directions.mapv(|x| x * s),
                distances: field.distances.iter().map(|d| d * s).collect(),
            };
            let v = conv_dist(&scaled, &k);
            assert!((v - s * base).abs() <= 1e-6 * base.abs().max(v.abs()));
        }
    }
}
