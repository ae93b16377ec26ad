//! Receptive field construction: per-point M nearest neighbors with relative
//! direction vectors.

use ndarray::Array2;

use crate::error::{Error, Result};

/// A point together with its `M` nearest neighbors.
///
/// `directions[j]` is `p_m - p_n` for the j-th neighbor and `distances[j]`
/// its Euclidean norm. Neighbors are ordered by `(distance, index)`; distance
/// ties break toward the smaller point index so construction is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveField {
    pub center_index: usize,
    pub neighbor_indices: Vec<usize>,
    /// `M x 3` relative directions `p_m - p_n`.
    pub directions: Array2<f64>,
    pub distances: Vec<f64>,
}

/// Builds the receptive field of every point: its `M` nearest neighbors
/// (self excluded) under squared Euclidean distance with the smaller-index
/// tie-break.
pub fn knn(points: &Array2<f64>, m: usize) -> Result<Vec<ReceptiveField>> {
    let n = points.nrows();
    if n < m + 1 {
        return Err(Error::InsufficientPoints { have: n, need: m + 1 });
    }
    for (i, row) in points.rows().into_iter().enumerate() {
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCoordinates { index: i });
        }
    }

    let mut fields = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        let pi = points.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let pj = points.row(j);
            let d2 = (pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2) + (pi[2] - pj[2]).powi(2);
            cand.push((d2, j));
        }
        cand.select_nth_unstable_by(m - 1, |a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        });
        let mut nearest: Vec<(f64, usize)> = cand[..m].to_vec();
        nearest.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let mut directions = Array2::zeros((m, 3));
        let mut distances = Vec::with_capacity(m);
        let mut neighbor_indices = Vec::with_capacity(m);
        for (r, &(_, j)) in nearest.iter().enumerate() {
            let pj = points.row(j);
            for k in 0..3 {
                directions[[r, k]] = pj[k] - pi[k];
            }
            distances.push(
                (directions[[r, 0]].powi(2)
                    + directions[[r, 1]].powi(2)
                    + directions[[r, 2]].powi(2))
                .sqrt(),
            );
            neighbor_indices.push(j);
        }
        fields.push(ReceptiveField {
            center_index: i,
            neighbor_indices,
            directions,
            distances,
        });
    }
    Ok(fields)
}
