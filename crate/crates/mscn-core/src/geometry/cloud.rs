//! Point cloud data model.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A 3D point cloud: `N x 3` coordinates, optional per-point features and a
/// class label. Coordinates are unitless.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// `N x 3` coordinates.
    pub points: Array2<f64>,
    /// Optional `N x D` per-point feature matrix.
    pub features: Option<Array2<f64>>,
    /// Optional class id in `0..C`.
    pub label: Option<usize>,
    /// Free-form provenance tags (source, seed, resolution, ...).
    pub meta: BTreeMap<String, String>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Self {
        PointCloud {
            points,
            features: None,
            label: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_label(points: Array2<f64>, label: usize) -> Self {
        let mut c = Self::new(points);
        c.label = Some(label);
        c
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Checks the structural invariants: finite coordinates, matching feature
    /// row count, and (when `min_points` is given) a minimum size.
    pub fn validate(&self, min_points: Option<usize>) -> Result<()> {
        for (i, row) in self.points.rows().into_iter().enumerate() {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidCoordinates { index: i });
            }
        }
        if let Some(f) = &self.features {
            if f.nrows() != self.len() {
                return Err(Error::FeatureRowMismatch {
                    rows: f.nrows(),
                    points: self.len(),
                });
            }
        }
        if let Some(need) = min_points {
            if self.len() < need {
                return Err(Error::InsufficientPoints {
                    have: self.len(),
                    need,
                });
            }
        }
        Ok(())
    }

    /// Keeps only the rows listed in `indices` (in the given order); features
    /// follow their points.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = select_rows(&self.points, indices);
        let features = self.features.as_ref().map(|f| select_rows(f, indices));
        PointCloud {
            points,
            features,
            label: self.label,
            meta: self.meta.clone(),
        }
    }
}

pub(crate) fn select_rows(m: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), m.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&m.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn validate_rejects_nan() {
        let c = PointCloud::new(array![[0.0, 0.0, 0.0], [1.0, f64::NAN, 0.0]]);
        assert!(matches!(
            c.validate(None),
            Err(Error::InvalidCoordinates { index: 1 })
        ));
    }

    #[test]
    fn validate_rejects_feature_mismatch() {
        let mut c = PointCloud::new(array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        c.features = Some(Array2::zeros((3, 4)));
        assert!(matches!(c.validate(None), Err(Error::FeatureRowMismatch { .. })));
    }

    #[test]
    fn select_follows_features() {
        let mut c = PointCloud::new(array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        c.features = Some(array![[0.0], [1.0], [2.0]]);
        let s = c.select(&[2, 0]);
        assert_eq!(s.points[[0, 0]], 2.0);
        assert_eq!(s.features.as_ref().unwrap()[[0, 0]], 2.0);
        assert_eq!(s.features.as_ref().unwrap()[[1, 0]], 0.0);
    }
}
