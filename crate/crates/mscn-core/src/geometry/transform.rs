//! Rigid/similarity perturbations and LiDAR-style channel decimation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// A geometric perturbation applied to a whole cloud. Labels and features
/// are never touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// Rotation about the z axis, in degrees.
    RotateZ { degrees: f64 },
    /// Rigid translation by a fixed vector.
    Translate { v: [f64; 3] },
    /// One rigid shift by a vector drawn uniformly from the ball of radius
    /// `dmax` (the whole cloud moves together).
    ShiftRandom { dmax: f64, seed: u64 },
    /// Uniform scaling by `s > 0`.
    Scale { s: f64 },
}

impl Transform {
    /// Short description used in metrics rows and CSV output.
    pub fn describe(&self) -> String {
        match self {
            Transform::RotateZ { degrees } => format!("rotate_z({degrees})"),
            Transform::Translate { v } => format!("translate({},{},{})", v[0], v[1], v[2]),
            Transform::ShiftRandom { dmax, seed } => format!("shift_random({dmax},seed={seed})"),
            Transform::Scale { s } => format!("scale({s})"),
        }
    }

    /// The sweep parameter this transform represents (angle, radius or factor).
    pub fn param(&self) -> f64 {
        match self {
            Transform::RotateZ { degrees } => *degrees,
            Transform::Translate { v } => (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt(),
            Transform::ShiftRandom { dmax, .. } => *dmax,
            Transform::Scale { s } => *s,
        }
    }
}

/// Applies a perturbation, returning a new cloud.
pub fn transform(cloud: &PointCloud, t: &Transform) -> Result<PointCloud> {
    let mut out = cloud.clone();
    match t {
        Transform::RotateZ { degrees } => {
            let rad = degrees.to_radians();
            let (s, c) = rad.sin_cos();
            for mut row in out.points.rows_mut() {
                let (x, y) = (row[0], row[1]);
                row[0] = c * x - s * y;
                row[1] = s * x + c * y;
            }
        }
        Transform::Translate { v } => {
            for mut row in out.points.rows_mut() {
                row[0] += v[0];
                row[1] += v[1];
                row[2] += v[2];
            }
        }
        Transform::ShiftRandom { dmax, seed } => {
            if *dmax < 0.0 {
                return Err(Error::Validation("shift radius must be >= 0".into()));
            }
            let v = sample_ball(*dmax, *seed);
            return transform(cloud, &Transform::Translate { v });
        }
        Transform::Scale { s } => {
            if *s <= 0.0 {
                return Err(Error::InvalidScale(*s));
            }
            out.points.mapv_inplace(|x| x * s);
        }
    }
    Ok(out)
}

/// One vector uniform in the closed ball of radius `dmax` (rejection sampling).
pub fn sample_ball(dmax: f64, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = [
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 <= 1.0 {
            return [v[0] * dmax, v[1] * dmax, v[2] * dmax];
        }
    }
}

/// Buckets points by elevation angle `asin(z / |p|)` into `total_channels`
/// equal-width bins and keeps only bins with index divisible by `keep_every`.
/// Simulates 128 -> 64 -> 32 style LiDAR channel-count drops.
pub fn decimate_channels(
    cloud: &PointCloud,
    total_channels: usize,
    keep_every: usize,
) -> Result<PointCloud> {
    if total_channels < 2 {
        return Err(Error::Validation("total_channels must be >= 2".into()));
    }
    if keep_every < 1 {
        return Err(Error::Validation("keep_every must be >= 1".into()));
    }
    if keep_every == 1 {
        return Ok(cloud.clone());
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let bin_width = std::f64::consts::PI / total_channels as f64;
    let mut keep = Vec::new();
    for (i, row) in cloud.points.rows().into_iter().enumerate() {
        let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
        let elev = if norm > 0.0 { (row[2] / norm).asin() } else { 0.0 };
        let bin = (((elev + half_pi) / bin_width) as usize).min(total_channels - 1);
        if bin % keep_every == 0 {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::DecimationEmpty);
    }
    Ok(cloud.select(&keep))
}
