//! `.xyz` point files and the dataset manifest.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Writes one point per line as `x y z`, full `f64` round-trip precision.
pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for row in cloud.points.rows() {
        // {:?} prints the shortest decimal that parses back to the same f64.
        writeln!(w, "{:?} {:?} {:?}", row[0], row[1], row[2])
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads an `.xyz` file. Malformed lines report their 1-based line number;
/// an empty file is an "insufficient points" error.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<[f64; 3]> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut vals = [0.0f64; 3];
        let mut parts = trimmed.split_whitespace();
        for v in vals.iter_mut() {
            let tok = parts.next().ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: "expected 3 coordinates".into(),
            })?;
            *v = tok.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("invalid number {tok:?}"),
            })?;
        }
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "trailing tokens after 3 coordinates".into(),
            });
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientPoints { have: 0, need: 1 });
    }
    let mut pts = Array2::zeros((rows.len(), 3));
    for (i, r) in rows.iter().enumerate() {
        pts[[i, 0]] = r[0];
        pts[[i, 1]] = r[1];
        pts[[i, 2]] = r[2];
    }
    Ok(PointCloud::new(pts))
}

/// Parameters used to synthesize a dataset, recorded for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorParams {
    pub shape_family: String,
    pub jitter_range: (f64, f64),
    pub occlusion_frac: f64,
    pub channel_count: usize,
    pub points_per_cloud: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            shape_family: "box-capsule".into(),
            jitter_range: (0.85, 1.15),
            occlusion_frac: 0.1,
            channel_count: 64,
            points_per_cloud: 1024,
        }
    }
}

/// Index of a generated dataset: file paths with class ids plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<(PathBuf, usize)>,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub generator_params: GeneratorParams,
}

impl DatasetManifest {
    /// Checks class ids against `class_names` and, when `base` is given,
    /// that every referenced file exists (paths are relative to `base`).
    pub fn validate(&self, base: Option<&Path>) -> Result<()> {
        for (path, class) in &self.entries {
            if *class >= self.class_names.len() {
                return Err(Error::Validation(format!(
                    "entry {} has unknown class id {class}",
                    path.display()
                )));
            }
            if let Some(base) = base {
                let full = base.join(path);
                if !full.exists() {
                    return Err(Error::Validation(format!(
                        "missing data file {}",
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.validate(path.parent())?;
    Ok(manifest)
}
