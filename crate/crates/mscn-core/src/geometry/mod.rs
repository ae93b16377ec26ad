//! Point-cloud data model, neighborhoods, sampling, perturbations, synthetic
//! shapes, and file I/O. Every randomized operation takes an explicit 64-bit
//! seed and is pure given that seed.

mod cloud;
mod io;
mod knn;
mod sample;
mod synth;
mod transform;

pub use cloud::PointCloud;
pub(crate) use cloud::select_rows;
pub use io::{load_manifest, load_xyz, save_manifest, save_xyz, DatasetManifest, GeneratorParams};
pub use knn::{knn, ReceptiveField};
pub use sample::{downsample_indices, farthest_point_indices, random_downsample};
pub use synth::{generate_primitive, generate_primitive_with, CLASS_NAMES, NUM_CLASSES};
pub use transform::{decimate_channels, sample_ball, transform, Transform};
