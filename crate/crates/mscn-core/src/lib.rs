//! Structural convolution networks for domain-invariant point cloud
//! classification, plus a progressive unseen-domain expansion framework and
//! a desk-scale training/evaluation harness.

pub mod checkpoint;
pub mod error;
pub mod expansion;
pub mod geometry;
pub mod harness;
pub mod layers;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
