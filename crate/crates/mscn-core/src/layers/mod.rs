//! Differentiable SCL and SAL layers and the assembled classifier.

pub mod config;
pub mod kernels;
pub mod network;
pub mod sal;
pub mod scl;

pub use config::{FeatureMode, LayerSpec, NetworkConfig, SamplingStrategy};
pub use kernels::{conv_dir, conv_dist, sim, DirKernel, DistKernel};
pub use network::{head_forward, mscn_forward, Block, ForwardOutput, MscnParams, MscnVars, Sampling};
pub use sal::{SalParams, SalVars};
pub use scl::{FeatureSource, SclParams, SclVars};
