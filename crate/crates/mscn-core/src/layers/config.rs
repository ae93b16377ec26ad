//! Network architecture description.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entry of the layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Scl { d_in: usize, d_out: usize },
    /// Aggregation layer: local pooling + downsample by `r`, an internal
    /// `SCL(d_in, d_mid)`, then global-feature concatenation. Output width
    /// is `2 * d_mid`.
    Sal { d_in: usize, d_mid: usize, r: f64 },
}

/// What the first SCL uses as point features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Center feature is the constant (1,1,1); neighbor features are the
    /// relative direction vectors. Makes the network exactly
    /// translation-invariant.
    #[default]
    Relative,
    /// Raw coordinates as features (ablation only; breaks translation
    /// invariance).
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Uniform random without replacement (seeded).
    #[default]
    Random,
    /// Farthest-point sampling from a canonical start; deterministic and
    /// seed-independent.
    FarthestPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers: Vec<LayerSpec>,
    /// Neighbors per receptive field.
    pub m: usize,
    /// Branches per kernel.
    pub s: usize,
    /// Hidden widths of the classification head.
    pub head: Vec<usize>,
    pub num_classes: usize,
    pub dropout: f64,
    #[serde(default)]
    pub feature_mode: FeatureMode,
    #[serde(default)]
    pub sampling: SamplingStrategy,
}

impl NetworkConfig {
    /// The default stack: SCL(3,32) -> SCL(32,64) -> SAL(64, mid 128, r=4)
    /// -> SAL(256, mid 512, r=4) -> 1024-dim global pool -> 512 -> 256 -> C.
    /// Four structural convolutions in total (two standalone, two inside the
    /// aggregation layers) and two aggregation layers.
    pub fn default_mscn(num_classes: usize) -> Self {
        NetworkConfig {
            layers: vec![
                LayerSpec::Scl { d_in: 3, d_out: 32 },
                LayerSpec::Scl { d_in: 32, d_out: 64 },
                LayerSpec::Sal { d_in: 64, d_mid: 128, r: 4.0 },
                LayerSpec::Sal { d_in: 256, d_mid: 512, r: 4.0 },
            ],
            m: 3,
            s: 1,
            head: vec![512, 256],
            num_classes,
            dropout: 0.5,
            feature_mode: FeatureMode::Relative,
            sampling: SamplingStrategy::Random,
        }
    }

    /// Convolution-only ablation: five stacked SCLs, no aggregation layers.
    pub fn scl_only(num_classes: usize) -> Self {
        NetworkConfig {
            layers: vec![
                LayerSpec::Scl { d_in: 3, d_out: 32 },
                LayerSpec::Scl { d_in: 32, d_out: 64 },
                LayerSpec::Scl { d_in: 64, d_out: 128 },
                LayerSpec::Scl { d_in: 128, d_out: 256 },
                LayerSpec::Scl { d_in: 256, d_out: 1024 },
            ],
            m: 3,
            s: 1,
            head: vec![512, 256],
            num_classes,
            dropout: 0.5,
            feature_mode: FeatureMode::Relative,
            sampling: SamplingStrategy::Random,
        }
    }

    /// A slim stack with the same shape as the default, for fast tests.
    pub fn tiny(num_classes: usize) -> Self {
        NetworkConfig {
            layers: vec![
                LayerSpec::Scl { d_in: 3, d_out: 8 },
                LayerSpec::Scl { d_in: 8, d_out: 16 },
                LayerSpec::Sal { d_in: 16, d_mid: 16, r: 2.0 },
                LayerSpec::Sal { d_in: 32, d_mid: 32, r: 2.0 },
            ],
            m: 3,
            s: 1,
            head: vec![32],
            num_classes,
            dropout: 0.5,
            feature_mode: FeatureMode::Relative,
            sampling: SamplingStrategy::Random,
        }
    }

    /// Checks the dimension chain and basic hyperparameters.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Validation("empty layer stack".into()));
        }
        if self.m == 0 || self.s == 0 {
            return Err(Error::Validation("M and S must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Validation("need at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation("dropout must be in [0,1)".into()));
        }
        let mut cur = 3usize;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Scl { d_in, d_out } => {
                    if d_in != cur {
                        return Err(Error::DimMismatch {
                            context: format!("layer {i} input"),
                            expected: cur,
                            got: d_in,
                        });
                    }
                    cur = d_out;
                }
                LayerSpec::Sal { d_in, d_mid, r } => {
                    if d_in != cur {
                        return Err(Error::DimMismatch {
                            context: format!("layer {i} input"),
                            expected: cur,
                            got: d_in,
                        });
                    }
                    if r < 1.0 {
                        return Err(Error::Validation(format!(
                            "layer {i}: sampling rate {r} must be >= 1"
                        )));
                    }
                    cur = 2 * d_mid;
                }
            }
        }
        Ok(())
    }

    /// Width of the globally pooled feature vector.
    pub fn final_dim(&self) -> usize {
        let mut cur = 3usize;
        for layer in &self.layers {
            cur = match *layer {
                LayerSpec::Scl { d_out, .. } => d_out,
                LayerSpec::Sal { d_mid, .. } => 2 * d_mid,
            };
        }
        cur
    }

    /// Minimum input size: every SAL shrinks the cloud by its rate, and the
    /// smallest stage must still support M+1-point neighborhoods.
    pub fn min_points(&self) -> usize {
        let mut shrink = 1.0f64;
        for layer in &self.layers {
            if let LayerSpec::Sal { r, .. } = layer {
                shrink *= r;
            }
        }
        (((self.m + 1) as f64) * shrink).ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stack_validates_and_pools_1024() {
        let c = NetworkConfig::default_mscn(3);
        c.validate().unwrap();
        assert_eq!(c.final_dim(), 1024);
        assert_eq!(c.min_points(), 64);
    }

    #[test]
    fn scl_only_ablation_validates() {
        let c = NetworkConfig::scl_only(3);
        c.validate().unwrap();
        assert_eq!(c.final_dim(), 1024);
        assert_eq!(c.min_points(), 4);
    }

    #[test]
    fn broken_chain_rejected() {
        let mut c = NetworkConfig::default_mscn(3);
        c.layers[1] = LayerSpec::Scl { d_in: 16, d_out: 64 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = NetworkConfig::default_mscn(3);
        let json = serde_json::to_string(&c).unwrap();
        let back: NetworkConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
