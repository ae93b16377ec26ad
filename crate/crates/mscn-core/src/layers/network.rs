//! The assembled classifier: layer stack, global max pooling, and the
//! classification head.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{downsample_indices, farthest_point_indices, knn, PointCloud};
use crate::layers::config::{FeatureMode, LayerSpec, NetworkConfig, SamplingStrategy};
use crate::layers::sal::{SalParams, SalVars};
use crate::layers::scl::{FeatureSource, SclParams, SclVars};
use crate::nn::{dropout_mask, join, Binder, Dense, DenseVars, Parameterized, LEAKY_SLOPE};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Scl(SclParams),
    Sal(SalParams),
}

/// All learnable tensors of one MSCN instance, plus its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct MscnParams {
    pub config: NetworkConfig,
    pub blocks: Vec<Block>,
    pub head: Vec<Dense>,
}

impl MscnParams {
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::new();
        for layer in &config.layers {
            blocks.push(match *layer {
                LayerSpec::Scl { d_in, d_out } => {
                    Block::Scl(SclParams::init(d_in, d_out, config.s, &mut rng))
                }
                LayerSpec::Sal { d_in, d_mid, r } => {
                    Block::Sal(SalParams::init(d_in, d_mid, config.s, r, &mut rng))
                }
            });
        }
        let mut head = Vec::new();
        let mut cur = config.final_dim();
        for &w in &config.head {
            head.push(Dense::init(cur, w, &mut rng));
            cur = w;
        }
        head.push(Dense::init(cur, config.num_classes, &mut rng));
        Ok(MscnParams {
            config: config.clone(),
            blocks,
            head,
        })
    }

    /// The standalone SCL blocks in stack order (the generator encoder
    /// reuses the first two of these).
    pub fn scl_blocks(&self) -> Vec<&SclParams> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                Block::Scl(p) => Some(p),
                Block::Sal(_) => None,
            })
            .collect()
    }

    pub fn bind(&self, b: &mut Binder<'_>, prefix: &str) -> MscnVars {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, blk)| match blk {
                Block::Scl(p) => BlockVars::Scl(p.bind(b, &join(prefix, &format!("block{i}")))),
                Block::Sal(p) => BlockVars::Sal(p.bind(b, &join(prefix, &format!("block{i}")))),
            })
            .collect();
        let head = self
            .head
            .iter()
            .enumerate()
            .map(|(i, d)| d.bind(b, &join(prefix, &format!("head{i}"))))
            .collect();
        MscnVars {
            blocks,
            head,
            m: self.config.m,
            feature_mode: self.config.feature_mode,
            sampling_strategy: self.config.sampling,
            dropout: self.config.dropout,
        }
    }

    /// Binds every tensor as a constant: the whole network participates in
    /// forward passes (gradients still flow through its inputs) but none of
    /// its parameters are updated.
    pub fn bind_frozen(&self, b: &mut Binder<'_>) -> MscnVars {
        let blocks = self
            .blocks
            .iter()
            .map(|blk| match blk {
                Block::Scl(p) => BlockVars::Scl(p.bind_frozen(b)),
                Block::Sal(p) => BlockVars::Sal(p.bind_frozen(b)),
            })
            .collect();
        let head = self.head.iter().map(|d| d.bind_frozen(b)).collect();
        MscnVars {
            blocks,
            head,
            m: self.config.m,
            feature_mode: self.config.feature_mode,
            sampling_strategy: self.config.sampling,
            dropout: self.config.dropout,
        }
    }
}

impl Parameterized for MscnParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        for (i, blk) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            match blk {
                Block::Scl(s) => s.visit(&p, f),
                Block::Sal(s) => s.visit(&p, f),
            }
        }
        for (i, d) in self.head.iter().enumerate() {
            d.visit(&join(prefix, &format!("head{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            match blk {
                Block::Scl(s) => s.visit_mut(&p, f),
                Block::Sal(s) => s.visit_mut(&p, f),
            }
        }
        for (i, d) in self.head.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("head{i}")), f);
        }
    }
}

pub enum BlockVars {
    Scl(SclVars),
    Sal(SalVars),
}

pub struct MscnVars {
    pub blocks: Vec<BlockVars>,
    pub head: Vec<DenseVars>,
    m: usize,
    feature_mode: FeatureMode,
    sampling_strategy: SamplingStrategy,
    dropout: f64,
}

/// How SAL downsampling indices are chosen for one forward pass.
#[derive(Debug, Clone)]
pub enum Sampling {
    /// Derive each aggregation stage's selection from this seed.
    Seed(u64),
    /// Use these exact per-stage row selections (indices into each stage's
    /// input ordering). Lets tests map selections through permutations.
    Explicit(Vec<Vec<usize>>),
}

pub struct ForwardOutput {
    /// `1 x C` class logits.
    pub logits: Var,
    /// `1 x final_dim` globally pooled feature vector.
    pub pooled: Var,
    /// The row selection actually used at each aggregation stage.
    pub selections: Vec<Vec<usize>>,
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed ^ (stage as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Classification head: dense layers with a leaky rectifier (and optional
/// seeded dropout) between them, linear output.
pub fn head_forward(
    t: &mut Tape,
    head: &[DenseVars],
    mut x: Var,
    dropout: f64,
    mut drop_rng: Option<&mut ChaCha8Rng>,
) -> Var {
    for (i, layer) in head.iter().enumerate() {
        x = layer.forward(t, x);
        if i + 1 < head.len() {
            x = t.leaky_relu(x, LEAKY_SLOPE);
            if let Some(rng) = drop_rng.as_deref_mut() {
                if dropout > 0.0 {
                    let mask = dropout_mask(t.value(x).dim(), dropout, rng);
                    let mask = t.constant(mask);
                    x = t.mul(x, mask);
                }
            }
        }
    }
    x
}

impl MscnVars {
    /// Feature extractor half: layer stack plus global max pooling, stopping
    /// before the head. Returns the pooled `1 x final_dim` vector.
    pub fn forward_features(
        &self,
        t: &mut Tape,
        points: Var,
        sampling: &Sampling,
    ) -> Result<(Var, Vec<Vec<usize>>)> {
        let mut cur_points = points;
        let mut fields = knn(t.value(points), self.m)?;
        let mut feats = match self.feature_mode {
            FeatureMode::Relative => FeatureSource::Relative,
            FeatureMode::Absolute => FeatureSource::Absolute,
        };
        let mut selections = Vec::new();
        let mut sal_stage = 0usize;

        for block in &self.blocks {
            match block {
                BlockVars::Scl(scl) => {
                    let f = scl.forward(t, cur_points, feats, &fields);
                    feats = FeatureSource::Layer(f);
                }
                BlockVars::Sal(sal) => {
                    let f_in = match feats {
                        FeatureSource::Layer(f) => f,
                        // A SAL as the first layer would aggregate raw
                        // coordinates; the configs we build never do this.
                        _ => {
                            return Err(Error::Validation(
                                "aggregation layer requires layer features".into(),
                            ))
                        }
                    };
                    let n_cur = t.value(cur_points).nrows();
                    let n_out = (n_cur as f64 / sal.r).floor() as usize;
                    if n_out < self.m + 1 {
                        return Err(Error::InsufficientAfterSampling {
                            have: n_out,
                            need: self.m + 1,
                        });
                    }
                    let keep = match sampling {
                        Sampling::Explicit(stages) => {
                            let sel = stages.get(sal_stage).ok_or_else(|| {
                                Error::Validation(format!(
                                    "missing explicit selection for stage {sal_stage}"
                                ))
                            })?;
                            if sel.len() != n_out || sel.iter().any(|&i| i >= n_cur) {
                                return Err(Error::Validation(format!(
                                    "bad explicit selection for stage {sal_stage}"
                                )));
                            }
                            sel.clone()
                        }
                        Sampling::Seed(seed) => match self.sampling_strategy {
                            SamplingStrategy::Random => {
                                downsample_indices(n_cur, n_out, stage_seed(*seed, sal_stage))
                            }
                            SamplingStrategy::FarthestPoint => {
                                farthest_point_indices(t.value(cur_points), n_out)
                            }
                        },
                    };
                    let out = sal.forward(t, cur_points, f_in, &fields, &keep, self.m)?;
                    cur_points = out.points;
                    fields = out.fields;
                    feats = FeatureSource::Layer(out.features);
                    selections.push(keep);
                    sal_stage += 1;
                }
            }
        }

        let final_f = match feats {
            FeatureSource::Layer(f) => f,
            _ => return Err(Error::Validation("empty layer stack".into())),
        };
        let pooled = t.max_cols(final_f); // 1 x final_dim
        Ok((pooled, selections))
    }

    /// Full forward pass from an `N x 3` coordinate variable to class logits.
    /// Gradients flow into `points` as well as all bound parameters.
    /// `dropout_seed` enables head dropout (training only).
    pub fn forward(
        &self,
        t: &mut Tape,
        points: Var,
        sampling: &Sampling,
        dropout_seed: Option<u64>,
    ) -> Result<ForwardOutput> {
        let (pooled, selections) = self.forward_features(t, points, sampling)?;
        let mut drop_rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let x = head_forward(t, &self.head, pooled, self.dropout, drop_rng.as_mut());
        if !t.value(x).iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow("classifier logits".into()));
        }
        Ok(ForwardOutput {
            logits: x,
            pooled,
            selections,
        })
    }
}

/// Inference entry point: runs the classifier on one cloud and returns the
/// logits plus the downsampling selections that were used.
pub fn mscn_forward(
    cloud: &PointCloud,
    params: &MscnParams,
    sampling: &Sampling,
) -> Result<(Array1<f64>, Vec<Vec<usize>>)> {
    cloud.validate(Some(params.config.min_points()))?;
    let mut tape = Tape::new();
    let mut binder = Binder::new(&mut tape);
    let vars = params.bind(&mut binder, "mscn");
    let points = binder.tape.leaf(cloud.points.clone());
    let out = vars.forward(binder.tape, points, sampling, None)?;
    let logits = tape.value(out.logits).row(0).to_owned();
    Ok((logits, out.selections))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::generate_primitive;

    #[test]
    fn default_config_produces_three_finite_logits() {
        let config = NetworkConfig::default_mscn(3);
        let params = MscnParams::init(&config, 1).unwrap();
        let cloud = generate_primitive(0, 1024, 5, 0.1).unwrap();
        let (logits, selections) = mscn_forward(&cloud, &params, &Sampling::Seed(0)).unwrap();
        assert_eq!(logits.len(), 3);
        assert!(logits.iter().all(|v| v.is_finite()));
        assert_eq!(selections.len(), 2);
        assert_eq!(selections[0].len(), 256);
        assert_eq!(selections[1].len(), 64);
    }

    #[test]
    fn scl_only_ablation_runs() {
        let config = NetworkConfig::scl_only(3);
        let params = MscnParams::init(&config, 2).unwrap();
        let cloud = generate_primitive(1, 64, 6, 0.0).unwrap();
        let (logits, selections) = mscn_forward(&cloud, &params, &Sampling::Seed(0)).unwrap();
        assert_eq!(logits.len(), 3);
        assert!(selections.is_empty());
    }

    #[test]
    fn translation_leaves_logits_nearly_unchanged() {
        let config = NetworkConfig::tiny(3);
        let params = MscnParams::init(&config, 3).unwrap();
        let cloud = generate_primitive(2, 128, 7, 0.0).unwrap();
        let (base, _) = mscn_forward(&cloud, &params, &Sampling::Seed(0)).unwrap();
        let moved = crate::geometry::transform(
            &cloud,
            &crate::geometry::Transform::Translate { v: [50.0, 50.0, 50.0] },
        )
        .unwrap();
        let (shifted, _) = mscn_forward(&moved, &params, &Sampling::Seed(0)).unwrap();
        for (a, b) in base.iter().zip(shifted.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn same_seed_is_deterministic() {
        let config = NetworkConfig::tiny(3);
        let params = MscnParams::init(&config, 4).unwrap();
        let cloud = generate_primitive(0, 128, 8, 0.1).unwrap();
        let (a, _) = mscn_forward(&cloud, &params, &Sampling::Seed(9)).unwrap();
        let (b, _) = mscn_forward(&cloud, &params, &Sampling::Seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_small_cloud_is_rejected() {
        let config = NetworkConfig::default_mscn(3);
        let params = MscnParams::init(&config, 1).unwrap();
        let cloud = generate_primitive(0, 32, 5, 0.0).unwrap();
        assert!(mscn_forward(&cloud, &params, &Sampling::Seed(0)).is_err());
    }
}
