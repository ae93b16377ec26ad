//! Supervised training of the classifier and the pointwise reference model.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::layers::{MscnParams, NetworkConfig};
use crate::nn::{collect_registry, Binder, Dense, GradStore, Parameterized, LEAKY_SLOPE};
use crate::optim::Adam;
use crate::tape::Tape;
use crate::trainer::src_batch_grads;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 0.0004,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Plain supervised training: cross-entropy only, adaptive-moment updates.
pub fn train_source(
    dataset: &[PointCloud],
    config: &NetworkConfig,
    tc: &TrainConfig,
) -> Result<(MscnParams, Vec<EpochRecord>)> {
    if dataset.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    if tc.epochs == 0 {
        return Err(Error::Validation("epochs must be >= 1".into()));
    }
    let mut params = MscnParams::init(config, tc.seed)?;
    let mut opt = Adam::new(tc.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x7a17);
    let mut records = Vec::with_capacity(tc.epochs);
    let mut step = 0u64;
    for epoch in 0..tc.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut total = 0usize;
        let mut batches = 0usize;
        for chunk in epoch_batches(dataset.len(), tc.batch_size, &mut rng) {
            let batch: Vec<&PointCloud> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (store, stats) = src_batch_grads(&params, None, &batch, tc.seed ^ step)?;
            opt.step(&mut params, "mscn", &store);
            loss_sum += stats.loss;
            correct += stats.correct;
            total += stats.total;
            batches += 1;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / total as f64,
        };
        log::info!(
            "epoch {}: loss {:.4}, train acc {:.3}",
            record.epoch,
            record.loss,
            record.accuracy
        );
        records.push(record);
    }
    Ok((params, records))
}

/// Pointwise reference model: per-point MLP 3 -> 64 -> 128 -> 1024, global
/// max pooling, dense head. Unlike the structural network it depends on
/// absolute coordinates, so it normally runs with centroid-centering and
/// unit-sphere scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub mlp: Vec<Dense>,
    pub head: Vec<Dense>,
    pub num_classes: usize,
    pub normalize: bool,
}

impl BaselineParams {
    pub fn init(num_classes: usize, normalize: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = vec![
            Dense::init(3, 64, &mut rng),
            Dense::init(64, 128, &mut rng),
            Dense::init(128, 1024, &mut rng),
        ];
        let head = vec![
            Dense::init(1024, 512, &mut rng),
            Dense::init(512, 256, &mut rng),
            Dense::init(256, num_classes, &mut rng),
        ];
        BaselineParams {
            mlp,
            head,
            num_classes,
            normalize,
        }
    }
}

impl Parameterized for BaselineParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        for (i, d) in self.mlp.iter().enumerate() {
            d.visit(&crate::nn::join(prefix, &format!("mlp{i}")), f);
        }
        for (i, d) in self.head.iter().enumerate() {
            d.visit(&crate::nn::join(prefix, &format!("head{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        for (i, d) in self.mlp.iter_mut().enumerate() {
            d.visit_mut(&crate::nn::join(prefix, &format!("mlp{i}")), f);
        }
        for (i, d) in self.head.iter_mut().enumerate() {
            d.visit_mut(&crate::nn::join(prefix, &format!("head{i}")), f);
        }
    }
}

/// Centroid-centering plus unit-sphere scaling.
pub fn normalize_cloud(points: &Array2<f64>) -> Array2<f64> {
    let n = points.nrows() as f64;
    let centroid = points.sum_axis(ndarray::Axis(0)) / n;
    let mut out = points - &centroid.insert_axis(ndarray::Axis(0));
    let max_norm = out
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0f64, f64::max);
    if max_norm > 0.0 {
        out.mapv_inplace(|v| v / max_norm);
    }
    out
}

fn baseline_logits_tape(
    params: &BaselineParams,
    cloud: &PointCloud,
) -> (Tape, Vec<(String, crate::tape::Var)>, crate::tape::Var) {
    let input = if params.normalize {
        normalize_cloud(&cloud.points)
    } else {
        cloud.points.clone()
    };
    let mut tape = Tape::new();
    let mut binder = Binder::new(&mut tape);
    let mlp: Vec<_> = params
        .mlp
        .iter()
        .enumerate()
        .map(|(i, d)| d.bind(&mut binder, &format!("base.mlp{i}")))
        .collect();
    let head: Vec<_> = params
        .head
        .iter()
        .enumerate()
        .map(|(i, d)| d.bind(&mut binder, &format!("base.head{i}")))
        .collect();
    let t = &mut *binder.tape;
    let mut x = t.constant(input);
    for layer in &mlp {
        x = layer.forward(t, x);
        x = t.leaky_relu(x, LEAKY_SLOPE);
    }
    let mut y = t.max_cols(x);
    for (i, layer) in head.iter().enumerate() {
        y = layer.forward(t, y);
        if i + 1 < head.len() {
            y = t.leaky_relu(y, LEAKY_SLOPE);
        }
    }
    let registry = binder.into_registry();
    (tape, registry, y)
}

/// Inference logits for one cloud.
pub fn baseline_forward(params: &BaselineParams, cloud: &PointCloud) -> Result<Array1<f64>> {
    let (tape, _, logits) = baseline_logits_tape(params, cloud);
    let row = tape.value(logits).row(0).to_owned();
    if row.iter().all(|v| v.is_finite()) {
        Ok(row)
    } else {
        Err(Error::NumericOverflow("baseline logits".into()))
    }
}

fn baseline_batch_grads(
    params: &BaselineParams,
    batch: &[&PointCloud],
) -> Result<(GradStore, f64, usize)> {
    let scale = 1.0 / batch.len() as f64;
    let results: Vec<(GradStore, f64, bool)> = batch
        .par_iter()
        .map(|cloud| {
            let label = cloud
                .label
                .ok_or_else(|| Error::Validation("unlabeled cloud".into()))?;
            let (mut tape, registry, logits) = baseline_logits_tape(params, cloud);
            let loss = tape.softmax_cross_entropy(logits, &[label]);
            let loss_val = tape.scalar(loss);
            if !loss_val.is_finite() {
                return Err(Error::Divergence("baseline loss".into()));
            }
            let pred = tape
                .value(logits)
                .row(0)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            let grads = tape.backward(loss);
            let mut store = GradStore::new();
            collect_registry(&registry, &tape, &grads, &mut store);
            store.scale(scale);
            Ok((store, loss_val * scale, pred == label))
        })
        .collect::<Result<_>>()?;
    let mut store = GradStore::new();
    let mut loss = 0.0;
    let mut correct = 0;
    for (s, l, ok) in results {
        store.merge(s);
        loss += l;
        if ok {
            correct += 1;
        }
    }
    Ok((store, loss, correct))
}

/// Trains the pointwise reference model with cross-entropy.
pub fn train_baseline(
    dataset: &[PointCloud],
    num_classes: usize,
    normalize: bool,
    tc: &TrainConfig,
) -> Result<(BaselineParams, Vec<EpochRecord>)> {
    if dataset.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    let mut params = BaselineParams::init(num_classes, normalize, tc.seed);
    let mut opt = Adam::new(tc.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0xba5e);
    let mut records = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut total = 0usize;
        let mut batches = 0usize;
        for chunk in epoch_batches(dataset.len(), tc.batch_size, &mut rng) {
            let batch: Vec<&PointCloud> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (store, loss, c) = baseline_batch_grads(&params, &batch)?;
            opt.step(&mut params, "base", &store);
            loss_sum += loss;
            correct += c;
            total += batch.len();
            batches += 1;
        }
        records.push(EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / total as f64,
        });
    }
    Ok((params, records))
}

/// Baseline checkpoints reuse the tensor-blob format; the network config in
/// `meta.json` is only a carrier for `num_classes`.
pub fn save_baseline(
    dir: &std::path::Path,
    params: &BaselineParams,
    seed_history: &[u64],
) -> Result<()> {
    let mut meta = crate::checkpoint::CheckpointMeta {
        format_version: crate::checkpoint::FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: "baseline".to_string(),
        config: NetworkConfig::default_mscn(params.num_classes),
        seed_history: seed_history.to_vec(),
        tensors: Vec::new(),
        attrs: Default::default(),
    };
    meta.attrs
        .insert("normalize".into(), params.normalize.to_string());
    crate::checkpoint::save_tensors_with(dir, meta, &params.named_tensors())
}

pub fn load_baseline(
    dir: &std::path::Path,
) -> Result<(BaselineParams, crate::checkpoint::CheckpointMeta)> {
    let (meta, tensors) = crate::checkpoint::load_tensors(dir)?;
    if meta.kind != "baseline" {
        return Err(Error::Checkpoint(format!(
            "expected a baseline checkpoint, found kind {:?}",
            meta.kind
        )));
    }
    let normalize = meta
        .attrs
        .get("normalize")
        .map(|v| v == "true")
        .unwrap_or(true);
    let mut params = BaselineParams::init(meta.config.num_classes, normalize, 0);
    crate::checkpoint::restore_into(&mut params, &tensors)?;
    Ok((params, meta))
}
