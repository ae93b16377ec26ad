//! Evaluation, perturbation sweeps, and cross-resolution experiments.

use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{decimate_channels, random_downsample, transform, PointCloud, Transform};
use crate::harness::metrics::{EvalOutcome, MetricsRow};
use crate::harness::train::{baseline_forward, BaselineParams};
use crate::layers::{mscn_forward, MscnParams, Sampling};

/// Aggregation-layer downsampling seed used for all evaluation, making eval
/// deterministic per (checkpoint, manifest, transform).
pub const EVAL_SEED: u64 = 0;

/// Either classifier under evaluation.
pub enum Model {
    Mscn(MscnParams),
    Baseline(BaselineParams),
}

impl Model {
    pub fn predict_logits(&self, cloud: &PointCloud) -> Result<Array1<f64>> {
        match self {
            Model::Mscn(p) => Ok(mscn_forward(cloud, p, &Sampling::Seed(EVAL_SEED))?.0),
            Model::Baseline(p) => baseline_forward(p, cloud),
        }
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        let logits = self.predict_logits(cloud)?;
        Ok(logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap())
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Mscn(p) => p.config.num_classes,
            Model::Baseline(p) => p.num_classes,
        }
    }
}

/// Loads either checkpoint kind, dispatching on `meta.json`.
pub fn load_model(dir: &std::path::Path) -> Result<Model> {
    let meta = crate::checkpoint::load_meta(dir)?;
    match meta.kind.as_str() {
        "mscn" => Ok(Model::Mscn(crate::checkpoint::load_mscn(dir)?.0)),
        "baseline" => Ok(Model::Baseline(crate::harness::train::load_baseline(dir)?.0)),
        other => Err(Error::Checkpoint(format!("unknown checkpoint kind {other:?}"))),
    }
}

/// Warm-up forward passes before latency timing.
const LATENCY_WARMUPS: usize = 10;
/// Clouds timed sequentially for the latency figure.
const LATENCY_SAMPLES: usize = 16;

/// Evaluates accuracy (and mean per-cloud latency in ms) over a labeled test
/// set, optionally perturbing every cloud first.
pub fn evaluate(
    model: &Model,
    clouds: &[PointCloud],
    perturb: Option<&Transform>,
    scenario: &str,
    seed: u64,
) -> Result<EvalOutcome> {
    if clouds.is_empty() {
        return Err(Error::Validation("empty evaluation set".into()));
    }
    let prepared: Vec<PointCloud> = match perturb {
        Some(t) => clouds
            .iter()
            .map(|c| transform(c, t))
            .collect::<Result<_>>()?,
        None => clouds.to_vec(),
    };

    let predictions: Vec<(usize, usize)> = prepared
        .par_iter()
        .map(|c| {
            let label = c
                .label
                .ok_or_else(|| Error::Validation("unlabeled cloud in evaluation set".into()))?;
            Ok((label, model.predict(c)?))
        })
        .collect::<Result<_>>()?;

    let num_classes = model.num_classes();
    let mut class_total = vec![0usize; num_classes];
    let mut class_correct = vec![0usize; num_classes];
    let mut correct = 0usize;
    for &(label, pred) in &predictions {
        class_total[label] += 1;
        if label == pred {
            class_correct[label] += 1;
            correct += 1;
        }
    }
    let per_class = class_total
        .iter()
        .zip(class_correct.iter())
        .map(|(&t, &c)| if t > 0 { c as f64 / t as f64 } else { 0.0 })
        .collect();

    // Single-cloud latency, sequential, after warm-up.
    for _ in 0..LATENCY_WARMUPS {
        model.predict(&prepared[0])?;
    }
    let sample = &prepared[..prepared.len().min(LATENCY_SAMPLES)];
    let start = Instant::now();
    for c in sample {
        model.predict(c)?;
    }
    let latency_ms = start.elapsed().as_secs_f64() * 1000.0 / sample.len() as f64;

    Ok(EvalOutcome {
        row: MetricsRow {
            scenario: scenario.to_string(),
            transform: perturb.map_or_else(|| "identity".to_string(), |t| t.describe()),
            param: perturb.map_or(0.0, |t| t.param()),
            accuracy: correct as f64 / predictions.len() as f64,
            per_class,
            latency_ms,
            seed,
        },
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Rotation,
    Shift,
    Scale,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub kind: SweepKind,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl SweepGrid {
    /// Rotation about the upward axis, 0..100 degrees in steps of 10.
    pub fn rotation_default(seed: u64) -> Self {
        SweepGrid {
            kind: SweepKind::Rotation,
            values: (0..=10).map(|i| 10.0 * i as f64).collect(),
            seed,
        }
    }

    /// Random shifts with radius 0..100 units in steps of 10.
    pub fn shift_default(seed: u64) -> Self {
        SweepGrid {
            kind: SweepKind::Shift,
            values: (0..=10).map(|i| 10.0 * i as f64).collect(),
            seed,
        }
    }

    /// Log-spaced scale factors from 0.01 to 100.
    pub fn scale_default(seed: u64) -> Self {
        SweepGrid {
            kind: SweepKind::Scale,
            values: (-4..=4).map(|i| 10f64.powf(i as f64 / 2.0)).collect(),
            seed,
        }
    }

    fn transform_at(&self, value: f64) -> Transform {
        match self.kind {
            SweepKind::Rotation => Transform::RotateZ { degrees: value },
            SweepKind::Shift => Transform::ShiftRandom {
                dmax: value,
                seed: self.seed,
            },
            SweepKind::Scale => Transform::Scale { s: value },
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            SweepKind::Rotation => "rotation",
            SweepKind::Shift => "shift",
            SweepKind::Scale => "scale",
        }
    }
}

/// Evaluates accuracy at every grid point, returning outcomes sorted by grid
/// value.
pub fn perturbation_sweep(
    model: &Model,
    clouds: &[PointCloud],
    grid: &SweepGrid,
    scenario: &str,
) -> Result<Vec<EvalOutcome>> {
    if grid.values.is_empty() {
        return Err(Error::Validation("empty sweep grid".into()));
    }
    let mut values = grid.values.clone();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values
        .iter()
        .map(|&v| {
            let t = grid.transform_at(v);
            let mut outcome = evaluate(model, clouds, Some(&t), scenario, grid.seed)?;
            outcome.row.param = v;
            Ok(outcome)
        })
        .collect()
}

/// A named test-set resolution variant.
pub struct ResolutionVariant {
    pub name: String,
    pub clouds: Vec<PointCloud>,
}

/// Derives lower-resolution variants of a test set: random downsampling to
/// `n_points / 4` and pseudo-channel decimation (keep every 2nd of
/// `channels` elevation bins).
pub fn resolution_variants(
    clouds: &[PointCloud],
    channels: usize,
    seed: u64,
) -> Result<Vec<ResolutionVariant>> {
    let base = ResolutionVariant {
        name: "full".into(),
        clouds: clouds.to_vec(),
    };
    let quarter: Vec<PointCloud> = clouds
        .iter()
        .enumerate()
        .map(|(i, c)| random_downsample(c, 4.0, seed ^ i as u64, 4))
        .collect::<Result<_>>()?;
    let decimated: Vec<PointCloud> = clouds
        .iter()
        .map(|c| decimate_channels(c, channels, 2))
        .collect::<Result<_>>()?;
    Ok(vec![
        base,
        ResolutionVariant {
            name: "quarter_points".into(),
            clouds: quarter,
        },
        ResolutionVariant {
            name: "half_channels".into(),
            clouds: decimated,
        },
    ])
}

/// Accuracy per variant plus the drop relative to the first (full) variant.
pub fn cross_resolution_eval(
    model: &Model,
    variants: &[ResolutionVariant],
    seed: u64,
) -> Result<Vec<(EvalOutcome, f64)>> {
    let mut out: Vec<(EvalOutcome, f64)> = Vec::with_capacity(variants.len());
    let mut base_acc = None;
    for v in variants {
        let outcome = evaluate(model, &v.clouds, None, &format!("cross_res/{}", v.name), seed)?;
        let acc = outcome.row.accuracy;
        let drop = base_acc.map_or(0.0, |b: f64| b - acc);
        if base_acc.is_none() {
            base_acc = Some(acc);
        }
        out.push((outcome, drop));
    }
    Ok(out)
}
