//! Two-phase batched training. Each cloud's feature extractor runs on its
//! own tape (parallel across the batch); the pooled vectors are re-entered
//! as leaves on a shared tape where the head and the batch-level losses
//! live; the pooled gradients then seed backprop through the per-cloud
//! tapes. Gradient names line up by binding every tape with the same
//! prefixes ("mscn", "proj").

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expansion::{loss_nce, ProjectionHead};
use crate::geometry::PointCloud;
use crate::layers::{head_forward, MscnParams, Sampling};
use crate::nn::{collect_registry, Binder, GradStore};
use crate::tape::{Tape, Var};

/// A completed per-cloud feature pass, kept alive until its seed gradient
/// arrives.
pub struct CloudPass {
    pub tape: Tape,
    pub registry: Vec<(String, Var)>,
    pub pooled: Var,
}

/// Runs the feature extractor for one cloud on a fresh tape with trainable
/// bindings under the "mscn" prefix.
pub fn feature_pass(
    params: &MscnParams,
    cloud: &PointCloud,
    sampling: &Sampling,
) -> Result<CloudPass> {
    let mut tape = Tape::new();
    let mut binder = Binder::new(&mut tape);
    let vars = params.bind(&mut binder, "mscn");
    let points = binder.tape.constant(cloud.points.clone());
    let (pooled, _) = vars.forward_features(binder.tape, points, sampling)?;
    let registry = binder.into_registry();
    Ok(CloudPass {
        tape,
        registry,
        pooled,
    })
}

/// Seeds backprop through a finished pass and collects its parameter
/// gradients.
pub fn backprop_pass(mut pass: CloudPass, seed: Array2<f64>) -> GradStore {
    let grads = pass.tape.backward_with_seed(pass.pooled, seed);
    let mut store = GradStore::new();
    collect_registry(&pass.registry, &pass.tape, &grads, &mut store);
    store
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub loss: f64,
    pub ce: f64,
    pub nce: f64,
    pub correct: usize,
    pub total: usize,
}

fn stage_sampling(step_seed: u64, i: usize) -> Sampling {
    Sampling::Seed(step_seed ^ (i as u64 + 1).wrapping_mul(0x2545_f491_4f6c_dd1d))
}

/// Gradients of the supervised objective over one batch: cross-entropy on
/// every cloud, plus InfoNCE over projected embeddings when `proj` is given
/// (the batch must then be interleaved source/generated pairs).
pub fn src_batch_grads(
    params: &MscnParams,
    proj: Option<(&ProjectionHead, f64)>,
    batch: &[&PointCloud],
    step_seed: u64,
) -> Result<(GradStore, StepStats)> {
    assert!(!batch.is_empty());
    if proj.is_some() && (batch.len() % 2 != 0 || batch.len() < 4) {
        return Err(Error::Validation(
            "contrastive batches need at least two interleaved pairs".into(),
        ));
    }
    let labels: Vec<usize> = batch
        .iter()
        .map(|c| {
            c.label
                .ok_or_else(|| Error::Validation("unlabeled cloud in training batch".into()))
        })
        .collect::<Result<_>>()?;

    let passes: Vec<CloudPass> = batch
        .par_iter()
        .enumerate()
        .map(|(i, cloud)| feature_pass(params, cloud, &stage_sampling(step_seed, i)))
        .collect::<Result<_>>()?;

    let d = params.config.final_dim();
    let mut stacked = Array2::zeros((batch.len(), d));
    for (i, p) in passes.iter().enumerate() {
        stacked.row_mut(i).assign(&p.tape.value(p.pooled).row(0));
    }

    let mut tape = Tape::new();
    let mut binder = Binder::new(&mut tape);
    let head: Vec<_> = params
        .head
        .iter()
        .enumerate()
        .map(|(i, l)| l.bind(&mut binder, &format!("mscn.head{i}")))
        .collect();
    let proj_vars = proj.map(|(p, _)| p.bind(&mut binder, "proj"));
    let x = binder.tape.leaf(stacked);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(step_seed ^ 0xd1ce);
    let logits = head_forward(
        binder.tape,
        &head,
        x,
        params.config.dropout,
        Some(&mut drop_rng),
    );
    let registry = binder.into_registry();

    if !tape.value(logits).iter().all(|v| v.is_finite()) {
        return Err(Error::NumericOverflow("batch logits".into()));
    }
    let ce = tape.softmax_cross_entropy(logits, &labels);
    let total = match (proj_vars, proj) {
        (Some(pv), Some((_, temperature))) => {
            let z = pv.forward(&mut tape, x);
            let nce = loss_nce(&mut tape, z, temperature);
            tape.add(ce, nce)
        }
        _ => ce,
    };

    let loss_val = tape.scalar(total);
    if !loss_val.is_finite() {
        return Err(Error::Divergence(format!("batch loss {loss_val}")));
    }
    let grads = tape.backward(total);
    let mut store = GradStore::new();
    collect_registry(&registry, &tape, &grads, &mut store);
    let gx = grads.wrt(&tape, x);

    let cloud_stores: Vec<GradStore> = passes
        .into_par_iter()
        .enumerate()
        .map(|(i, pass)| {
            let seed = gx.row(i).to_owned().insert_axis(ndarray::Axis(0));
            backprop_pass(pass, seed)
        })
        .collect();
    for s in cloud_stores {
        store.merge(s);
    }
    if !store.is_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }

    let logit_vals = tape.value(logits);
    let mut correct = 0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logit_vals.row(i);
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        if pred == label {
            correct += 1;
        }
    }
    // The nce component, when present, is total - ce.
    let ce_val = tape.scalar(ce);
    let stats = StepStats {
        loss: loss_val,
        ce: ce_val,
        nce: loss_val - ce_val,
        correct,
        total: batch.len(),
    };
    Ok((store, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::generate_primitive;
    use crate::layers::NetworkConfig;
    use crate::nn::Parameterized;
    use crate::optim::Adam;

    fn toy_batch(n_points: usize) -> Vec<PointCloud> {
        (0..6)
            .map(|i| generate_primitive(i % 3, n_points, 100 + i as u64, 0.0).unwrap())
            .collect()
    }

    #[test]
    fn ce_steps_reduce_training_loss() {
        let config = NetworkConfig::tiny(3);
        let mut params = MscnParams::init(&config, 1).unwrap();
        let mut opt = Adam::new(0.005);
        let clouds = toy_batch(64);
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let (_, first) = src_batch_grads(&params, None, &refs, 0).unwrap();
        let mut last = first;
        for step in 0..30 {
            let (store, stats) = src_batch_grads(&params, None, &refs, step).unwrap();
            opt.step(&mut params, "mscn", &store);
            last = stats;
        }
        assert!(
            last.ce < first.ce,
            "ce did not improve: {} -> {}",
            first.ce,
            last.ce
        );
    }

    #[test]
    fn contrastive_batch_pulls_pairs_together() {
        let config = NetworkConfig::tiny(3);
        let params = MscnParams::init(&config, 2).unwrap();
        let proj = ProjectionHead::init(config.final_dim(), 16, 8, 3);
        // Interleaved pairs: each cloud appears with a jittered twin.
        let mut clouds = Vec::new();
        for i in 0..2 {
            let c = generate_primitive(i, 64, 50 + i as u64, 0.0).unwrap();
            let mut twin = c.clone();
            twin.points.mapv_inplace(|v| v * 1.01);
            clouds.push(c);
            clouds.push(twin);
        }
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let (store, stats) = src_batch_grads(&params, Some((&proj, 1.0)), &refs, 7).unwrap();
        assert!(stats.loss.is_finite());
        assert!(store.get("proj.fc1.w").is_some());
        assert!(store.get("mscn.block0.w_center").is_some());
    }

    #[test]
    fn batched_gradients_match_single_tape() {
        // One cloud, no dropout: the two-phase machinery must agree with a
        // monolithic forward pass through mscn_forward's loss.
        let mut config = NetworkConfig::tiny(3);
        config.dropout = 0.0;
        let params = MscnParams::init(&config, 4).unwrap();
        let cloud = generate_primitive(0, 64, 9, 0.0).unwrap();
        let refs = [&cloud];
        let (store, _) = src_batch_grads(&params, None, &refs, 11).unwrap();

        // Monolithic pass with the identical sampling seed.
        let mut tape = Tape::new();
        let mut binder = Binder::new(&mut tape);
        let vars = params.bind(&mut binder, "mscn");
        let points = binder.tape.constant(cloud.points.clone());
        let out = vars
            .forward(binder.tape, points, &stage_sampling(11, 0), None)
            .unwrap();
        let registry = binder.into_registry();
        let loss = tape.softmax_cross_entropy(out.logits, &[0]);
        let grads = tape.backward(loss);
        let mut mono = GradStore::new();
        collect_registry(&registry, &tape, &grads, &mut mono);

        for (name, _) in params.named_tensors() {
            let full = format!("mscn.{name}");
            let g = store.get(&full).unwrap();
            let m = mono.get(&full).unwrap();
            for (a, b) in g.iter().zip(m.iter()) {
                assert!((a - b).abs() < 1e-10, "{full}: {a} vs {b}");
            }
        }
    }
}
