//! Progressive unseen-domain expansion: alternating generator/classifier
//! training, per-cycle pool snapshots, and the cycle scheduler.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::generator::{generate, sample_noise, Generator, ProjectionHead};
use crate::expansion::losses::{clip_max, loss_nce_star, loss_recon};
use crate::geometry::PointCloud;
use crate::layers::{head_forward, MscnParams, Sampling};
use crate::nn::{collect_registry, Binder, GradStore};
use crate::optim::Adam;
use crate::tape::{Tape, Var};
use crate::trainer::src_batch_grads;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Number of generated domains (k cycles).
    pub cycles: usize,
    /// Classifier epochs per cycle; 20 cycles x 15 epochs = the paper's 300.
    pub epochs_per_cycle: usize,
    /// Generator (adversarial) epochs at the start of each cycle.
    pub generator_epochs: usize,
    /// Positive pairs per batch; the batch holds 2x this many clouds.
    pub batch_pairs: usize,
    pub lr: f64,
    pub temperature: f64,
    /// Cap on the maximized diversity term.
    pub div_margin: f64,
    /// Noise dimension d_n.
    pub d_n: usize,
    pub seed: u64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            cycles: 20,
            epochs_per_cycle: 15,
            generator_epochs: 3,
            batch_pairs: 8,
            lr: 0.0004,
            temperature: 1.0,
            div_margin: 1.0,
            d_n: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub generator_loss: f64,
    pub model_loss: f64,
    pub model_accuracy: f64,
}

/// Bookkeeping across cycles. Pools are append-only: one snapshot per cycle,
/// each holding one generated counterpart per source cloud (same index).
pub struct ExpansionState {
    pub cycle: usize,
    pub model_epochs_run: usize,
    pub pools: Vec<Vec<PointCloud>>,
    pub encoder_hash: String,
    pub history: Vec<CycleRecord>,
}

struct GenCloudPass {
    tape: Tape,
    registry: Vec<(String, Var)>,
    partial: Var,
    pooled_gen: Var,
    pooled_src: Array1<f64>,
}

fn gen_cloud_pass(
    gen: &Generator,
    mscn: &MscnParams,
    cloud: &PointCloud,
    noises: &(Array1<f64>, Array1<f64>),
    div_margin: f64,
    seed: u64,
) -> Result<GenCloudPass> {
    let label = cloud
        .label
        .ok_or_else(|| Error::Validation("unlabeled cloud in expansion batch".into()))?;
    let mut tape = Tape::new();
    let mut binder = Binder::new(&mut tape);
    let gen_vars = gen.bind(&mut binder, "gen");
    let mscn_vars = mscn.bind_frozen(&mut binder);
    let t = &mut *binder.tape;
    let x = t.constant(cloud.points.clone());
    let x1 = gen_vars.forward(t, x, &noises.0)?;
    let x2 = gen_vars.forward(t, x, &noises.1)?;
    let div = loss_recon(t, x1, x2);
    let div_clipped = clip_max(t, div, div_margin);
    let xr = gen_vars.reconstruct(t, x1)?;
    let rec = loss_recon(t, x, xr);
    let (pooled_gen, _) = mscn_vars.forward_features(t, x1, &Sampling::Seed(seed))?;
    let logits = head_forward(t, &mscn_vars.head, pooled_gen, 0.0, None);
    let ce = t.softmax_cross_entropy(logits, &[label]);
    // L_recon + L_gen,ce - clip(L_div): the diversity term is maximized.
    let a = t.add(rec, ce);
    let partial = t.sub(a, div_clipped);
    let (pooled_src, _) = mscn_vars.forward_features(t, x, &Sampling::Seed(seed ^ 0x5eed))?;
    let registry = binder.into_registry();
    let pooled_src = tape.value(pooled_src).row(0).to_owned();
    if !tape.scalar(partial).is_finite() {
        return Err(Error::Divergence("generator per-cloud loss".into()));
    }
    Ok(GenCloudPass {
        tape,
        registry,
        partial,
        pooled_gen,
        pooled_src,
    })
}

/// Gradients of the generator objective (Eq. 19 with the adversarial term)
/// over one batch. Classifier and projection parameters are frozen here.
pub fn generator_batch_grads(
    gen: &Generator,
    mscn: &MscnParams,
    proj: &ProjectionHead,
    batch: &[&PointCloud],
    config: &ExpansionConfig,
    step_seed: u64,
) -> Result<(GradStore, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    let noises: Vec<(Array1<f64>, Array1<f64>)> = (0..batch.len())
        .map(|_| {
            (
                sample_noise(config.d_n, &mut rng),
                sample_noise(config.d_n, &mut rng),
            )
        })
        .collect();
    let passes: Vec<GenCloudPass> = batch
        .par_iter()
        .zip(noises.par_iter())
        .enumerate()
        .map(|(i, (cloud, ns))| {
            gen_cloud_pass(gen, mscn, cloud, ns, config.div_margin, step_seed ^ i as u64)
        })
        .collect::<Result<_>>()?;

    // Shared phase: modified InfoNCE over interleaved (source, generated)
    // embeddings; the generator ascends this term.
    let d = mscn.config.final_dim();
    let mut stacked = Array2::zeros((2 * batch.len(), d));
    for (i, p) in passes.iter().enumerate() {
        stacked.row_mut(2 * i).assign(&p.pooled_src);
        stacked
            .row_mut(2 * i + 1)
            .assign(&p.tape.value(p.pooled_gen).row(0));
    }
    let mut shared = Tape::new();
    let mut sb = Binder::new(&mut shared);
    let proj_vars = proj.bind_frozen(&mut sb);
    let zin = sb.tape.leaf(stacked);
    let z = proj_vars.forward(sb.tape, zin);
    let lstar = loss_nce_star(sb.tape, z, config.temperature);
    let lstar_val = shared.scalar(lstar);
    if !lstar_val.is_finite() {
        return Err(Error::Divergence("adversarial loss".into()));
    }
    let shared_grads = shared.backward(lstar);
    let gz = shared_grads.wrt(&shared, zin);

    let partial_sum: f64 = passes.iter().map(|p| p.tape.scalar(p.partial)).sum();
    let stores: Vec<GradStore> = passes
        .into_par_iter()
        .enumerate()
        .map(|(i, mut pass)| {
            // Seed the ascent direction through an inner product with the
            // (negated) shared-phase gradient.
            let seed_row = gz.row(2 * i + 1).mapv(|v| -v).insert_axis(ndarray::Axis(0));
            let c = pass.tape.constant(seed_row);
            let dot = pass.tape.mul(pass.pooled_gen, c);
            let adv = pass.tape.sum_all(dot);
            let root = pass.tape.add(pass.partial, adv);
            let grads = pass.tape.backward(root);
            let mut store = GradStore::new();
            collect_registry(&pass.registry, &pass.tape, &grads, &mut store);
            store
        })
        .collect();
    let mut store = GradStore::new();
    for s in stores {
        store.merge(s);
    }
    if !store.is_finite() {
        return Err(Error::Divergence("generator gradients".into()));
    }
    Ok((store, partial_sum - lstar_val))
}

fn interleaved_pairs<'a>(
    sources: &[&'a PointCloud],
    generated: &'a [PointCloud],
) -> Vec<&'a PointCloud> {
    let mut batch = Vec::with_capacity(2 * sources.len());
    for (s, g) in sources.iter().zip(generated.iter()) {
        batch.push(*s);
        batch.push(g);
    }
    batch
}

/// One adversarial alternation on a batch of source clouds: a generator
/// update against the frozen classifier, then a classifier/projection update
/// on the interleaved source/generated batch. Returns the two batch losses.
pub fn adversarial_step(
    gen: &mut Generator,
    mscn: &mut MscnParams,
    proj: &mut ProjectionHead,
    opt_gen: &mut Adam,
    opt_model: &mut Adam,
    opt_proj: &mut Adam,
    sources: &[&PointCloud],
    config: &ExpansionConfig,
    step_seed: u64,
) -> Result<(f64, f64)> {
    let (gstore, gen_loss) =
        generator_batch_grads(gen, mscn, proj, sources, config, step_seed)?;
    opt_gen.step(gen, "gen", &gstore);

    // Fresh generator output with the updated weights for the model step.
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed ^ 0xface);
    let generated: Vec<PointCloud> = sources
        .iter()
        .map(|c| generate(gen, c, &sample_noise(config.d_n, &mut rng)))
        .collect::<Result<_>>()?;
    let batch = interleaved_pairs(sources, &generated);
    let (mstore, stats) = src_batch_grads(
        mscn,
        Some((proj, config.temperature)),
        &batch,
        step_seed ^ 0xbeef,
    )?;
    opt_model.step(mscn, "mscn", &mstore);
    opt_proj.step(proj, "proj", &mstore);
    Ok((gen_loss, stats.loss))
}

fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// The full MSCN-dagger procedure. `pretrained` supplies both the starting
/// classifier weights and the permanently frozen generator encoder.
pub fn progressive_train(
    source: &[PointCloud],
    pretrained: &MscnParams,
    config: &ExpansionConfig,
) -> Result<(MscnParams, ProjectionHead, Vec<Generator>, ExpansionState)> {
    if source.len() < 2 {
        return Err(Error::Validation("expansion needs at least two source clouds".into()));
    }
    let mut mscn = pretrained.clone();
    let d = mscn.config.final_dim();
    let mut proj = ProjectionHead::init(d, 256, 128, config.seed ^ 0x9109);
    let mut opt_model = Adam::new(config.lr);
    let mut opt_proj = Adam::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = ExpansionState {
        cycle: 0,
        model_epochs_run: 0,
        pools: Vec::new(),
        encoder_hash: String::new(),
        history: Vec::new(),
    };
    let mut generators = Vec::new();

    for k in 1..=config.cycles {
        let mut gen = Generator::from_pretrained(pretrained, config.d_n, config.seed ^ k as u64)?;
        let hash = gen.encoder_hash();
        if state.encoder_hash.is_empty() {
            state.encoder_hash = hash;
        } else if state.encoder_hash != hash {
            return Err(Error::Validation("frozen encoder drifted between cycles".into()));
        }
        let mut opt_gen = Adam::new(config.lr);

        // Adversarial phase: alternate generator and model updates.
        let mut gen_loss_sum = 0.0;
        let mut gen_steps = 0usize;
        for e in 0..config.generator_epochs {
            for chunk in epoch_batches(source.len(), config.batch_pairs, &mut rng) {
                let sources: Vec<&PointCloud> = chunk.iter().map(|&i| &source[i]).collect();
                let step_seed = config.seed
                    ^ (k as u64) << 40
                    ^ (e as u64) << 20
                    ^ gen_steps as u64;
                let (gl, _) = adversarial_step(
                    &mut gen, &mut mscn, &mut proj, &mut opt_gen, &mut opt_model,
                    &mut opt_proj, &sources, config, step_seed,
                )?;
                gen_loss_sum += gl;
                gen_steps += 1;
            }
        }

        // Snapshot S'_k: one counterpart per source cloud, fresh noise,
        // source index preserved.
        let pool: Vec<PointCloud> = source
            .iter()
            .map(|c| generate(&gen, c, &sample_noise(config.d_n, &mut rng)))
            .collect::<Result<_>>()?;
        for (src, g) in source.iter().zip(pool.iter()) {
            debug_assert_eq!(src.label, g.label);
        }
        state.pools.push(pool);
        generators.push(gen);

        // Classifier phase: epochs over the source set, each source cloud
        // paired with a counterpart drawn uniformly over the pool union.
        let mut model_loss_sum = 0.0;
        let mut correct = 0usize;
        let mut total = 0usize;
        let mut model_steps = 0usize;
        for e in 0..config.epochs_per_cycle {
            for chunk in epoch_batches(source.len(), config.batch_pairs, &mut rng) {
                let sources: Vec<&PointCloud> = chunk.iter().map(|&i| &source[i]).collect();
                let counterparts: Vec<&PointCloud> = chunk
                    .iter()
                    .map(|&i| {
                        let j = rng.gen_range(0..state.pools.len());
                        &state.pools[j][i]
                    })
                    .collect();
                let mut batch = Vec::with_capacity(2 * chunk.len());
                for (s, g) in sources.iter().zip(counterparts.iter()) {
                    batch.push(*s);
                    batch.push(*g);
                }
                let step_seed = config.seed
                    ^ (k as u64) << 40
                    ^ 0x0de1
                    ^ (e as u64) << 20
                    ^ model_steps as u64;
                let (store, stats) = if batch.len() >= 4 {
                    src_batch_grads(&mscn, Some((&proj, config.temperature)), &batch, step_seed)?
                } else {
                    src_batch_grads(&mscn, None, &batch, step_seed)?
                };
                opt_model.step(&mut mscn, "mscn", &store);
                opt_proj.step(&mut proj, "proj", &store);
                model_loss_sum += stats.loss;
                correct += stats.correct;
                total += stats.total;
                model_steps += 1;
            }
            state.model_epochs_run += 1;
        }

        state.cycle = k;
        state.history.push(CycleRecord {
            cycle: k,
            generator_loss: if gen_steps > 0 { gen_loss_sum / gen_steps as f64 } else { 0.0 },
            model_loss: if model_steps > 0 { model_loss_sum / model_steps as f64 } else { 0.0 },
            model_accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        });
        log::info!(
            "cycle {k}: gen loss {:.4}, model loss {:.4}, train acc {:.3}",
            state.history.last().unwrap().generator_loss,
            state.history.last().unwrap().model_loss,
            state.history.last().unwrap().model_accuracy,
        );
    }
    Ok((mscn, proj, generators, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::generate_primitive;
    use crate::layers::NetworkConfig;
    use crate::nn::Parameterized;

    fn toy_setup() -> (Vec<PointCloud>, MscnParams) {
        let clouds: Vec<PointCloud> = (0..4)
            .map(|i| generate_primitive(i % 2, 48, 200 + i as u64, 0.0).unwrap())
            .collect();
        let mut config = NetworkConfig::tiny(3);
        config.dropout = 0.0;
        (clouds, MscnParams::init(&config, 5).unwrap())
    }

    #[test]
    fn model_step_leaves_generator_untouched() {
        let (clouds, mut mscn) = toy_setup();
        let gen = Generator::from_pretrained(&mscn, 8, 1).unwrap();
        let snapshot = gen.named_tensors();
        let mut proj = ProjectionHead::init(mscn.config.final_dim(), 16, 8, 2);
        let cfg = ExpansionConfig { d_n: 8, batch_pairs: 2, ..Default::default() };

        // Model-side update only: generated counterparts via the frozen gen.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let generated: Vec<PointCloud> = clouds
            .iter()
            .map(|c| generate(&gen, c, &sample_noise(8, &mut rng)).unwrap())
            .collect();
        let sources: Vec<&PointCloud> = clouds.iter().collect();
        let batch = interleaved_pairs(&sources, &generated);
        let (store, _) =
            src_batch_grads(&mscn, Some((&proj, cfg.temperature)), &batch, 9).unwrap();
        let mut opt = Adam::new(0.001);
        opt.step(&mut mscn, "mscn", &store);
        opt.step(&mut proj, "proj", &store);

        for ((n0, t0), (n1, t1)) in snapshot.iter().zip(gen.named_tensors().iter()) {
            assert_eq!(n0, n1);
            assert_eq!(t0, t1, "{n0} changed");
        }
    }

    #[test]
    fn generator_grads_are_finite_and_cover_trainables() {
        let (clouds, mscn) = toy_setup();
        let gen = Generator::from_pretrained(&mscn, 8, 1).unwrap();
        let proj = ProjectionHead::init(mscn.config.final_dim(), 16, 8, 2);
        let cfg = ExpansionConfig { d_n: 8, ..Default::default() };
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let (store, loss) = generator_batch_grads(&gen, &mscn, &proj, &refs, &cfg, 4).unwrap();
        assert!(loss.is_finite());
        assert!(store.is_finite());
        for name in ["gen.l1.w", "gen.l2.w", "gen.dec0.w", "gen.dec1.w", "gen.rec0.w"] {
            assert!(store.get(name).is_some(), "missing {name}");
        }
        // The frozen encoder must not appear in the gradient store.
        assert!(store.get("gen.enc0.w_center").is_none());
    }

    #[test]
    fn two_cycle_run_counts_epochs_and_grows_pools() {
        let (clouds, mscn) = toy_setup();
        let cfg = ExpansionConfig {
            cycles: 2,
            epochs_per_cycle: 3,
            generator_epochs: 1,
            batch_pairs: 2,
            d_n: 8,
            lr: 0.0005,
            ..Default::default()
        };
        let (_, _, gens, state) = progressive_train(&clouds, &mscn, &cfg).unwrap();
        assert_eq!(state.cycle, 2);
        assert_eq!(state.model_epochs_run, 6);
        assert_eq!(state.pools.len(), 2);
        assert_eq!(gens.len(), 2);
        for pool in &state.pools {
            assert_eq!(pool.len(), clouds.len());
            for (src, g) in clouds.iter().zip(pool.iter()) {
                assert_eq!(src.label, g.label);
                assert_eq!(src.len(), g.len());
            }
        }
        // Frozen-encoder hash is the same for every cycle's generator.
        assert_eq!(gens[0].encoder_hash(), gens[1].encoder_hash());
        assert_eq!(gens[0].encoder_hash(), state.encoder_hash);
    }
}
