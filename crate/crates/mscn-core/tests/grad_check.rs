//! Finite-difference verification of the analytic gradients for every
//! parameter tensor: convolution blocks, aggregation layers, the head, the
//! generator's modulation and decoder maps, and the projection head.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mscn_core::expansion::{clip_max, loss_nce, loss_recon, Generator, ProjectionHead};
use mscn_core::geometry::{generate_primitive, PointCloud};
use mscn_core::layers::{head_forward, MscnParams, NetworkConfig, Sampling};
use mscn_core::nn::{collect_registry, Binder, GradStore, Parameterized};
use mscn_core::tape::Tape;
use mscn_core::verify::fd_check;

const H: f64 = 1e-5;
const TOL: f64 = 1e-3;

fn toy_cloud() -> PointCloud {
    generate_primitive(1, 32, 11, 0.0).unwrap()
}

fn tiny_params() -> MscnParams {
    let mut config = NetworkConfig::tiny(3);
    config.dropout = 0.0;
    MscnParams::init(&config, 3).unwrap()
}

fn ce_loss_and_grads(params: &MscnParams, cloud: &PointCloud) -> (f64, GradStore) {
    let mut tape = Tape::new();
    let mut b = Binder::new(&mut tape);
    let vars = params.bind(&mut b, "mscn");
    let t = &mut *b.tape;
    let x = t.constant(cloud.points.clone());
    let (pooled, _) = vars.forward_features(t, x, &Sampling::Seed(5)).unwrap();
    let logits = head_forward(t, &vars.head, pooled, 0.0, None);
    let loss = t.softmax_cross_entropy(logits, &[cloud.label.unwrap()]);
    let registry = b.into_registry();
    let val = tape.scalar(loss);
    let grads = tape.backward(loss);
    let mut store = GradStore::new();
    collect_registry(&registry, &tape, &grads, &mut store);
    (val, store)
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let params = tiny_params();
    let mut cloud = toy_cloud();
    cloud.label = Some(1);
    let (_, store) = ce_loss_and_grads(&params, &cloud);
    let report = fd_check(
        &params,
        &store,
        "mscn",
        |p| ce_loss_and_grads(p, &cloud).0,
        4,
        H,
        TOL,
    );
    assert!(
        report.ok(),
        "{} probes, failures:\n{}",
        report.checked,
        report.failures.join("\n")
    );
}

fn gen_loss_and_grads(
    gen: &Generator,
    mscn: &MscnParams,
    cloud: &PointCloud,
    noises: &(Array1<f64>, Array1<f64>),
) -> (f64, GradStore) {
    let mut tape = Tape::new();
    let mut b = Binder::new(&mut tape);
    let gen_vars = gen.bind(&mut b, "gen");
    let mscn_vars = mscn.bind_frozen(&mut b);
    let t = &mut *b.tape;
    let x = t.constant(cloud.points.clone());
    let x1 = gen_vars.forward(t, x, &noises.0).unwrap();
    let x2 = gen_vars.forward(t, x, &noises.1).unwrap();
    let div = loss_recon(t, x1, x2);
    let div_clipped = clip_max(t, div, 1.0);
    let xr = gen_vars.reconstruct(t, x1).unwrap();
    let rec = loss_recon(t, x, xr);
    let (pooled, _) = mscn_vars
        .forward_features(t, x1, &Sampling::Seed(5))
        .unwrap();
    let logits = head_forward(t, &mscn_vars.head, pooled, 0.0, None);
    let ce = t.softmax_cross_entropy(logits, &[cloud.label.unwrap()]);
    let a = t.add(rec, ce);
    let root = t.sub(a, div_clipped);
    let registry = b.into_registry();
    let val = tape.scalar(root);
    let grads = tape.backward(root);
    let mut store = GradStore::new();
    collect_registry(&registry, &tape, &grads, &mut store);
    (val, store)
}

#[test]
fn generator_gradients_match_finite_differences() {
    let mscn = tiny_params();
    let mut gen = Generator::from_pretrained(&mscn, 6, 2).unwrap();
    // Zero-initialized decoder tails make half the gradients trivially zero;
    // jitter every trainable tensor so the check is informative.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    gen.visit_mut("", &mut |_, t| {
        t.mapv_inplace(|v| v + rng.gen_range(-0.05..0.05));
    });
    let mut cloud = toy_cloud();
    cloud.label = Some(0);
    let mut nrng = ChaCha8Rng::seed_from_u64(4);
    let noises = (
        Array1::from_shape_fn(6, |_| nrng.gen_range(-1.0..1.0)),
        Array1::from_shape_fn(6, |_| nrng.gen_range(-1.0..1.0)),
    );
    let (_, store) = gen_loss_and_grads(&gen, &mscn, &cloud, &noises);
    let report = fd_check(
        &gen,
        &store,
        "gen",
        |g| gen_loss_and_grads(g, &mscn, &cloud, &noises).0,
        4,
        H,
        TOL,
    );
    assert!(
        report.ok(),
        "{} probes, failures:\n{}",
        report.checked,
        report.failures.join("\n")
    );
}

fn proj_loss_and_grads(proj: &ProjectionHead, input: &ndarray::Array2<f64>) -> (f64, GradStore) {
    let mut tape = Tape::new();
    let mut b = Binder::new(&mut tape);
    let vars = proj.bind(&mut b, "proj");
    let t = &mut *b.tape;
    let x = t.constant(input.clone());
    let z = vars.forward(t, x);
    let loss = loss_nce(t, z, 0.7);
    let registry = b.into_registry();
    let val = tape.scalar(loss);
    let grads = tape.backward(loss);
    let mut store = GradStore::new();
    collect_registry(&registry, &tape, &grads, &mut store);
    (val, store)
}

#[test]
fn projection_gradients_match_finite_differences() {
    let proj = ProjectionHead::init(10, 8, 6, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let input = ndarray::Array2::from_shape_fn((6, 10), |_| rng.gen_range(-1.0..1.0));
    let (_, store) = proj_loss_and_grads(&proj, &input);
    let report = fd_check(
        &proj,
        &store,
        "proj",
        |p| proj_loss_and_grads(p, &input).0,
        6,
        H,
        TOL,
    );
    assert!(
        report.ok(),
        "{} probes, failures:\n{}",
        report.checked,
        report.failures.join("\n")
    );
}
