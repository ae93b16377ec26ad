//! The unseen-domain generator: a frozen structural-convolution encoder, a
//! noise-conditioned 3D adaptive instance normalization, and a per-point
//! decoder emitting coordinate offsets. Also the reconstruction module that
//! mirrors the decoder, and the projection head used for contrastive loss.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{knn, PointCloud};
use crate::layers::{FeatureMode, FeatureSource, MscnParams, SclParams, SclVars};
use crate::nn::{join, Binder, Dense, DenseVars, Parameterized, LEAKY_SLOPE};
use crate::tape::{Tape, Var};

/// Variance-floor guard for the AdaIN denominator.
pub const ADAIN_EPS: f64 = 1e-6;

/// Noise-conditioned scale/shift: out = L1(n) * (z - mu)/sigma + L2(n), with
/// per-channel moments taken over the N points.
pub fn adain3d(t: &mut Tape, z: Var, scale: Var, shift: Var, eps: f64) -> Var {
    let n = t.value(z).nrows();
    let inv_n = 1.0 / n as f64;
    let sum = t.sum_axis0(z);
    let mu = t.scale(sum, inv_n);
    let mu_b = t.broadcast_rows(mu, n);
    let centered = t.sub(z, mu_b);
    let sq = t.mul(centered, centered);
    let var_sum = t.sum_axis0(sq);
    let var = t.scale(var_sum, inv_n);
    let sd_raw = t.sqrt(var);
    let sd = t.clamp_min(sd_raw, eps);
    let sd_b = t.broadcast_rows(sd, n);
    let norm = t.div(centered, sd_b);
    let scale_b = t.broadcast_rows(scale, n);
    let shift_b = t.broadcast_rows(shift, n);
    let scaled = t.mul(norm, scale_b);
    t.add(scaled, shift_b)
}

/// Reference (non-tape) AdaIN for moment oracles.
pub fn adain3d_ref(z: &Array2<f64>, scale: &Array1<f64>, shift: &Array1<f64>, eps: f64) -> Array2<f64> {
    let n = z.nrows() as f64;
    let mut out = z.clone();
    for (c, mut col) in out.columns_mut().into_iter().enumerate() {
        let mu = col.sum() / n;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(eps);
        col.mapv_inplace(|v| scale[c] * (v - mu) / sd + shift[c]);
    }
    out
}

/// Draws a standard-normal noise vector.
pub fn sample_noise(d_n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(d_n, |_| StandardNormal.sample(rng))
}

/// The generator G_k plus its paired reconstruction module G_R.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// Frozen feature extractor: the first two standalone SCLs of a
    /// pretrained classifier. Never updated during expansion training.
    pub encoder: Vec<SclParams>,
    pub m: usize,
    pub feature_mode: FeatureMode,
    pub d_n: usize,
    /// Noise-to-scale map; initialized to output 1 for every channel.
    pub l1: Dense,
    /// Noise-to-shift map; initialized to output 0.
    pub l2: Dense,
    /// Per-point offset decoder D_z -> 64 -> 3, output layer zero-initialized
    /// so the generator starts as the identity.
    pub decoder: Vec<Dense>,
    /// G_R: same architecture as the decoder, applied to latents of the
    /// generated cloud to undo the displacement.
    pub recon: Vec<Dense>,
}

impl Generator {
    /// Builds a generator around the frozen encoder taken from `pretrained`.
    pub fn from_pretrained(pretrained: &MscnParams, d_n: usize, seed: u64) -> Result<Self> {
        let sclbs = pretrained.scl_blocks();
        if sclbs.len() < 2 {
            return Err(Error::Validation(
                "pretrained network has fewer than two standalone convolution layers".into(),
            ));
        }
        let encoder: Vec<SclParams> = sclbs[..2].iter().map(|&p| p.clone()).collect();
        let d_z = encoder[1].d_out;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = Dense {
            w: Array2::zeros((d_n, d_z)),
            b: Array2::ones((1, d_z)),
        };
        let l2 = Dense::zeros(d_n, d_z);
        let decoder = vec![Dense::init(d_z, 64, &mut rng), Dense::zeros(64, 3)];
        let recon = vec![Dense::init(d_z, 64, &mut rng), Dense::zeros(64, 3)];
        Ok(Generator {
            encoder,
            m: pretrained.config.m,
            feature_mode: pretrained.config.feature_mode,
            d_n,
            l1,
            l2,
            decoder,
            recon,
        })
    }

    pub fn d_z(&self) -> usize {
        self.encoder[1].d_out
    }

    /// Digest of the frozen encoder weights; must be stable across every
    /// expansion cycle.
    pub fn encoder_hash(&self) -> String {
        let mut h = Sha256::new();
        for (i, scl) in self.encoder.iter().enumerate() {
            scl.visit(&format!("enc{i}"), &mut |name, t| {
                h.update(name.as_bytes());
                h.update([0u8]);
                for &v in t.iter() {
                    h.update(v.to_le_bytes());
                }
            });
        }
        format!("{:x}", h.finalize())
    }

    pub fn bind(&self, b: &mut Binder<'_>, prefix: &str) -> GeneratorVars {
        GeneratorVars {
            encoder: self.encoder.iter().map(|s| s.bind_frozen(b)).collect(),
            m: self.m,
            feature_mode: self.feature_mode,
            l1: self.l1.bind(b, &join(prefix, "l1")),
            l2: self.l2.bind(b, &join(prefix, "l2")),
            decoder: self
                .decoder
                .iter()
                .enumerate()
                .map(|(i, d)| d.bind(b, &join(prefix, &format!("dec{i}"))))
                .collect(),
            recon: self
                .recon
                .iter()
                .enumerate()
                .map(|(i, d)| d.bind(b, &join(prefix, &format!("rec{i}"))))
                .collect(),
        }
    }
}

// Only the trainable tensors; the frozen encoder travels with the classifier
// checkpoint it came from.
impl Parameterized for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
        for (i, d) in self.decoder.iter().enumerate() {
            d.visit(&join(prefix, &format!("dec{i}")), f);
        }
        for (i, d) in self.recon.iter().enumerate() {
            d.visit(&join(prefix, &format!("rec{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.l1.visit_mut(&join(prefix, "l1"), f);
        self.l2.visit_mut(&join(prefix, "l2"), f);
        for (i, d) in self.decoder.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("dec{i}")), f);
        }
        for (i, d) in self.recon.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("rec{i}")), f);
        }
    }
}

pub struct GeneratorVars {
    pub encoder: Vec<SclVars>,
    m: usize,
    feature_mode: FeatureMode,
    pub l1: DenseVars,
    pub l2: DenseVars,
    pub decoder: Vec<DenseVars>,
    pub recon: Vec<DenseVars>,
}

fn mlp_forward(t: &mut Tape, layers: &[DenseVars], mut x: Var) -> Var {
    for (i, d) in layers.iter().enumerate() {
        x = d.forward(t, x);
        if i + 1 < layers.len() {
            x = t.leaky_relu(x, LEAKY_SLOPE);
        }
    }
    x
}

impl GeneratorVars {
    /// Frozen-encoder latents for a coordinate variable (gradients still
    /// flow into `points` itself, which reconstruction relies on).
    pub fn encode(&self, t: &mut Tape, points: Var) -> Result<Var> {
        let fields = knn(t.value(points), self.m)?;
        let mut feats = match self.feature_mode {
            FeatureMode::Relative => FeatureSource::Relative,
            FeatureMode::Absolute => FeatureSource::Absolute,
        };
        let mut out = None;
        for scl in &self.encoder {
            let f = scl.forward(t, points, feats, &fields);
            feats = FeatureSource::Layer(f);
            out = Some(f);
        }
        Ok(out.expect("encoder has layers"))
    }

    /// G_k(x, n): input coordinates plus decoded offsets from the
    /// noise-stylized latent.
    pub fn forward(&self, t: &mut Tape, points: Var, noise: &Array1<f64>) -> Result<Var> {
        let z = self.encode(t, points)?;
        let n_row = t.constant(noise.clone().insert_axis(ndarray::Axis(0)));
        let scale = self.l1.forward(t, n_row);
        let shift = self.l2.forward(t, n_row);
        let styled = adain3d(t, z, scale, shift, ADAIN_EPS);
        let offsets = mlp_forward(t, &self.decoder, styled);
        Ok(t.add(points, offsets))
    }

    /// G_R(x'): undoes the generator displacement from the latents of the
    /// generated cloud.
    pub fn reconstruct(&self, t: &mut Tape, gen_points: Var) -> Result<Var> {
        let z = self.encode(t, gen_points)?;
        let offsets = mlp_forward(t, &self.recon, z);
        Ok(t.add(gen_points, offsets))
    }
}

/// Cloud-level generation; the output keeps the source cloud's label.
pub fn generate(gen: &Generator, cloud: &PointCloud, noise: &Array1<f64>) -> Result<PointCloud> {
    let mut tape = Tape::new();
    let mut binder = Binder::new(&mut tape);
    let vars = gen.bind(&mut binder, "gen");
    let points = binder.tape.constant(cloud.points.clone());
    let out = vars.forward(binder.tape, points, noise)?;
    let coords = tape.value(out).clone();
    if !coords.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericOverflow("generator output".into()));
    }
    let mut generated = cloud.clone();
    generated.points = coords;
    Ok(generated)
}

/// Contrastive projection head: dense 1024 -> 256 -> 128 (dims configurable)
/// with unit-normalized outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub fc1: Dense,
    pub fc2: Dense,
}

impl ProjectionHead {
    pub fn init(d_in: usize, d_hidden: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProjectionHead {
            fc1: Dense::init(d_in, d_hidden, &mut rng),
            fc2: Dense::init(d_hidden, d_out, &mut rng),
        }
    }

    pub fn bind(&self, b: &mut Binder<'_>, prefix: &str) -> ProjectionVars {
        ProjectionVars {
            fc1: self.fc1.bind(b, &join(prefix, "fc1")),
            fc2: self.fc2.bind(b, &join(prefix, "fc2")),
        }
    }

    pub fn bind_frozen(&self, b: &mut Binder<'_>) -> ProjectionVars {
        ProjectionVars {
            fc1: self.fc1.bind_frozen(b),
            fc2: self.fc2.bind_frozen(b),
        }
    }
}

impl Parameterized for ProjectionHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

#[derive(Clone, Copy)]
pub struct ProjectionVars {
    pub fc1: DenseVars,
    pub fc2: DenseVars,
}

impl ProjectionVars {
    /// Rows in, unit-norm embedding rows out.
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.fc1.forward(t, x);
        let h = t.leaky_relu(h, LEAKY_SLOPE);
        let z = self.fc2.forward(t, h);
        t.normalize_rows(z, 1e-12)
    }
}
