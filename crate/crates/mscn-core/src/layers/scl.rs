//! The structural convolution layer: vectorized, differentiable forward
//! pass over a tape.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::ReceptiveField;
use crate::layers::kernels::{DirKernel, DistKernel, DEGENERATE_DIR_EPS};
use crate::nn::{join, Binder, Dense, Parameterized, LEAKY_SLOPE};
use crate::tape::{Tape, Var};

const BN_EPS: f64 = 1e-5;

/// Learnable parameters of one `SCL(D_in, D_out)`.
///
/// Weight matrices are stored input-major (`d_in x d_out`) so the forward
/// pass is plain matrix products; column `o*S + s` of the branch tensors is
/// branch `s` of output channel `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct SclParams {
    pub d_in: usize,
    pub d_out: usize,
    pub s: usize,
    /// `d_in x d_out` center weights of the direction kernels.
    pub w_center: Array2<f64>,
    /// `d_in x (d_out * s)` branch weights of the direction kernels.
    pub w_branch: Array2<f64>,
    /// `3 x (d_out * s)` learnable branch directions.
    pub b_dir: Array2<f64>,
    /// `1 x d_out` center weights of the distance kernels.
    pub dist_center: Array2<f64>,
    /// `1 x (d_out * s)` branch weights of the distance kernels.
    pub dist_branch: Array2<f64>,
    /// Per-layer MLP mixing the concatenated convolution outputs.
    pub mlp: Dense,
    pub bn_gamma: Array2<f64>,
    pub bn_beta: Array2<f64>,
}

impl SclParams {
    pub fn init(d_in: usize, d_out: usize, s: usize, rng: &mut ChaCha8Rng) -> Self {
        let lim = (6.0 / (d_in + d_out) as f64).sqrt();
        let w_center = Array2::from_shape_fn((d_in, d_out), |_| rng.gen_range(-lim..lim));
        let w_branch = Array2::from_shape_fn((d_in, d_out * s), |_| rng.gen_range(-lim..lim));
        // Random unit directions; never the zero vector.
        let mut b_dir = Array2::zeros((3, d_out * s));
        for c in 0..d_out * s {
            loop {
                let g: [f64; 3] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                if n > 1e-3 {
                    for k in 0..3 {
                        b_dir[[k, c]] = g[k] / n;
                    }
                    break;
                }
            }
        }
        let dist_center = Array2::from_shape_fn((1, d_out), |_| rng.gen_range(-0.5..0.5));
        let dist_branch = Array2::from_shape_fn((1, d_out * s), |_| rng.gen_range(-0.5..0.5));
        SclParams {
            d_in,
            d_out,
            s,
            w_center,
            w_branch,
            b_dir,
            dist_center,
            dist_branch,
            mlp: Dense::init(2 * d_out, d_out, rng),
            bn_gamma: Array2::ones((1, d_out)),
            bn_beta: Array2::zeros((1, d_out)),
        }
    }

    /// Direction kernel of output channel `o`, in the per-kernel layout.
    pub fn dir_kernel(&self, o: usize) -> DirKernel {
        let s = self.s;
        DirKernel {
            center_weight: self.w_center.column(o).to_owned(),
            branch_weights: Array2::from_shape_fn((s, self.d_in), |(si, d)| {
                self.w_branch[[d, o * s + si]]
            }),
            branch_directions: Array2::from_shape_fn((s, 3), |(si, k)| {
                self.b_dir[[k, o * s + si]]
            }),
        }
    }

    /// Distance kernel of output channel `o`.
    pub fn dist_kernel(&self, o: usize) -> DistKernel {
        let s = self.s;
        DistKernel {
            center_weight: self.dist_center[[0, o]],
            branch_weights: Array1::from_shape_fn(s, |si| self.dist_branch[[0, o * s + si]]),
        }
    }

    pub fn bind(&self, b: &mut Binder<'_>, prefix: &str) -> SclVars {
        SclVars {
            w_center: b.leaf(&join(prefix, "w_center"), &self.w_center),
            w_branch: b.leaf(&join(prefix, "w_branch"), &self.w_branch),
            b_dir: b.leaf(&join(prefix, "b_dir"), &self.b_dir),
            dist_center: b.leaf(&join(prefix, "dist_center"), &self.dist_center),
            dist_branch: b.leaf(&join(prefix, "dist_branch"), &self.dist_branch),
            mlp: self.mlp.bind(b, &join(prefix, "mlp")),
            bn_gamma: b.leaf(&join(prefix, "bn_gamma"), &self.bn_gamma),
            bn_beta: b.leaf(&join(prefix, "bn_beta"), &self.bn_beta),
            s: self.s,
            d_out: self.d_out,
        }
    }

    /// Binds every tensor as a constant: participates in the forward pass
    /// but receives no gradient (frozen encoder use).
    pub fn bind_frozen(&self, b: &mut Binder<'_>) -> SclVars {
        SclVars {
            w_center: b.frozen(&self.w_center),
            w_branch: b.frozen(&self.w_branch),
            b_dir: b.frozen(&self.b_dir),
            dist_center: b.frozen(&self.dist_center),
            dist_branch: b.frozen(&self.dist_branch),
            mlp: crate::nn::DenseVars {
                w: b.frozen(&self.mlp.w),
                b: b.frozen(&self.mlp.b),
            },
            bn_gamma: b.frozen(&self.bn_gamma),
            bn_beta: b.frozen(&self.bn_beta),
            s: self.s,
            d_out: self.d_out,
        }
    }
}

impl Parameterized for SclParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f(&join(prefix, "w_center"), &self.w_center);
        f(&join(prefix, "w_branch"), &self.w_branch);
        f(&join(prefix, "b_dir"), &self.b_dir);
        f(&join(prefix, "dist_center"), &self.dist_center);
        f(&join(prefix, "dist_branch"), &self.dist_branch);
        self.mlp.visit(&join(prefix, "mlp"), f);
        f(&join(prefix, "bn_gamma"), &self.bn_gamma);
        f(&join(prefix, "bn_beta"), &self.bn_beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f(&join(prefix, "w_center"), &mut self.w_center);
        f(&join(prefix, "w_branch"), &mut self.w_branch);
        f(&join(prefix, "b_dir"), &mut self.b_dir);
        f(&join(prefix, "dist_center"), &mut self.dist_center);
        f(&join(prefix, "dist_branch"), &mut self.dist_branch);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
        f(&join(prefix, "bn_gamma"), &mut self.bn_gamma);
        f(&join(prefix, "bn_beta"), &mut self.bn_beta);
    }
}

#[derive(Clone, Copy)]
pub struct SclVars {
    pub w_center: Var,
    pub w_branch: Var,
    pub b_dir: Var,
    pub dist_center: Var,
    pub dist_branch: Var,
    pub mlp: crate::nn::DenseVars,
    pub bn_gamma: Var,
    pub bn_beta: Var,
    s: usize,
    d_out: usize,
}

/// Point features feeding an SCL.
#[derive(Clone, Copy)]
pub enum FeatureSource {
    /// First-layer convention: center feature is the constant (1,1,1) and
    /// neighbor features are the relative direction vectors.
    Relative,
    /// First-layer ablation: raw coordinates as features.
    Absolute,
    /// Features produced by an earlier layer (`N x D_in`).
    Layer(Var),
}

impl SclVars {
    /// Runs the structural convolution over every receptive field.
    ///
    /// `points` is the `N x 3` coordinate variable (gradients flow into it,
    /// which generator training relies on); `fields` must be built on the
    /// same coordinates with the configured `M`.
    pub fn forward(
        &self,
        t: &mut Tape,
        points: Var,
        feats: FeatureSource,
        fields: &[ReceptiveField],
    ) -> Var {
        let n = t.value(points).nrows();
        debug_assert_eq!(fields.len(), n);
        let m = fields[0].neighbor_indices.len();
        let sb = self.s;
        let d_out = self.d_out;

        // Flattened neighbor graph, n-major: rows n*M..(n+1)*M belong to point n.
        let mut idx_center = Vec::with_capacity(n * m);
        let mut idx_nbr = Vec::with_capacity(n * m);
        for f in fields {
            debug_assert_eq!(f.neighbor_indices.len(), m);
            for &j in &f.neighbor_indices {
                idx_center.push(f.center_index);
                idx_nbr.push(j);
            }
        }

        // Relative directions and their norms, on-tape.
        let p_nbr = t.gather_rows(points, &idx_nbr);
        let p_ctr = t.gather_rows(points, &idx_center);
        let dirs = t.sub(p_nbr, p_ctr);
        let d_sq = t.row_sq_norm(dirs);
        let d_sq_safe = t.clamp_min(d_sq, DEGENERATE_DIR_EPS * DEGENERATE_DIR_EPS);
        let dist = t.sqrt(d_sq_safe); // (N*M) x 1

        // Coincident points carry no directional evidence.
        let degen_mask = {
            let v = t.value(d_sq);
            let mask = v.mapv(|x| if x.sqrt() < DEGENERATE_DIR_EPS { 0.0 } else { 1.0 });
            t.constant(mask)
        };

        // Cosine factors against every branch direction.
        let dir_dot = t.matmul(dirs, self.b_dir); // (N*M) x (d_out*S)
        let b_sq = {
            let bb = t.mul(self.b_dir, self.b_dir);
            t.sum_axis0(bb) // 1 x (d_out*S)
        };
        let b_sq_safe = t.clamp_min(b_sq, DEGENERATE_DIR_EPS * DEGENERATE_DIR_EPS);
        let b_norm = t.sqrt(b_sq_safe);
        let b_norm_b = t.broadcast_rows(b_norm, n * m);
        let dist_b = t.broadcast_cols(dist, d_out * sb);
        let denom = t.mul(dist_b, b_norm_b);
        let cos_raw = t.div(dir_dot, denom);
        let degen_b = t.broadcast_cols(degen_mask, d_out * sb);
        let cos = t.mul(cos_raw, degen_b);

        // Neighbor feature / branch weight inner products.
        let f_nbr = match feats {
            FeatureSource::Relative => dirs,
            FeatureSource::Absolute => p_nbr,
            FeatureSource::Layer(f) => t.gather_rows(f, &idx_nbr),
        };
        let feat_dot = t.matmul(f_nbr, self.w_branch); // (N*M) x (d_out*S)
        let sim = t.mul(feat_dot, cos);

        // Signed max over each point's neighbors, then sum over branches.
        let sim_max = t.max_group_rows(sim, m); // N x (d_out*S)
        let dir_branch_sum = t.sum_col_groups(sim_max, sb); // N x d_out

        // Center term.
        let f_ctr = match feats {
            FeatureSource::Relative => t.constant(Array2::ones((n, 3))),
            FeatureSource::Absolute => points,
            FeatureSource::Layer(f) => f,
        };
        let center = t.matmul(f_ctr, self.w_center); // N x d_out
        let conv_dir = t.add(center, dir_branch_sum);

        // Distance convolution: farthest-neighbor distance times the summed
        // kernel weights (center + branches).
        let max_dist = t.max_group_rows(dist, m); // N x 1
        let branch_w_sum = t.sum_col_groups(self.dist_branch, sb); // 1 x d_out
        let total_w = t.add(branch_w_sum, self.dist_center);
        let max_dist_b = t.broadcast_cols(max_dist, d_out);
        let total_w_b = t.broadcast_rows(total_w, n);
        let conv_dist = t.mul(max_dist_b, total_w_b);

        // Concatenate and mix.
        let cat = t.concat_cols(conv_dir, conv_dist); // N x 2*d_out
        let mixed = self.mlp.forward(t, cat);
        let normed = t.batch_norm(mixed, self.bn_gamma, self.bn_beta, BN_EPS);
        t.leaky_relu(normed, LEAKY_SLOPE)
    }
}
