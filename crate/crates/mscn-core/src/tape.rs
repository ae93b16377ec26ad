//! Minimal reverse-mode autodiff over `Array2<f64>`.
//!
//! The layer and loss code records every forward operation on a [`Tape`];
//! [`Tape::backward`] then walks the recording in reverse and accumulates
//! gradients for every leaf. Scalars are `1x1` arrays, row vectors `1xD`,
//! column vectors `Nx1`. The op set is deliberately small: everything the
//! network needs (gathers, grouped maxima, broadcasts, the usual elementwise
//! maps and matrix products) and nothing else.

use ndarray::Array2;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    /// Differentiable input (parameter or network input).
    Leaf,
    /// Non-differentiable input (masks, geometry constants).
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    /// Output row r is input row `indices[r]`.
    GatherRows(usize, Vec<usize>),
    /// Input `(G*m) x K` in m-major row groups; output `G x K` is the
    /// per-group column-wise max. `argmax` stores the winning absolute row
    /// for each output element (row-major).
    MaxGroupRows(usize, Vec<usize>),
    /// Column-wise max over all rows: `N x K -> 1 x K`.
    MaxCols(usize, Vec<usize>),
    SumAxis0(usize),
    SumAxis1(usize),
    SumAll(usize),
    /// Input `N x (K*group)`; output `N x K`, summing each run of `group`
    /// adjacent columns.
    SumColGroups(usize, usize),
    ConcatCols(usize, usize),
    /// `1 x D -> N x D`.
    BroadcastRows(usize),
    /// `N x 1 -> N x D`.
    BroadcastCols(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    LeakyRelu(usize, f64),
    /// `max(x, c)` with gradient blocked on the clamped side.
    ClampMin(usize, f64),
}

struct Node {
    value: Array2<f64>,
    needs_grad: bool,
    op: Op,
}

/// Gradients for every differentiable node of one backward pass.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; zero array if `v` never influenced the root.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(tape.nodes[v.0].value.dim()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, false, Op::Constant)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Copy of a node's value as a fresh constant (gradient cut).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, ng, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape mismatch");
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, ng, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape mismatch");
        let value = self.value(a) * self.value(b);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, ng, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "div shape mismatch");
        let value = self.value(a) / self.value(b);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, ng, Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| -x);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x * c);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x + c);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::AddScalar(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dim mismatch");
        let value = va.dot(vb);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, ng, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let ng = self.needs(a.0);
        self.push(value, ng, Op::Transpose(a.0))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let va = self.value(a);
        let mut value = Array2::zeros((indices.len(), va.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            value.row_mut(r).assign(&va.row(i));
        }
        let ng = self.needs(a.0);
        self.push(value, ng, Op::GatherRows(a.0, indices.to_vec()))
    }

    /// Max over groups of `group` adjacent rows (`(G*group) x K -> G x K`).
    pub fn max_group_rows(&mut self, a: Var, group: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.nrows() % group, 0, "row count not divisible by group");
        let g = va.nrows() / group;
        let k = va.ncols();
        let mut value = Array2::zeros((g, k));
        let mut argmax = vec![0usize; g * k];
        for gi in 0..g {
            for ki in 0..k {
                let mut best = f64::NEG_INFINITY;
                let mut best_row = gi * group;
                for m in 0..group {
                    let row = gi * group + m;
                    let x = va[[row, ki]];
                    if x > best {
                        best = x;
                        best_row = row;
                    }
                }
                value[[gi, ki]] = best;
                argmax[gi * k + ki] = best_row;
            }
        }
        let ng = self.needs(a.0);
        self.push(value, ng, Op::MaxGroupRows(a.0, argmax))
    }

    /// Column-wise max over all rows (`N x K -> 1 x K`).
    pub fn max_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let k = va.ncols();
        let mut value = Array2::zeros((1, k));
        let mut argmax = vec![0usize; k];
        for ki in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut best_row = 0;
            for r in 0..va.nrows() {
                let x = va[[r, ki]];
                if x > best {
                    best = x;
                    best_row = r;
                }
            }
            value[[0, ki]] = best;
            argmax[ki] = best_row;
        }
        let ng = self.needs(a.0);
        self.push(value, ng, Op::MaxCols(a.0, argmax))
    }

    pub fn sum_axis0(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .sum_axis(ndarray::Axis(0))
            .insert_axis(ndarray::Axis(0));
        let ng = self.needs(a.0);
        self.push(value, ng, Op::SumAxis0(a.0))
    }

    pub fn sum_axis1(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .sum_axis(ndarray::Axis(1))
            .insert_axis(ndarray::Axis(1));
        let ng = self.needs(a.0);
        self.push(value, ng, Op::SumAxis1(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a.0);
        self.push(value, ng, Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums each run of `group` adjacent columns (`N x (K*group) -> N x K`).
    pub fn sum_col_groups(&mut self, a: Var, group: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.ncols() % group, 0, "col count not divisible by group");
        let k = va.ncols() / group;
        let mut value = Array2::zeros((va.nrows(), k));
        for r in 0..va.nrows() {
            for ki in 0..k {
                let mut s = 0.0;
                for g in 0..group {
                    s += va[[r, ki * group + g]];
                }
                value[[r, ki]] = s;
            }
        }
        let ng = self.needs(a.0);
        self.push(value, ng, Op::SumColGroups(a.0, group))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.nrows(), vb.nrows(), "concat row mismatch");
        let mut value = Array2::zeros((va.nrows(), va.ncols() + vb.ncols()));
        value
            .slice_mut(ndarray::s![.., ..va.ncols()])
            .assign(va);
        value
            .slice_mut(ndarray::s![.., va.ncols()..])
            .assign(vb);
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, ng, Op::ConcatCols(a.0, b.0))
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.nrows(), 1, "broadcast_rows expects a 1 x D input");
        let mut value = Array2::zeros((n, va.ncols()));
        for mut row in value.rows_mut() {
            row.assign(&va.row(0));
        }
        let ng = self.needs(a.0);
        self.push(value, ng, Op::BroadcastRows(a.0))
    }

    pub fn broadcast_cols(&mut self, a: Var, d: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.ncols(), 1, "broadcast_cols expects an N x 1 input");
        let mut value = Array2::zeros((va.nrows(), d));
        for (r, mut row) in value.rows_mut().into_iter().enumerate() {
            row.fill(va[[r, 0]]);
        }
        let ng = self.needs(a.0);
        self.push(value, ng, Op::BroadcastCols(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::Ln(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        let ng = self.needs(a.0);
        self.push(value, ng, Op::Sqrt(a.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.needs(a.0);
        self.push(value, ng, Op::LeakyRelu(a.0, slope))
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(c));
        let ng = self.needs(a.0);
        self.push(value, ng, Op::ClampMin(a.0, c))
    }

    // ---- composites -------------------------------------------------------

    /// `x + b` where `b` is a `1 x D` bias row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let n = self.value(x).nrows();
        let bb = self.broadcast_rows(b, n);
        self.add(x, bb)
    }

    /// Row-wise squared L2 norm (`N x D -> N x 1`).
    pub fn row_sq_norm(&mut self, x: Var) -> Var {
        let sq = self.mul(x, x);
        self.sum_axis1(sq)
    }

    /// Rows scaled to unit L2 norm, guarded against zero rows.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let d = self.value(x).ncols();
        let sq = self.row_sq_norm(x);
        let norm = self.sqrt(sq);
        let norm = self.clamp_min(norm, eps);
        let norm_b = self.broadcast_cols(norm, d);
        self.div(x, norm_b)
    }

    /// Row-wise `log(sum(exp(x)))` with a detached max shift for stability.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let shift_val = {
            let v = self.value(x);
            let mut m = Array2::zeros((v.nrows(), 1));
            for (r, row) in v.rows().into_iter().enumerate() {
                m[[r, 0]] = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            }
            m
        };
        let d = self.value(x).ncols();
        let shift = self.constant(shift_val);
        let shift_b = self.broadcast_cols(shift, d);
        let centered = self.sub(x, shift_b);
        let e = self.exp(centered);
        let s = self.sum_axis1(e);
        let l = self.ln(s);
        self.add(l, shift)
    }

    /// Mean cross-entropy of row-wise logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (n, c) = self.value(logits).dim();
        assert_eq!(n, labels.len());
        let lse = self.logsumexp_rows(logits);
        // One-hot pick of the true-class logit via masked row sums.
        let mut mask = Array2::zeros((n, c));
        for (r, &y) in labels.iter().enumerate() {
            mask[[r, y]] = 1.0;
        }
        let mask = self.constant(mask);
        let picked_mat = self.mul(logits, mask);
        let picked = self.sum_axis1(picked_mat);
        let per_row = self.sub(lse, picked);
        self.mean_all(per_row)
    }

    /// Per-feature batch normalization over rows:
    /// `gamma * (x - mean) / sqrt(var + eps) + beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let n = self.value(x).nrows();
        let sum = self.sum_axis0(x);
        let mean = self.scale(sum, 1.0 / n as f64);
        let mean_b = self.broadcast_rows(mean, n);
        let centered = self.sub(x, mean_b);
        let sq = self.mul(centered, centered);
        let var_sum = self.sum_axis0(sq);
        let var = self.scale(var_sum, 1.0 / n as f64);
        let var = self.add_scalar(var, eps);
        let std = self.sqrt(var);
        let std_b = self.broadcast_rows(std, n);
        let xhat = self.div(centered, std_b);
        let gamma_b = self.broadcast_rows(gamma, n);
        let scaled = self.mul(xhat, gamma_b);
        let beta_b = self.broadcast_rows(beta, n);
        self.add(scaled, beta_b)
    }

    // ---- backward ---------------------------------------------------------

    /// Backpropagates from a scalar root (seed gradient 1).
    pub fn backward(&mut self, root: Var) -> Gradients {
        let seed = Array2::from_elem((1, 1), 1.0);
        self.backward_with_seed(root, seed)
    }

    /// Backpropagates an explicit seed gradient from `root`.
    pub fn backward_with_seed(&mut self, root: Var, seed: Array2<f64>) -> Gradients {
        assert_eq!(self.nodes[root.0].value.dim(), seed.dim(), "seed shape mismatch");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.accumulate_parents(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate_parents(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |idx: usize, contrib: Array2<f64>| {
            if !self.nodes[idx].needs_grad {
                return;
            }
            match &mut grads[idx] {
                Some(existing) => *existing += &contrib,
                slot => *slot = Some(contrib),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g * &self.nodes[*b].value);
                acc(*b, g * &self.nodes[*a].value);
            }
            Op::Div(a, b) => {
                let vb = &self.nodes[*b].value;
                acc(*a, g / vb);
                let va = &self.nodes[*a].value;
                acc(*b, -(g * va) / (vb * vb));
            }
            Op::Neg(a) => acc(*a, g.mapv(|x| -x)),
            Op::Scale(a, c) => acc(*a, g.mapv(|x| x * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                acc(*a, g.dot(&vb.t()));
                acc(*b, va.t().dot(g));
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::GatherRows(a, indices) => {
                let va = &self.nodes[*a].value;
                let mut da = Array2::zeros(va.dim());
                for (r, &src) in indices.iter().enumerate() {
                    let mut dst = da.row_mut(src);
                    dst += &g.row(r);
                }
                acc(*a, da);
            }
            Op::MaxGroupRows(a, argmax) => {
                let va = &self.nodes[*a].value;
                let k = g.ncols();
                let mut da = Array2::zeros(va.dim());
                for gi in 0..g.nrows() {
                    for ki in 0..k {
                        da[[argmax[gi * k + ki], ki]] += g[[gi, ki]];
                    }
                }
                acc(*a, da);
            }
            Op::MaxCols(a, argmax) => {
                let va = &self.nodes[*a].value;
                let mut da = Array2::zeros(va.dim());
                for (ki, &r) in argmax.iter().enumerate() {
                    da[[r, ki]] += g[[0, ki]];
                }
                acc(*a, da);
            }
            Op::SumAxis0(a) => {
                let mut da = Array2::zeros(self.nodes[*a].value.dim());
                for mut row in da.rows_mut() {
                    row.assign(&g.row(0));
                }
                acc(*a, da);
            }
            Op::SumAxis1(a) => {
                let va = &self.nodes[*a].value;
                let mut da = Array2::zeros(va.dim());
                for (r, mut row) in da.rows_mut().into_iter().enumerate() {
                    row.fill(g[[r, 0]]);
                }
                acc(*a, da);
            }
            Op::SumAll(a) => {
                let da = Array2::from_elem(self.nodes[*a].value.dim(), g[[0, 0]]);
                acc(*a, da);
            }
            Op::SumColGroups(a, group) => {
                let va = &self.nodes[*a].value;
                let mut da = Array2::zeros(va.dim());
                let k = g.ncols();
                for r in 0..va.nrows() {
                    for ki in 0..k {
                        for gi in 0..*group {
                            da[[r, ki * group + gi]] = g[[r, ki]];
                        }
                    }
                }
                acc(*a, da);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.ncols();
                acc(*a, g.slice(ndarray::s![.., ..ca]).to_owned());
                acc(*b, g.slice(ndarray::s![.., ca..]).to_owned());
            }
            Op::BroadcastRows(a) => {
                let da = g
                    .sum_axis(ndarray::Axis(0))
                    .insert_axis(ndarray::Axis(0));
                acc(*a, da);
            }
            Op::BroadcastCols(a) => {
                let da = g
                    .sum_axis(ndarray::Axis(1))
                    .insert_axis(ndarray::Axis(1));
                acc(*a, da);
            }
            Op::Exp(a) => acc(*a, g * &self.nodes[i].value),
            Op::Ln(a) => acc(*a, g / &self.nodes[*a].value),
            Op::Sqrt(a) => {
                let out = &self.nodes[i].value;
                acc(*a, g / &out.mapv(|x| 2.0 * x));
            }
            Op::LeakyRelu(a, slope) => {
                let va = &self.nodes[*a].value;
                let mut da = g.clone();
                ndarray::Zip::from(&mut da).and(va).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= slope;
                    }
                });
                acc(*a, da);
            }
            Op::ClampMin(a, c) => {
                let va = &self.nodes[*a].value;
                let mut da = g.clone();
                ndarray::Zip::from(&mut da).and(va).for_each(|d, &x| {
                    if x <= *c {
                        *d = 0.0;
                    }
                });
                acc(*a, da);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central finite difference of a scalar-valued builder at `x`.
    fn fd_grad(
        x: &Array2<f64>,
        f: impl Fn(&Array2<f64>) -> f64,
        h: f64,
    ) -> Array2<f64> {
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        let denom = 1.0_f64.max(
            a.iter()
                .chain(b.iter())
                .fold(0.0f64, |m, v| m.max(v.abs())),
        );
        for (x, y) in a.iter().zip(b.iter()) {
            assert!(
                (x - y).abs() / denom < tol,
                "mismatch: {x} vs {y} (tol {tol})"
            );
        }
    }

    #[test]
    fn matmul_grad_matches_fd() {
        let a0 = array![[0.3, -1.2], [0.7, 0.4], [1.1, -0.5]];
        let b0 = array![[0.2, 0.9, -0.3], [1.5, -0.7, 0.6]];
        let f = |a: &Array2<f64>| {
            let mut t = Tape::new();
            let av = t.leaf(a.clone());
            let bv = t.constant(b0.clone());
            let c = t.matmul(av, bv);
            let s = t.sum_all(c);
            t.scalar(s)
        };
        let mut t = Tape::new();
        let av = t.leaf(a0.clone());
        let bv = t.leaf(b0.clone());
        let c = t.matmul(av, bv);
        let s = t.sum_all(c);
        let g = t.backward(s);
        assert_close(&g.wrt(&t, av), &fd_grad(&a0, f, 1e-6), 1e-8);

        let fb = |b: &Array2<f64>| {
            let mut t = Tape::new();
            let av = t.constant(a0.clone());
            let bv = t.leaf(b.clone());
            let c = t.matmul(av, bv);
            let s = t.sum_all(c);
            t.scalar(s)
        };
        assert_close(&g.wrt(&t, bv), &fd_grad(&b0, fb, 1e-6), 1e-8);
    }

    #[test]
    fn grouped_max_and_gather_grads_match_fd() {
        let x0 = array![
            [0.5, -0.2],
            [0.9, 0.1],
            [-0.4, 0.8],
            [0.3, 0.35],
            [1.2, -0.6],
            [0.0, 0.2]
        ];
        let run = |x: &Array2<f64>, t: &mut Tape| -> Var {
            let xv = t.leaf(x.clone());
            let gathered = t.gather_rows(xv, &[1, 0, 2, 5, 4, 3]);
            let m = t.max_group_rows(gathered, 3);
            let w = t.constant(array![[1.0, -2.0], [0.5, 0.7]]);
            let p = t.mul(m, w);
            t.sum_all(p)
        };
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let s = run(x, &mut t);
            t.scalar(s)
        };
        let mut t = Tape::new();
        let xv = t.leaf(x0.clone());
        let gathered = t.gather_rows(xv, &[1, 0, 2, 5, 4, 3]);
        let m = t.max_group_rows(gathered, 3);
        let w = t.constant(array![[1.0, -2.0], [0.5, 0.7]]);
        let p = t.mul(m, w);
        let s = t.sum_all(p);
        let g = t.backward(s);
        assert_close(&g.wrt(&t, xv), &fd_grad(&x0, f, 1e-6), 1e-7);
    }

    #[test]
    fn batch_norm_grad_matches_fd() {
        let x0 = array![[1.0, -0.5], [0.2, 0.8], [-1.1, 0.3], [0.6, -0.9]];
        let gamma0 = array![[1.3, 0.7]];
        let beta0 = array![[0.1, -0.2]];
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let gv = t.constant(gamma0.clone());
            let bv = t.constant(beta0.clone());
            let y = t.batch_norm(xv, gv, bv, 1e-5);
            let y2 = t.mul(y, y);
            let s = t.sum_all(y2);
            t.scalar(s)
        };
        let mut t = Tape::new();
        let xv = t.leaf(x0.clone());
        let gv = t.leaf(gamma0.clone());
        let bv = t.leaf(beta0.clone());
        let y = t.batch_norm(xv, gv, bv, 1e-5);
        let y2 = t.mul(y, y);
        let s = t.sum_all(y2);
        let g = t.backward(s);
        assert_close(&g.wrt(&t, xv), &fd_grad(&x0, f, 1e-6), 1e-6);
        let fg = |gamma: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.constant(x0.clone());
            let gvv = t.leaf(gamma.clone());
            let bv = t.constant(beta0.clone());
            let y = t.batch_norm(xv, gvv, bv, 1e-5);
            let y2 = t.mul(y, y);
            let s = t.sum_all(y2);
            t.scalar(s)
        };
        assert_close(&g.wrt(&t, gv), &fd_grad(&gamma0, fg, 1e-6), 1e-6);
    }

    #[test]
    fn softmax_ce_grad_is_softmax_minus_onehot() {
        let logits = array![[2.0, -1.0, 0.5], [0.1, 0.2, 0.3]];
        let labels = [0usize, 2usize];
        let mut t = Tape::new();
        let lv = t.leaf(logits.clone());
        let loss = t.softmax_cross_entropy(lv, &labels);
        let g = t.backward(loss);
        let dl = g.wrt(&t, lv);
        for r in 0..2 {
            let row = logits.row(r);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..3 {
                let soft = exps[c] / z;
                let expect = (soft - if labels[r] == c { 1.0 } else { 0.0 }) / 2.0;
                assert!((dl[[r, c]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_rows_produces_unit_rows() {
        let mut t = Tape::new();
        let x = t.leaf(array![[3.0, 4.0], [0.0, 2.0]]);
        let n = t.normalize_rows(x, 1e-12);
        let v = t.value(n);
        for row in v.rows() {
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_stable_for_large_inputs() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1000.0, 1001.0]]);
        let l = t.logsumexp_rows(x);
        let v = t.scalar(l);
        assert!((v - (1001.0 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-9);
        let g = t.backward(l);
        assert!(g.wrt(&t, x).iter().all(|v| v.is_finite()));
    }
}
