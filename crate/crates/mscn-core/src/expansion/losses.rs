//! Contrastive, reconstruction, and diversity losses for expansion training.
//!
//! Embedding batches are `2N x d` with rows `2i` and `2i+1` forming a
//! positive pair (source cloud and its generated counterpart).

use ndarray::Array2;

use crate::tape::{Tape, Var};

/// Row index of the positive partner under the interleaved pairing.
pub fn nce_partner(i: usize) -> usize {
    i ^ 1
}

fn pair_masks(n2: usize) -> (Array2<f64>, Array2<f64>) {
    let mut diag = Array2::zeros((n2, n2));
    let mut pos = Array2::zeros((n2, n2));
    for i in 0..n2 {
        diag[[i, i]] = -1e9;
        pos[[i, nce_partner(i)]] = 1.0;
    }
    (diag, pos)
}

/// InfoNCE over unit-norm rows, averaged over the 2N anchors. Per anchor i:
/// `-log(exp(s_i,p) / sum_{j != i} exp(s_ij))` with `s = z z^T / tau`.
pub fn loss_nce(t: &mut Tape, z: Var, temperature: f64) -> Var {
    let diff = nce_per_anchor(t, z, temperature);
    t.mean_all(diff)
}

/// Modified InfoNCE of the adversarial objective:
/// `sum_i (1 - log(exp(s_i,p) / sum_{j != i} exp(s_ij)))`.
pub fn loss_nce_star(t: &mut Tape, z: Var, temperature: f64) -> Var {
    let n2 = t.value(z).nrows();
    let diff = nce_per_anchor(t, z, temperature);
    let sum = t.sum_all(diff);
    t.add_scalar(sum, n2 as f64)
}

/// Column vector of per-anchor `-log` terms.
fn nce_per_anchor(t: &mut Tape, z: Var, temperature: f64) -> Var {
    let n2 = t.value(z).nrows();
    assert!(n2 >= 2 && n2 % 2 == 0, "need paired embeddings");
    let (diag, pos) = pair_masks(n2);
    let zt = t.transpose(z);
    let sims = t.matmul(z, zt);
    let sims = t.scale(sims, 1.0 / temperature);
    let diag = t.constant(diag);
    let masked = t.add(sims, diag);
    let lse = t.logsumexp_rows(masked);
    let pos = t.constant(pos);
    let picked = t.mul(sims, pos);
    let pos_sim = t.sum_axis1(picked);
    t.sub(lse, pos_sim)
}

/// Direct-formula InfoNCE oracle (mean over anchors).
pub fn nce_reference(z: &Array2<f64>, temperature: f64) -> f64 {
    nce_reference_terms(z, temperature).iter().sum::<f64>() / z.nrows() as f64
}

/// Direct-formula modified InfoNCE oracle (sum form plus 1 per anchor).
pub fn nce_star_reference(z: &Array2<f64>, temperature: f64) -> f64 {
    let terms = nce_reference_terms(z, temperature);
    terms.iter().map(|l| 1.0 + l).sum()
}

fn nce_reference_terms(z: &Array2<f64>, temperature: f64) -> Vec<f64> {
    let n2 = z.nrows();
    (0..n2)
        .map(|i| {
            let zi = z.row(i);
            let sim = |j: usize| zi.dot(&z.row(j)) / temperature;
            let denom: f64 = (0..n2).filter(|&j| j != i).map(|j| sim(j).exp()).sum();
            -(sim(nce_partner(i)).exp() / denom).ln()
        })
        .collect()
}

/// Mean over points of the squared Euclidean displacement between two
/// order-aligned coordinate sets.
pub fn loss_recon(t: &mut Tape, x: Var, x_rec: Var) -> Var {
    let n = t.value(x).nrows();
    let d = t.sub(x, x_rec);
    let sq = t.mul(d, d);
    let s = t.sum_all(sq);
    t.scale(s, 1.0 / n as f64)
}

pub fn recon_reference(x: &Array2<f64>, x_rec: &Array2<f64>) -> f64 {
    let d = x - x_rec;
    d.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64
}

/// `min(v, margin)` for a scalar variable; caps the diversity reward so the
/// maximized term cannot blow up.
pub fn clip_max(t: &mut Tape, v: Var, margin: f64) -> Var {
    let n = t.neg(v);
    let c = t.clamp_min(n, -margin);
    t.neg(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(z: &mut Array2<f64>) {
        for mut r in z.rows_mut() {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.mapv_inplace(|v| v / n);
        }
    }

    /// Pairs identical, cross-pairs orthogonal, 2N=4: each anchor contributes
    /// -log(e / (e + 2)).
    #[test]
    fn nce_orthogonal_hand_case() {
        let z = array![
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0]
        ];
        let expect = -(std::f64::consts::E / (std::f64::consts::E + 2.0)).ln();
        assert!((nce_reference(&z, 1.0) - expect).abs() < 1e-12);
        let mut t = Tape::new();
        let zv = t.leaf(z.clone());
        let l = loss_nce(&mut t, zv, 1.0);
        assert!((t.scalar(l) - expect).abs() < 1e-6);
        let ls = loss_nce_star(&mut t, zv, 1.0);
        assert!((t.scalar(ls) - 4.0 * (1.0 + expect)).abs() < 1e-6);
    }

    /// All embeddings identical: loss is log(2N - 1) = log 3 for 2N = 4.
    #[test]
    fn nce_identical_embeddings_closed_form() {
        let z = Array2::from_elem((4, 1), 1.0);
        let expect = 3.0f64.ln();
        assert!((nce_reference(&z, 1.0) - expect).abs() < 1e-12);
        let mut t = Tape::new();
        let zv = t.leaf(z);
        let l = loss_nce(&mut t, zv, 1.0);
        assert!((t.scalar(l) - expect).abs() < 1e-6);
    }

    #[test]
    fn nce_star_is_2n_plus_sum_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2usize, 3, 5] {
            let mut z = Array2::from_shape_fn((2 * n, 8), |_| rng.gen_range(-1.0..1.0f64));
            unit_rows(&mut z);
            let sum_form = nce_reference_terms(&z, 1.0).iter().sum::<f64>();
            let star = nce_star_reference(&z, 1.0);
            assert!((star - (2.0 * n as f64 + sum_form)).abs() < 1e-12);
            let mut t = Tape::new();
            let zv = t.leaf(z);
            let l = loss_nce_star(&mut t, zv, 1.0);
            assert!((t.scalar(l) - star).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_nce_matches_reference_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let mut z = Array2::from_shape_fn((8, 5), |_| rng.gen_range(-1.0..1.0f64));
            unit_rows(&mut z);
            let expect = nce_reference(&z, 0.7);
            let mut t = Tape::new();
            let zv = t.leaf(z);
            let l = loss_nce(&mut t, zv, 0.7);
            assert!((t.scalar(l) - expect).abs() < 1e-9);
        }
    }

    /// Raising the positive similarity with everything else fixed strictly
    /// lowers the loss.
    #[test]
    fn nce_monotone_in_positive_similarity() {
        let base = array![
            [1.0, 0.0, 0.0],
            [0.8, 0.6, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.6, 0.8]
        ];
        let tighter = array![
            [1.0, 0.0, 0.0],
            [0.98, 0.19899748742132397, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.6, 0.8]
        ];
        assert!(nce_reference(&tighter, 1.0) < nce_reference(&base, 1.0));
    }

    #[test]
    fn nce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z0 = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0f64));
        let mut t = Tape::new();
        let zv = t.leaf(z0.clone());
        let zn = t.normalize_rows(zv, 1e-12);
        let l = loss_nce(&mut t, zn, 1.0);
        let grads = t.backward(l);
        let g = grads.wrt(&t, zv);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let eval = |delta: f64| {
                    let mut z = z0.clone();
                    z[[i, j]] += delta;
                    unit_rows(&mut z);
                    nce_reference(&z, 1.0)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!(
                    (fd - g[[i, j]]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "({i},{j}): fd {fd} vs {}",
                    g[[i, j]]
                );
            }
        }
    }

    #[test]
    fn recon_hand_case_unit_shift() {
        let x = Array2::zeros((100, 3));
        let mut y = x.clone();
        y[[17, 0]] = 1.0;
        assert!((recon_reference(&x, &y) - 0.01).abs() < 1e-15);
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let yv = t.constant(y);
        let l = loss_recon(&mut t, xv, yv);
        assert!((t.scalar(l) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn recon_identical_inputs_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((10, 3), |_| rng.gen_range(-1.0..1.0f64));
        assert_eq!(recon_reference(&x, &x), 0.0);
    }

    #[test]
    fn clip_caps_value_and_gradient() {
        let mut t = Tape::new();
        let v = t.leaf(array![[3.0]]);
        let c = clip_max(&mut t, v, 1.0);
        assert_eq!(t.scalar(c), 1.0);
        let g = t.backward(c).wrt(&t, v);
        assert_eq!(g[[0, 0]], 0.0);

        let mut t = Tape::new();
        let v = t.leaf(array![[0.4]]);
        let c = clip_max(&mut t, v, 1.0);
        assert_eq!(t.scalar(c), 0.4);
        let g = t.backward(c).wrt(&t, v);
        assert_eq!(g[[0, 0]], 1.0);
    }
}
