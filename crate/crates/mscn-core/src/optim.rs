//! Adam optimizer over named parameter tensors.

use std::collections::HashMap;

use ndarray::Array2;

use crate::nn::{GradStore, Parameterized};

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: HashMap<String, Array2<f64>>,
    v: HashMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One update step over every parameter that has a gradient in `grads`.
    /// `prefix` must match the prefix the parameters were bound with, so
    /// gradient names line up; it also namespaces the moment state, letting
    /// one optimizer drive several parameter groups.
    pub fn step(&mut self, params: &mut dyn Parameterized, prefix: &str, grads: &GradStore) {
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let (m_map, v_map) = (&mut self.m, &mut self.v);
        params.visit_mut(prefix, &mut |name, tensor| {
            let Some(g) = grads.get(name) else { return };
            let m = m_map
                .entry(name.to_string())
                .or_insert_with(|| Array2::zeros(tensor.dim()));
            let v = v_map
                .entry(name.to_string())
                .or_insert_with(|| Array2::zeros(tensor.dim()));
            ndarray::Zip::from(tensor)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use ndarray::array;

    #[test]
    fn descends_a_quadratic() {
        // Minimize ||W||^2 over a single dense layer's weight.
        let mut layer = Dense {
            w: array![[1.0, -2.0]],
            b: array![[0.0, 0.0]],
        };
        let mut opt = Adam::new(0.05);
        for _ in 0..200 {
            let mut grads = GradStore::new();
            grads.add("w", layer.w.mapv(|x| 2.0 * x));
            opt.step(&mut layer, "", &grads);
        }
        assert!(layer.w.iter().all(|x| x.abs() < 1e-2), "w = {:?}", layer.w);
    }
}
