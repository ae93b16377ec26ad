//! Finite-difference gradient verification, shared by unit, integration and
//! acceptance tests.

use ndarray::Array2;

use crate::nn::{GradStore, Parameterized};

/// Outcome of a finite-difference sweep over every parameter tensor.
#[derive(Debug)]
pub struct FdReport {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl FdReport {
    pub fn ok(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }
}

fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

fn set_flat(t: &mut Array2<f64>, idx: usize, v: f64) {
    let cols = t.ncols();
    t[[idx / cols, idx % cols]] = v;
}

fn get_flat(t: &Array2<f64>, idx: usize) -> f64 {
    t[[idx / cols_of(t), idx % cols_of(t)]]
}

fn cols_of(t: &Array2<f64>) -> usize {
    t.ncols()
}

/// Central-difference check of `grads` against the scalar objective `loss`.
///
/// Probes up to `max_per_tensor` evenly spaced elements of every tensor that
/// `params` exposes. Gradient names are looked up under `prefix` (the same
/// prefix the tensors were bound with). A probe fails when the relative
/// error exceeds `tol` beyond a small absolute floor.
pub fn fd_check<P, F>(
    params: &P,
    grads: &GradStore,
    prefix: &str,
    loss: F,
    max_per_tensor: usize,
    h: f64,
    tol: f64,
) -> FdReport
where
    P: Parameterized + Clone,
    F: Fn(&P) -> f64,
{
    let mut report = FdReport {
        checked: 0,
        failures: Vec::new(),
    };
    for (name, tensor) in params.named_tensors() {
        let full = crate::nn::join(prefix, &name);
        let g = match grads.get(&full) {
            Some(g) => g.clone(),
            None => {
                report.failures.push(format!("{full}: no gradient recorded"));
                continue;
            }
        };
        for idx in probe_indices(tensor.len(), max_per_tensor) {
            let orig = get_flat(&tensor, idx);
            let mut plus = params.clone();
            let mut minus = params.clone();
            for (target, v) in [(&mut plus, orig + h), (&mut minus, orig - h)] {
                target.visit_mut("", &mut |n, t| {
                    if n == name {
                        set_flat(t, idx, v);
                    }
                });
            }
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = get_flat(&g, idx);
            let denom = numeric.abs().max(analytic.abs()).max(1e-6);
            let rel = (numeric - analytic).abs() / denom;
            report.checked += 1;
            if rel > tol {
                report.failures.push(format!(
                    "{full}[{idx}]: analytic {analytic:.6e}, numeric {numeric:.6e}, rel {rel:.3e}"
                ));
            }
        }
    }
    report
}
