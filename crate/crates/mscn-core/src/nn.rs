//! Shared neural-net plumbing: dense layers, parameter naming, and the
//! tape binder that connects parameter tensors to autodiff variables.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{Gradients, Tape, Var};

/// Leaky rectifier slope used by every layer MLP.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Anything holding named parameter tensors. Names are stable and double as
/// checkpoint keys and optimizer state keys.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>));

    fn named_tensors(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// One dense layer `y = x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Dense {
    /// Xavier-uniform init.
    pub fn init(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let lim = (6.0 / (d_in + d_out) as f64).sqrt();
        Dense {
            w: Array2::from_shape_fn((d_in, d_out), |_| rng.gen_range(-lim..lim)),
            b: Array2::zeros((1, d_out)),
        }
    }

    /// All-zero layer; used where identity behavior at init is required.
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Dense {
            w: Array2::zeros((d_in, d_out)),
            b: Array2::zeros((1, d_out)),
        }
    }

    pub fn bind(&self, b: &mut Binder<'_>, prefix: &str) -> DenseVars {
        DenseVars {
            w: b.leaf(&join(prefix, "w"), &self.w),
            b: b.leaf(&join(prefix, "b"), &self.b),
        }
    }

    /// Participates in the forward pass but receives no gradient.
    pub fn bind_frozen(&self, b: &mut Binder<'_>) -> DenseVars {
        DenseVars {
            w: b.frozen(&self.w),
            b: b.frozen(&self.b),
        }
    }
}

impl Parameterized for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

#[derive(Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

impl DenseVars {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let y = t.matmul(x, self.w);
        t.add_bias(y, self.b)
    }
}

/// Records which tape variable each named parameter was bound to, so
/// gradients can be collected back by name after `backward`.
pub struct Binder<'a> {
    pub tape: &'a mut Tape,
    registry: Vec<(String, Var)>,
}

impl<'a> Binder<'a> {
    pub fn new(tape: &'a mut Tape) -> Self {
        Binder {
            tape,
            registry: Vec::new(),
        }
    }

    pub fn leaf(&mut self, name: &str, value: &Array2<f64>) -> Var {
        let v = self.tape.leaf(value.clone());
        self.registry.push((name.to_string(), v));
        v
    }

    /// Bound but explicitly excluded from gradient collection (frozen
    /// weights still participate in the forward pass as constants).
    pub fn frozen(&mut self, value: &Array2<f64>) -> Var {
        self.tape.constant(value.clone())
    }

    /// Collects gradients for every bound parameter into a [`GradStore`].
    pub fn collect(&self, tape: &Tape, grads: &Gradients, store: &mut GradStore) {
        collect_registry(&self.registry, tape, grads, store);
    }

    /// Releases the name-to-variable registry so the tape can outlive the
    /// binder (multi-phase training keeps per-cloud tapes around).
    pub fn into_registry(self) -> Vec<(String, Var)> {
        self.registry
    }
}

/// Registry-based gradient collection for tapes whose binder is gone.
pub fn collect_registry(
    registry: &[(String, Var)],
    tape: &Tape,
    grads: &Gradients,
    store: &mut GradStore,
) {
    for (name, var) in registry {
        store.add(name, grads.wrt(tape, *var));
    }
}

/// Accumulated gradients keyed by parameter name.
#[derive(Default)]
pub struct GradStore {
    map: HashMap<String, Array2<f64>>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, grad: Array2<f64>) {
        match self.map.get_mut(name) {
            Some(g) => *g += &grad,
            None => {
                self.map.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.map.get(name)
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.map.values_mut() {
            g.mapv_inplace(|x| x * c);
        }
    }

    pub fn merge(&mut self, other: GradStore) {
        for (name, g) in other.map {
            self.add(&name, g);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Seeded dropout mask: inverted scaling so eval needs no correction.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn(shape, |_| {
        if rng.gen_range(0.0..1.0) < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}
