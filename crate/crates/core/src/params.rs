//! Named parameter storage and the forward-pass binder.
//!
//! A [`ParamStore`] holds every named tensor of a model in insertion order:
//! trainable parameters and non-trainable buffers (batch-norm running
//! statistics). One store is shared by all three slice branches, which is
//! what makes the network siamese: binding the same name twice in a pass
//! returns the same graph leaf, so branch gradients sum.

use indexmap::IndexMap;
use std::collections::HashMap;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::Elem;

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        let name = name.into();
        assert!(
            !self.entries.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        self.entries.insert(
            name,
            Param {
                value,
                grad: None,
                trainable,
            },
        );
    }

    pub fn get(&self, name: &str) -> &Param {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    /// Total scalar count across trainable parameters.
    pub fn num_trainable_scalars(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            if let Some(g) = &mut p.grad {
                g.data_mut().fill(0.0);
            }
        }
    }

    /// Adds `delta` into the stored gradient of `name`, allocating on first use.
    pub fn accumulate_grad(&mut self, name: &str, delta: Option<&Tensor>) {
        let p = self.get_mut(name);
        let shape = p.value.shape().to_vec();
        let g = p.grad.get_or_insert_with(|| Tensor::zeros(shape));
        if let Some(d) = delta {
            for (a, b) in g.data_mut().iter_mut().zip(d.data()) {
                *a += b;
            }
        }
    }
}

/// Mode of a network pass: train updates batch-norm running statistics and
/// normalizes with batch statistics; eval normalizes with running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward/backward pass: owns the graph, borrows the parameter store.
pub struct Forward<'p> {
    pub graph: Graph,
    params: &'p mut ParamStore,
    bound: HashMap<String, Var>,
    pub mode: Mode,
}

impl<'p> Forward<'p> {
    pub fn new(params: &'p mut ParamStore, mode: Mode) -> Self {
        Forward {
            graph: Graph::new(),
            params,
            bound: HashMap::new(),
            mode,
        }
    }

    /// Binds a trainable parameter as a graph leaf. Repeated binds of the
    /// same name return the same leaf (shared weights accumulate gradients).
    pub fn bind(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let p = self.params.get(name);
        assert!(p.trainable, "bind on non-trainable buffer `{name}`");
        let v = self.graph.leaf(p.value.clone(), true);
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Registers an input tensor (no gradient tracking).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    /// Batch norm over `prefix.{gamma,beta,running_mean,running_var}`;
    /// updates the running buffers in train mode.
    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Var {
        let gamma = self.bind(&format!("{prefix}.gamma"));
        let beta = self.bind(&format!("{prefix}.beta"));
        let rm_name = format!("{prefix}.running_mean");
        let rv_name = format!("{prefix}.running_var");
        let rm = self.params.get(&rm_name).value.data().to_vec();
        let rv = self.params.get(&rv_name).value.data().to_vec();
        let (out, updated) =
            self.graph
                .batch_norm(x, gamma, beta, &rm, &rv, self.mode == Mode::Train);
        if let Some((new_mean, new_var)) = updated {
            self.params
                .get_mut(&rm_name)
                .value
                .data_mut()
                .copy_from_slice(&new_mean);
            self.params
                .get_mut(&rv_name)
                .value
                .data_mut()
                .copy_from_slice(&new_var);
        }
        out
    }

    /// Runs the reverse sweep and writes the resulting gradients back into
    /// the parameter store (zeros for bound-but-disconnected parameters).
    pub fn backward(&mut self, loss: Var) {
        self.graph.backward(loss);
        for (name, var) in &self.bound {
            let g = self.graph.grad(*var).cloned();
            self.params.accumulate_grad(name, g.as_ref());
        }
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }
}

/// He-style parameter initialization helpers, all driven by the portable RNG.
pub mod init {
    use super::*;
    use crate::rng::SplitMix64;

    /// Conv weight `[cout, cin, k, k]`, normal with std sqrt(2 / fan_in).
    pub fn conv_weight(
        store: &mut ParamStore,
        rng: &mut SplitMix64,
        name: &str,
        cout: usize,
        cin: usize,
        k: usize,
    ) {
        let fan_in = (cin * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n = cout * cin * k * k;
        let data: Vec<Elem> = (0..n).map(|_| (rng.next_normal() * std) as Elem).collect();
        store.insert(name, Tensor::new(vec![cout, cin, k, k], data), true);
    }

    pub fn conv_bias(store: &mut ParamStore, name: &str, cout: usize) {
        store.insert(name, Tensor::zeros(vec![cout]), true);
    }

    /// gamma=1, beta=0, running_mean=0, running_var=1.
    pub fn batch_norm(store: &mut ParamStore, prefix: &str, c: usize) {
        store.insert(format!("{prefix}.gamma"), Tensor::filled(vec![c], 1.0), true);
        store.insert(format!("{prefix}.beta"), Tensor::zeros(vec![c]), true);
        store.insert(
            format!("{prefix}.running_mean"),
            Tensor::zeros(vec![c]),
            false,
        );
        store.insert(
            format!("{prefix}.running_var"),
            Tensor::filled(vec![c], 1.0),
            false,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_dedups_by_name() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::filled(vec![2], 3.0), true);
        let mut fw = Forward::new(&mut store, Mode::Eval);
        let a = fw.bind("w");
        let b = fw.bind("w");
        assert_eq!(a, b);
    }

    #[test]
    #[should_panic(expected = "registered twice")]
    fn duplicate_registration_panics() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(vec![1]), true);
        store.insert("w", Tensor::zeros(vec![1]), true);
    }

    #[test]
    fn disconnected_parameter_grad_stays_zero() {
        let mut store = ParamStore::new();
        store.insert("used", Tensor::filled(vec![3], 2.0), true);
        store.insert("unused", Tensor::filled(vec![3], 2.0), true);
        let mut fw = Forward::new(&mut store, Mode::Eval);
        let w = fw.bind("used");
        let _lonely = fw.bind("unused");
        let loss = fw.graph.sum_all(w);
        fw.backward(loss);
        drop(fw);
        let g = store.get("unused").grad.as_ref().unwrap();
        assert!(g.data().iter().all(|&x| x == 0.0));
        let g = store.get("used").grad.as_ref().unwrap();
        assert!(g.data().iter().all(|&x| x == 1.0));
    }
}
