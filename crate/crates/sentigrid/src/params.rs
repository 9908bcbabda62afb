//! Named parameter storage with accumulated gradients.
//!
//! Parameters live here between steps; each forward pass binds them onto a
//! fresh [`Graph`] as leaves and harvests gradients back after `backward`.
//! A `BTreeMap` keeps iteration order deterministic, which matters for the
//! global-norm clip and for reproducible optimizer sweeps.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, NodeId, Real, Tensor};

#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<Real>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Register a parameter. Names are unique; re-registering is a bug.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        let grad = vec![0.0; value.len()];
        let prev = self.params.insert(name.to_string(), Param { value, grad });
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Param {
        self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.get(name).value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Name-sorted iteration (deterministic).
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Register every parameter as a gradient-receiving leaf on `g`.
    pub fn bind_all(&self, g: &mut Graph) -> Bindings {
        let mut map = BTreeMap::new();
        for (name, p) in &self.params {
            map.insert(name.clone(), g.leaf(p.value.clone()));
        }
        Bindings { map }
    }

    /// Add the graph's leaf gradients into the store, scaled by `scale`
    /// (used to average over a batch).
    pub fn accumulate_grads(&mut self, g: &Graph, binds: &Bindings, scale: Real) {
        for (name, &id) in &binds.map {
            if let Some(grad) = g.grad(id) {
                let p = self.params.get_mut(name).expect("bound param exists");
                for (acc, gv) in p.grad.iter_mut().zip(grad) {
                    *acc += gv * scale;
                }
            }
        }
    }

    /// L2 norm over all accumulated gradients, in name order.
    pub fn grad_global_norm(&self) -> Real {
        let mut sq = 0.0;
        for p in self.params.values() {
            for g in &p.grad {
                sq += g * g;
            }
        }
        sq.sqrt()
    }
}

/// Parameter name -> graph leaf for one forward pass.
#[derive(Debug, Clone)]
pub struct Bindings {
    map: BTreeMap<String, NodeId>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> NodeId {
        *self.map.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.map.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

// ── initializers ─────────────────────────────────────────────────────

/// Xavier/Glorot uniform for a `[rows x cols]` weight matrix.
pub fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as Real).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data)
}

pub fn uniform(shape: Vec<usize>, lo: Real, hi: Real, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data)
}

pub fn zeros_row(n: usize) -> Tensor {
    Tensor::row(vec![0.0; n])
}

pub fn ones_row(n: usize) -> Tensor {
    Tensor::row(vec![1.0; n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0));
        s.insert("w", Tensor::scalar(2.0));
    }

    #[test]
    fn grad_shapes_track_param_shapes() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::matrix(2, 3, vec![0.0; 6]));
        assert_eq!(s.get("w").grad.len(), s.get("w").value.len());
    }

    #[test]
    fn accumulate_scales_and_sums() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::row(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let binds = s.bind_all(&mut g);
        let w = binds.get("w");
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        s.accumulate_grads(&g, &binds, 0.5);
        assert_eq!(s.get("w").grad, vec![1.0, 2.0]); // 2x * 0.5
    }
}
