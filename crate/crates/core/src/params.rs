//! Named parameter tensors and their binding into a [`Graph`].
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use crate::error::{contract_err, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Ordered map from parameter name to value. Iteration order is by name, so
/// serialization and optimizer sweeps are deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| contract_err!("unknown parameter `{}`", name))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| contract_err!("unknown parameter `{}`", name))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn init_glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut RngState) {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let t = Tensor::from_fn(shape, |_| rng.uniform(-limit, limit));
        self.insert(name, t);
    }

    /// Weight `[out, in]` plus zero bias `[out]` for a channel map.
    pub fn init_linear(&mut self, prefix: &str, cin: usize, cout: usize, rng: &mut RngState) {
        self.init_glorot(&alloc::format!("{prefix}_w"), &[cout, cin], cin, cout, rng);
        self.insert(alloc::format!("{prefix}_b"), Tensor::zeros(&[cout]));
    }

    /// Weight `[out, in, k, k]` plus zero bias for a square convolution.
    pub fn init_conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, rng: &mut RngState) {
        self.init_glorot(&alloc::format!("{prefix}_w"), &[cout, cin, k, k], cin * k * k, cout * k * k, rng);
        self.insert(alloc::format!("{prefix}_b"), Tensor::zeros(&[cout]));
    }

    /// Places every parameter on `g`. Parameters for which `trainable` is
    /// false enter as constants and receive no gradient.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Result<Bound> {
        self.bind_with(g, trainable, &BTreeMap::new())
    }

    /// Like [`bind`](Self::bind), but uses the given nodes for the named
    /// parameters instead of copying the stored values.
    pub fn bind_with(
        &self,
        g: &mut Graph,
        trainable: impl Fn(&str) -> bool,
        overrides: &BTreeMap<String, NodeId>,
    ) -> Result<Bound> {
        let mut ids = BTreeMap::new();
        for (name, t) in &self.tensors {
            let id = match overrides.get(name) {
                Some(&id) => id,
                None => g.leaf(t.clone(), trainable(name))?,
            };
            ids.insert(name.clone(), id);
        }
        Ok(Bound { ids })
    }
}

/// Parameter nodes on one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| contract_err!("parameter `{}` is not bound", name.to_string()))
    }

    /// `(weight, bias)` of the channel map or convolution named `prefix`.
    pub fn pair(&self, prefix: &str) -> Result<(NodeId, NodeId)> {
        Ok((
            self.get(&alloc::format!("{prefix}_w"))?,
            self.get(&alloc::format!("{prefix}_b"))?,
        ))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
