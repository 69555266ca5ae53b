//! Named parameter storage, gradients and initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Scalar, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, ordered collection of named parameter tensors.
///
/// Names are dotted module paths such as `trunk.fpn.lateral0.weight` or
/// `motion.tower.bias`; the first path segment is the parameter group used
/// for freezing during alternating training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Convolution weight `[out, in/groups, k, k]` with He-uniform init and a zero bias.
    pub fn add_conv(
        &mut self,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> (ParamId, ParamId) {
        self.add_conv_scaled(prefix, cin, cout, kernel, groups, 1.0, rng)
    }

    /// [`ParamStore::add_conv`] with the init bound multiplied by `gain`.
    #[allow(clippy::too_many_arguments)]
    pub fn add_conv_scaled(
        &mut self,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        groups: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> (ParamId, ParamId) {
        let fan_in = (cin / groups) * kernel * kernel;
        let bound = gain * (6.0 / fan_in as f64).sqrt();
        let shape = [cout, cin / groups, kernel, kernel];
        let w = Tensor::from_fn(&shape, |_| T::lit(rng.gen_range(-bound..bound)));
        let w = self.add(format!("{prefix}.weight"), w);
        let b = self.add(format!("{prefix}.bias"), Tensor::zeros(&[cout]));
        (w, b)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Parameters whose name starts with `group.`.
    pub fn group(&self, group: &str) -> Vec<ParamId> {
        let prefix = format!("{group}.");
        self.ids()
            .filter(|id| self.names[id.0].starts_with(&prefix))
            .collect()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn count_group(&self, group: &str) -> usize {
        self.group(group).iter().map(|&id| self.get(id).len()).sum()
    }
}

/// Parameter gradients, aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn accumulate(&mut self, id: ParamId, shape: &[usize]) -> &mut Tensor<T> {
        self.grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(s);
        }
    }

    pub fn norm(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .map(Tensor::sum_sq)
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }
}
