//! Named parameter storage and per-pass binding onto a tape.

use std::collections::HashMap;

use xlm_tensor::{Float, Gradients, Graph, RngStream, Tensor, Var};

use crate::error::{config, contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Ordered, uniquely named parameters of a model.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return config(format!("duplicate parameter name {name}"));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, trainable });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn fixed_count(&self) -> usize {
        self.params.iter().filter(|p| !p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return contract(format!("{}: shape {:?} does not match {:?}", p.name, value.shape(), p.value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), trainable: p.trainable })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// True when every parameter is bit-identical to `other`'s.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.name == b.name && a.value.bit_eq(&b.value))
    }
}

/// Allocates parameters under a dotted name prefix, drawing initial values
/// from one stream.
pub struct Builder<'a, T: Float> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut RngStream,
    prefix: String,
}

impl<'a, T: Float> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut RngStream) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    pub fn rng(&mut self) -> &mut RngStream {
        self.rng
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.add(full, value, trainable)
    }

    /// Trainable tensor drawn uniformly from `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::c(rng.uniform_range(-bound, bound)));
        self.add(name, t, true)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, T::c(value)), true)
    }
}

/// Tape leaves for every parameter of a store, indexed by [`ParamId`].
pub struct Bound(Vec<Var>);

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// A forward pass: a fresh tape with every parameter bound as a leaf.
pub struct Session<T: Float> {
    pub g: Graph<T>,
    pub p: Bound,
}

impl<T: Float> Session<T> {
    /// `track` marks trainable parameters as requiring gradients.
    pub fn new(store: &ParamStore<T>, track: bool) -> Self {
        let mut g = Graph::new();
        let vars = store.params.iter().map(|p| g.leaf(p.value.clone(), track && p.trainable)).collect();
        Self { g, p: Bound(vars) }
    }

    /// Mutable tape plus parameter lookup, borrowed together.
    pub fn split(&mut self) -> (&mut Graph<T>, &Bound) {
        (&mut self.g, &self.p)
    }

    /// Back-propagates from `loss` and returns one gradient per parameter
    /// (`None` for fixed parameters).
    pub fn param_grads(&self, store: &ParamStore<T>, loss: Var) -> Result<(Gradients<T>, Vec<Option<Tensor<T>>>)> {
        let grads = self.g.backward(loss)?;
        let per = store.params.iter().zip(&self.p.0).map(|(p, &v)| p.trainable.then(|| grads.wrt(v))).collect();
        Ok((grads, per))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[1]), true).unwrap();
        assert!(s.add("a", Tensor::zeros(&[1]), true).is_err());
    }

    #[test]
    fn counts_split_by_trainability() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(&[4, 2]), false).unwrap();
        s.add("g", Tensor::zeros(&[1]), true).unwrap();
        assert_eq!(s.trainable_count(), 1);
        assert_eq!(s.fixed_count(), 8);
    }

    #[test]
    fn scoped_names() {
        let mut s = ParamStore::<f64>::new();
        let mut rng = RngStream::new(0);
        let mut b = Builder::new(&mut s, &mut rng);
        let mut inner = b.scope("stage1");
        inner.scope("dw").constant("w", &[2], 0.0).unwrap();
        assert!(s.find("stage1.dw.w").is_some());
    }
}
