//! Named trainable tensors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    /// Dot-separated path, unique within a store.
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Parameter {
                op: "param_store",
                detail: format!("duplicate parameter name {name}"),
            });
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            tensor,
            trainable: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Sets `trainable` on every parameter matching `pred`; returns how many
    /// matched.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool, flag: bool) -> usize {
        let mut hits = 0;
        for p in self.params.iter_mut().filter(|p| pred(&p.name)) {
            p.trainable = flag;
            hits += 1;
        }
        hits
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Copies every parameter onto `g` as a leaf. Frozen parameters do not
    /// track gradients.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| g.leaf(p.tensor.clone(), p.trainable))
                .collect(),
        )
    }
}

/// Graph handles of a store's parameters, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Adds this graph's parameter gradients into `acc` (one slot per
    /// parameter, `None` until first touched).
    pub fn accumulate<T: Real>(&self, grads: &Gradients<T>, acc: &mut [Option<Vec<T>>]) {
        for (slot, &v) in acc.iter_mut().zip(&self.0) {
            if let Some(g) = grads.slice(v) {
                match slot {
                    Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
                    None => *slot = Some(g.to_vec()),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.w", Tensor::zeros(&[2])).unwrap();
        assert!(s.add("a.w", Tensor::zeros(&[2])).is_err());
        assert_eq!(s.set_trainable_where(|n| n.starts_with("a."), false), 1);
        assert!(!s.by_name("a.w").unwrap().trainable);
    }
}
