//! Named trainable parameters and their binding into a [`Graph`].

use std::collections::BTreeMap;
use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    /// Canonical dotted path, e.g. `gcn.0.weight`.
    pub name: String,
    pub value: Tensor<T>,
    /// Rows pinned at zero (embedding padding rows).
    pub frozen_rows: Vec<usize>,
}

/// Initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Constant(f64),
    Uniform(f64),
    Normal(f64),
}

impl Init {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = match self {
            Init::Zeros => vec![T::zero(); n],
            Init::Constant(c) => vec![T::lit(c); n],
            Init::Uniform(r) => (0..n).map(|_| T::lit(rng.gen_range(-r..=r))).collect(),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("std >= 0");
                (0..n).map(|_| T::lit(dist.sample(rng))).collect()
            }
        };
        Tensor::new(shape.to_vec(), data).expect("valid shape")
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.add_with_frozen_rows(name, value, Vec::new())
    }

    pub fn add_with_frozen_rows(&mut self, name: impl Into<String>, mut value: Tensor<T>, frozen_rows: Vec<usize>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        if !frozen_rows.is_empty() {
            let d = *value.shape().last().expect("rank >= 1");
            for &r in &frozen_rows {
                value.data_mut()[r * d..(r + 1) * d].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            frozen_rows,
        });
        id
    }

    pub fn init<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut R) -> ParamId {
        let t = init.sample(shape, rng);
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    /// Replaces a value, keeping its shape and frozen rows.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::set",
                lhs: entry.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    /// Inserts every parameter as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.entries.iter().map(|e| g.variable(e.value.clone())).collect())
    }

    /// Inserts every parameter as a constant (inference).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.entries.iter().map(|e| g.constant(e.value.clone())).collect())
    }

    /// Gradients of every parameter after `g.backward`, zero-filled where
    /// no gradient reached; frozen rows are zeroed.
    pub fn collect_grads(&self, g: &Graph<T>, bound: &Bound) -> Vec<Vec<T>> {
        self.entries
            .iter()
            .zip(&bound.0)
            .map(|(e, &v)| {
                let mut grad = g.grad(v).map_or_else(|| vec![T::zero(); e.value.numel()], <[T]>::to_vec);
                if !e.frozen_rows.is_empty() {
                    let d = *e.value.shape().last().expect("rank >= 1");
                    for &r in &e.frozen_rows {
                        grad[r * d..(r + 1) * d].iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                grad
            })
            .collect()
    }
}

/// Graph handles for every parameter, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps pre-inserted variables (in [`ParamStore`] order).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}
