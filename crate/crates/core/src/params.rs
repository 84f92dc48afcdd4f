//! Named parameter storage and binding onto a tape.

use crate::autodiff::{Adjoints, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.values.iter().map(|v| Tensor::zeros(v.shape())).collect()
    }

    /// Reads coordinate `k` of the flattened parameter vector.
    pub fn flat_get(&self, k: usize) -> T {
        let (i, j) = self.locate(k);
        self.values[i].data()[j]
    }

    pub fn flat_set(&mut self, k: usize, x: T) {
        let (i, j) = self.locate(k);
        self.values[i].data_mut()[j] = x;
    }

    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, v) in self.values.iter().enumerate() {
            if k < v.len() {
                return (i, k);
            }
            k -= v.len();
        }
        panic!("flat parameter index out of range");
    }
}

/// Parameters of one store placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    trainable: bool,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Gradient per parameter; zero for parameters the loss never reached.
    pub fn gradients<T: Scalar>(&self, store: &ParamStore<T>, adj: &mut Adjoints<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(store.values())
            .map(|(&v, p)| {
                if self.trainable {
                    adj.take(v).unwrap_or_else(|| Tensor::zeros(p.shape()))
                } else {
                    Tensor::zeros(p.shape())
                }
            })
            .collect()
    }
}

impl<T: Scalar> Tape<T> {
    /// Places every parameter of `store` on the tape. Frozen bindings
    /// become constants and never receive adjoints.
    pub fn bind(&mut self, store: &ParamStore<T>, trainable: bool) -> Bound {
        let vars = store
            .values()
            .iter()
            .map(|v| if trainable { self.leaf(v.clone()) } else { self.constant(v.clone()) })
            .collect();
        Bound { vars, trainable }
    }
}

pub fn grad_norm<T: Scalar>(grads: &[Tensor<T>]) -> T {
    grads.iter().map(|g| g.data().iter().map(|&x| x * x).sum::<T>()).sum::<T>().sqrt()
}
