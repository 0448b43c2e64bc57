use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math when built without std
use num_traits::Float;
use rand::Rng;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Named parameters, iterated in lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<R> {
    params: BTreeMap<String, Tensor<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<R>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    /// Weight tensor drawn uniformly from `±sqrt(1/fan_in)`.
    pub fn init_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| R::from_f64(rng.random_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn init_ones(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::full(shape, R::one()))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<R>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Adds every parameter to `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<R>) -> Result<Bindings> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.params {
            vars.insert(name.clone(), g.leaf(t.clone())?);
        }
        Ok(Bindings { vars })
    }
}

/// Mapping from parameter names to their leaves on one graph.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("parameter {name} missing from the parameter set")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Per-parameter gradients in name order; parameters the root does not
    /// depend on get zeros.
    pub fn collect<R: Real>(&self, g: &Graph<R>, grads: &mut Gradients<R>) -> ParamStore<R> {
        let mut out = ParamStore::new();
        for (name, &v) in &self.vars {
            let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(g.shape(v)));
            out.params.insert(name.clone(), t);
        }
        out
    }
}

impl<R: Real> ParamStore<R> {
    /// Element-wise `self += other` over matching names.
    pub fn accumulate(&mut self, other: &ParamStore<R>) -> Result<()> {
        for (name, t) in other.iter() {
            let dst = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("parameter {name} missing")))?;
            if dst.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name}: {:?} vs {:?}",
                    dst.shape(),
                    t.shape()
                )));
            }
            for (d, &v) in dst.data_mut().iter_mut().zip(t.data()) {
                *d += v;
            }
        }
        Ok(())
    }

    pub fn scale_all(&mut self, c: R) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    /// Global L2 norm over every parameter.
    pub fn global_norm(&self) -> R {
        self.params
            .values()
            .map(|t| t.sum_squares())
            .sum::<R>()
            .sqrt()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.shape().to_vec()))
            .collect()
    }
}
