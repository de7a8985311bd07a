use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Named learnable weights plus their accumulated gradients.
///
/// Initialization draws from a ChaCha stream seeded once at construction, so
/// two stores built with the same seed and the same sequence of `add_*`
/// calls are bit-identical.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.seed == other.seed
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, grad });
        Ok(id)
    }

    /// Glorot-uniform weights in `[-sqrt(6/(fan_in+fan_out)), +sqrt(...)]`.
    pub fn add_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.add(name, Matrix::from_vec(fan_in, fan_out, data)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, Matrix::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &Matrix) {
        self.params[id.0].grad.add_assign(grad);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.as_mut_slice().fill(0.0);
        }
    }

    /// Replaces values from a name -> matrix map; every name must exist with
    /// the same shape.
    pub fn load_values(&mut self, values: &BTreeMap<String, Matrix>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} parameters, model has {}",
                values.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let v = values
                .get(&p.name)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks `{}`", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_values",
                    left: p.value.shape(),
                    right: v.shape(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn values(&self) -> BTreeMap<String, Matrix> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }
}
