use std::collections::HashMap;

use super::array::{Array, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable arrays, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    arrays: Vec<Array<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            arrays: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let id = ParamId(self.arrays.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.arrays.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.arrays[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.arrays.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array<T>)> {
        self.names
            .iter()
            .zip(&self.arrays)
            .enumerate()
            .map(|(i, (n, a))| (ParamId(i), n.as_str(), a))
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            arrays: self.arrays.iter().map(Array::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(Array::is_finite)
    }
}

/// Gradient arrays aligned one-to-one with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    arrays: Vec<Array<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Gradients {
            arrays: params
                .arrays
                .iter()
                .map(|a| Array::zeros(a.shape()))
                .collect(),
        }
    }

    pub(crate) fn from_arrays(arrays: Vec<Array<T>>) -> Self {
        Gradients { arrays }
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.arrays[id.0]
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array<T>)> {
        self.arrays.iter().enumerate().map(|(i, a)| (ParamId(i), a))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients<T>, scale: T) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for a in &mut self.arrays {
            for x in a.data_mut() {
                *x = *x * factor;
            }
        }
    }

    /// Joint L2 norm over every parameter, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        self.arrays
            .iter()
            .flat_map(|a| a.data().iter())
            .map(|x| {
                let v = x.to_f64_lossy();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// All values flattened in parameter order.
    pub fn flatten(&self) -> Vec<T> {
        self.arrays
            .iter()
            .flat_map(|a| a.data().iter().copied())
            .collect()
    }
}
