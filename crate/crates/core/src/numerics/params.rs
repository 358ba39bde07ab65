use std::collections::BTreeMap;

use super::Matrix;
use crate::error::{Error, Result};

/// A trainable leaf: current value plus accumulated gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Parameter { value, grad }
    }
}

/// Named trainable parameters. Iteration is sorted by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::arg(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, Parameter::new(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::arg(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Union of several sets; fails on a repeated name.
    pub fn merged<'a>(sets: impl IntoIterator<Item = &'a ParameterSet>) -> Result<ParameterSet> {
        let mut out = ParameterSet::new();
        for set in sets {
            for (name, p) in set.iter() {
                out.insert(name, p.value.clone())?;
                out.params.get_mut(name).expect("just inserted").grad = p.grad.clone();
            }
        }
        Ok(out)
    }

    /// Copies values for every name present in both sets.
    pub fn copy_values_from(&mut self, other: &ParameterSet) {
        for (name, p) in self.params.iter_mut() {
            if let Some(src) = other.params.get(name) {
                p.value = src.value.clone();
            }
        }
    }
}
