use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Real;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            values: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Named collection of parameter tensors, kept in insertion order.
///
/// Every mutable access stamps the store with a fresh generation number; activation
/// tapes remember the generation they were recorded against so a backward pass over
/// parameters that changed since the forward pass is rejected.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, Tensor<T>>,
    generation: u64,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> PartialEq for ParamStore<T> {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: IndexMap::new(),
            generation: next_generation(),
        }
    }

    /// Adds a tensor; returns its slot index.
    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<T>) -> Result<usize> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::shape(format!(
                "tensor {name}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::Schema(format!("duplicate tensor name {name}")));
        }
        self.generation = next_generation();
        let (idx, _) = self.tensors.insert_full(
            name,
            Tensor {
                shape: shape.to_vec(),
                values,
            },
        );
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count over all tensors.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.get_index_of(name)
    }

    pub fn name(&self, idx: usize) -> &str {
        self.tensors.get_index(idx).map(|(k, _)| k.as_str()).expect("slot in range")
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<T> {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        self.generation = next_generation();
        &mut self.tensors[idx]
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.generation = next_generation();
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.generation = next_generation();
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(&t.shape)))
                .collect(),
            generation: next_generation(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((ka, ta), (kb, tb))| ka == kb && ta.shape == tb.shape)
    }

    pub(crate) fn check_layout(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::shape(format!("{what}: parameter layouts differ")))
        }
    }

    pub fn fill_zero(&mut self) {
        for (_, t) in self.iter_mut() {
            t.values.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        self.check_layout(other, "add_scaled")?;
        self.generation = next_generation();
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += scale * *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for (_, t) in self.iter_mut() {
            t.values.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> T {
        self.tensors
            .values()
            .flat_map(|t| t.values.iter())
            .map(|v| *v * *v)
            .sum::<T>()
            .sqrt()
    }

    /// Flattened copy of every value in slot order.
    pub fn flat_values(&self) -> Vec<T> {
        self.tensors.values().flat_map(|t| t.values.iter().copied()).collect()
    }

    /// Locates flat element `k` as (slot, offset within slot).
    pub fn locate(&self, mut k: usize) -> Option<(usize, usize)> {
        for (i, t) in self.tensors.values().enumerate() {
            if k < t.len() {
                return Some((i, k));
            }
            k -= t.len();
        }
        None
    }

    /// Converts every value to another scalar type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        Tensor {
                            shape: t.shape.clone(),
                            values: t.values.iter().map(|v| U::of(v.f64())).collect(),
                        },
                    )
                })
                .collect(),
            generation: next_generation(),
        }
    }

    /// Copies the tensors whose names start with `prefix` into a new store, stripping it.
    pub fn extract_prefixed(&self, prefix: &str) -> Self {
        let mut out = ParamStore::new();
        for (k, t) in &self.tensors {
            if let Some(rest) = k.strip_prefix(prefix) {
                out.tensors.insert(rest.to_string(), t.clone());
            }
        }
        out
    }

    /// Appends every tensor of `other` under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &Self) -> Result<()> {
        for (k, t) in &other.tensors {
            self.insert(format!("{prefix}{k}"), &t.shape, t.values.clone())?;
        }
        Ok(())
    }
}
