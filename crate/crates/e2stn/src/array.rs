//! Plain host arrays and the named parameter store that backs every model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// A dense row-major f64 array with its shape. This is the at-rest form of
/// every trainable parameter; graph tensors are built from these per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Dimension {
                op: "array",
                shape,
                msg: "zero-sized dimension".into(),
            });
        }
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "array",
                shape,
                msg: format!("shape product {} != data length {}", numel, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "array" });
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Array {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Array {
            shape,
            data: vec![value; numel],
        }
    }

    /// Xavier-uniform initialization for a `rows x cols` projection.
    pub fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform(-limit, limit)).collect();
        Array {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Xavier-uniform for an arbitrary-rank kernel; fan-in/out from the
    /// leading two dimensions times the receptive field.
    pub fn xavier_kernel(shape: Vec<usize>, rng: &mut Rng) -> Self {
        let receptive: usize = shape[2..].iter().product();
        let fan_out = shape[0] * receptive;
        let fan_in = shape.get(1).copied().unwrap_or(1) * receptive;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.uniform(-limit, limit)).collect();
        Array { shape, data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    array: Array,
    frozen: bool,
}

/// Ordered collection of named parameter arrays. Iteration order is the
/// lexicographic order of names, which makes optimizer updates, gradient
/// checks and checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, array: Array) {
        self.insert_with_frozen(name, array, false)
    }

    /// Insert a parameter that never receives gradient updates.
    pub fn insert_frozen(&mut self, name: &str, array: Array) {
        self.insert_with_frozen(name, array, true)
    }

    pub fn insert_with_frozen(&mut self, name: &str, array: Array, frozen: bool) {
        assert!(
            !self.entries.contains_key(name),
            "duplicate parameter `{name}`"
        );
        self.entries.insert(name.to_string(), Entry { array, frozen });
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.entries
            .get(name)
            .map(|e| &e.array)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.array)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn is_frozen(&self, name: &str) -> Result<bool> {
        self.entries
            .get(name)
            .map(|e| e.frozen)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.frozen = frozen)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.frozen)
            .map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array, bool)> {
        self.entries
            .iter()
            .map(|(k, e)| (k.as_str(), &e.array, e.frozen))
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| !e.frozen)
            .map(|e| e.array.numel())
            .sum()
    }

    /// Concatenate all trainable parameters into one flat vector
    /// (name order). Used by the finite-difference gradient checker.
    pub fn flatten_trainable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_count());
        for e in self.entries.values().filter(|e| !e.frozen) {
            out.extend_from_slice(&e.array.data);
        }
        out
    }

    /// Inverse of [`flatten_trainable`](Self::flatten_trainable).
    pub fn set_trainable_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        let need = self.trainable_count();
        if flat.len() != need {
            return Err(Error::Dimension {
                op: "set_trainable_from_flat",
                shape: vec![flat.len()],
                msg: format!("expected {need} values"),
            });
        }
        let mut offset = 0;
        for e in self.entries.values_mut().filter(|e| !e.frozen) {
            let n = e.array.numel();
            e.array.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
