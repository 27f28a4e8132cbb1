//! Named parameter tensors and non-trainable buffers.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (e.g. running statistics) are stored but never optimized.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> usize {
        let name = name.into();
        debug_assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &ParamEntry {
        &self.entries[id]
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.entries[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.entries[id].value
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.id(name)
            .map(|i| &self.entries[i].value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Overwrite values from another store with identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}
