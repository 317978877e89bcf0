use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named, grouped parameter tensors in stable registration order.
///
/// Registration order is the canonical order for serialization; lookups go
/// through a side index. Group labels drive freezing: training code builds
/// tapes with non-trainable groups as constants, so frozen parameters simply
/// never appear in a gradient map.
#[derive(Clone, Debug)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub group: String,
    pub tensor: Tensor,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, group: &str, tensor: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group: group.to_string(),
            tensor,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].tensor)
    }

    pub fn group_of(&self, name: &str) -> Option<&str> {
        self.index
            .get(name)
            .map(|&i| self.entries[i].group.as_str())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn groups(&self) -> Vec<String> {
        let mut gs: Vec<String> = Vec::new();
        for e in &self.entries {
            if !gs.contains(&e.group) {
                gs.push(e.group.clone());
            }
        }
        gs
    }

    /// SHA-256 over the little-endian bytes of every tensor in a group, in
    /// registration order. Used to assert that frozen groups never move.
    pub fn group_digest(&self, group: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        for e in &self.entries {
            if e.group == group {
                h.update(e.name.as_bytes());
                for v in e.tensor.data() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        h.finalize().into()
    }

    pub fn check_finite(&self) -> Result<()> {
        for e in &self.entries {
            e.tensor.check_finite(&e.name)?;
        }
        Ok(())
    }
}
