use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Dtype tag carried alongside a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    /// 32-bit floats, used for training.
    F32,
    /// 64-bit floats, used for gradient verification.
    F64,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<F: Scalar> {
    pub tensor: Tensor<F>,
    pub frozen: bool,
}

/// Named parameter tensors with per-tensor freeze flags.
///
/// Names are unique (enforced on insert) and iteration is in name order, so
/// every consumer sees a deterministic traversal.
#[derive(Debug, Clone)]
pub struct ParamSet<F: Scalar> {
    entries: BTreeMap<String, ParamEntry<F>>,
    dtype: Dtype,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
            dtype: if std::mem::size_of::<F>() == 4 {
                Dtype::F32
            } else {
                Dtype::F64
            },
        }
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<F>) {
        assert!(
            !self.entries.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                tensor,
                frozen: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .tensor
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<F> {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .tensor
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<F>> {
        self.entries.remove(name).map(|e| e.tensor)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .frozen
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .frozen = frozen;
    }

    /// Freeze every tensor whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (name, entry) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                entry.frozen = true;
            }
        }
    }

    /// True when every tensor under `prefix` is frozen and at least one exists.
    pub fn prefix_is_frozen(&self, prefix: &str) -> bool {
        let mut seen = false;
        for (name, entry) in self.entries.iter() {
            if name.starts_with(prefix) {
                seen = true;
                if !entry.frozen {
                    return false;
                }
            }
        }
        seen
    }

    pub fn require_frozen(&self, prefix: &str, component: &str) -> Result<()> {
        if self.prefix_is_frozen(prefix) {
            Ok(())
        } else {
            Err(Error::NotFrozen(component.to_string()))
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<F>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<F>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Copy all entries from `other`, prefixing their names.
    pub fn adopt(&mut self, other: &ParamSet<F>, prefix: &str) {
        for (name, entry) in other.iter() {
            self.insert(&format!("{prefix}{name}"), entry.tensor.clone());
            self.set_frozen(&format!("{prefix}{name}"), entry.frozen);
        }
    }

    /// SHA-256 over names, shapes, freeze flags, and raw little-endian bytes
    /// of every tensor, in name order. Bit-identical sets hash identically.
    pub fn content_hash(&self) -> [u8; 32] {
        self.prefix_hash("")
    }

    /// Content hash restricted to names starting with `prefix`.
    pub fn prefix_hash(&self, prefix: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, entry) in self.entries.iter() {
            if !name.starts_with(prefix) {
                continue;
            }
            hasher.update(name.as_bytes());
            hasher.update([0u8, entry.frozen as u8]);
            for &d in entry.tensor.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in entry.tensor.data() {
                hasher.update(v.to_f64().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

impl ParamSet<f32> {
    pub fn to_f64(&self) -> ParamSet<f64> {
        let mut out = ParamSet::new();
        for (name, entry) in self.iter() {
            out.insert(name, entry.tensor.to_f64());
            out.set_frozen(name, entry.frozen);
        }
        out
    }
}

/// Hex rendering of a content hash for reports and logs.
pub fn hash_hex(hash: &[u8; 32]) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeze_by_prefix() {
        let mut p: ParamSet<f32> = ParamSet::new();
        p.insert("enc.w", Tensor::zeros(&[2, 2]));
        p.insert("enc.b", Tensor::zeros(&[2]));
        p.insert("head.w", Tensor::zeros(&[2, 2]));
        p.freeze_prefix("enc.");
        assert!(p.prefix_is_frozen("enc."));
        assert!(!p.is_frozen("head.w"));
        assert!(p.require_frozen("head.", "head").is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let mut p: ParamSet<f32> = ParamSet::new();
        p.insert("w", Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let h1 = p.content_hash();
        p.get_mut("w").data_mut()[0] = 1.5;
        let h2 = p.content_hash();
        assert_ne!(h1, h2);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut p: ParamSet<f32> = ParamSet::new();
        p.insert("w", Tensor::zeros(&[1]));
        p.insert("w", Tensor::zeros(&[1]));
    }
}
