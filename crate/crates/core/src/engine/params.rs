use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Ordered, named collection of tensors: model weights, adapter parameters,
/// gradients and optimizer moments all share this representation.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    /// Inserts a tensor; duplicate names are rejected.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Param(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<Self> {
        self.insert(name, tensor)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Param(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Param(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn filled_like(&self, value: T) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::filled(v.shape(), value)))
                .collect(),
        }
    }

    /// Same names in the same order with identical shapes.
    pub fn is_compatible(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn check_compatible(&self, other: &Self, context: &str) -> Result<()> {
        if self.is_compatible(other) {
            return Ok(());
        }
        for ((ka, va), (kb, vb)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(Error::Param(format!(
                    "{context}: parameter name mismatch `{ka}` vs `{kb}`"
                )));
            }
            if va.shape() != vb.shape() {
                return Err(Error::dims(format!("{context} `{ka}`"), va.shape(), vb.shape()));
            }
        }
        Err(Error::Param(format!(
            "{context}: parameter count mismatch {} vs {}",
            self.len(),
            other.len()
        )))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_compatible(other, "axpy")?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for t in self.entries.values_mut() {
            for v in t.data_mut() {
                *v *= alpha;
            }
        }
    }

    /// Flat view over every coordinate in entry order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, index: usize, value: T) {
        let mut offset = index;
        for t in self.entries.values_mut() {
            if offset < t.len() {
                t.data_mut()[offset] = value;
                return;
            }
            offset -= t.len();
        }
        panic!("flat index {index} out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    pub fn max_abs(&self) -> T {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Order-sensitive FNV-1a checksum over names, shapes and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in &self.entries {
            feed(name.as_bytes());
            for &d in t.shape() {
                feed(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                feed(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }
}

#[derive(Serialize, Deserialize)]
struct Record<T> {
    name: String,
    shape: Vec<usize>,
    values: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    entries: Vec<Record<T>>,
}

impl<T: Real + Serialize + for<'de> Deserialize<'de>> ParamSet<T> {
    /// Serializes to the JSON checkpoint format: ordered `(name, shape, values)` records.
    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| Record {
                    name: k.clone(),
                    shape: v.shape().to_vec(),
                    values: v.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint<T> = serde_json::from_str(text)?;
        let mut out = Self::new();
        for rec in ckpt.entries {
            out.insert(rec.name, Tensor::new(rec.shape, rec.values)?)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f64> {
        ParamSet::new()
            .with("w", Tensor::matrix(2, 2, vec![1.0, -2.5, 1e-300, 3.0]).unwrap())
            .unwrap()
            .with("b", Tensor::vector(vec![0.1, f64::MIN_POSITIVE]))
            .unwrap()
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = sample();
        assert!(p.insert("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn clone_is_deep() {
        let p = sample();
        let mut q = p.clone();
        q.get_mut("w").unwrap().data_mut()[0] = 99.0;
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }

    #[test]
    fn axpy_requires_matching_names() {
        let mut p = sample();
        let other = ParamSet::new().with("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(p.axpy(1.0, &other).is_err());
        let g = p.clone();
        p.axpy(-1.0, &g).unwrap();
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn json_checkpoint_is_bit_exact() {
        let p = sample();
        let q = ParamSet::<f64>::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p.names().collect::<Vec<_>>(), q.names().collect::<Vec<_>>());
        for (a, b) in p.flatten().iter().zip(q.flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
