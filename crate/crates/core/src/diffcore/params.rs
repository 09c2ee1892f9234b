//! Named parameter collections and the checkpoint file format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{AstgiError, Result};

/// All learnable tensors of a model, keyed by dotted path
/// (`encoder.channel_embedding`, `propagation.layer0.msg.w1`, ...).
///
/// Iteration order is lexicographic by name, which fixes the order of every
/// optimizer and gradient-check sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    groups: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.groups.contains_key(&name) {
            return Err(AstgiError::Contract(format!("duplicate parameter name `{name}`")));
        }
        self.groups.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.groups
            .get(name)
            .ok_or_else(|| AstgiError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.groups.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.groups.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.groups.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.groups.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.groups.keys()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.groups.values().map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> BTreeMap<String, Tensor> {
        self.groups
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk checkpoint: parameters plus an echo of the configuration and seed
/// that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub config: serde_json::Value,
    pub params: BTreeMap<String, ParamRecord>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, config: serde_json::Value, seed: u64) -> Self {
        let params = params
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    ParamRecord {
                        shape: t.shape().to_vec(),
                        values: t.values().to_vec(),
                    },
                )
            })
            .collect();
        Self { seed, config, params }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let mut out = ModelParams::new();
        for (name, rec) in &self.params {
            out.insert(name.clone(), Tensor::new(rec.shape.clone(), rec.values.clone())?)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ModelParams::new();
        p.insert("a", Tensor::scalar(1.0)).unwrap();
        assert!(p.insert("a", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::vector(vec![0.1 + 0.2, -1e-300, 1.0 / 3.0, 6.02e23]))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::new(&p, serde_json::json!({"k": 3}), 2024)
            .save(&path)
            .unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.seed, 2024);
        let q = back.to_params().unwrap();
        for (a, b) in p.get("w").unwrap().values().iter().zip(q.get("w").unwrap().values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
