//! JSON checkpoints: named parameters, optimizer moments and the run config.
//! Floats are written in shortest round-trip form, so loading is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Environment steps consumed when the checkpoint was taken.
    pub step: u64,
    pub config: serde_json::Value,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(step: u64, config: serde_json::Value, params: &ParamStore, optimizer: Option<&AdamState>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            step,
            config,
            params: params
                .iter()
                .map(|(_, name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for p in &self.params {
            store.insert(p.name.clone(), Tensor::new(p.shape.clone(), p.data.clone())?)?;
        }
        Ok(store)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("checkpoint", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::json("checkpoint", e))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {} (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        if let Some(opt) = &ck.optimizer {
            let congruent = opt.m.len() == ck.params.len()
                && opt.v.len() == ck.params.len()
                && ck
                    .params
                    .iter()
                    .zip(&opt.m)
                    .zip(&opt.v)
                    .all(|((p, m), v)| m.len() == p.data.len() && v.len() == p.data.len());
            if !congruent {
                return Err(Error::Format("optimizer moments do not match the parameters".into()));
            }
        }
        Ok(ck)
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        let awkward = vec![0.1 + 0.2, -1e-300, std::f64::consts::PI, 5e-324, 1.0 / 3.0, -0.0];
        store
            .insert("a.b.weight", Tensor::new(vec![2, 3], awkward).unwrap())
            .unwrap();
        store
            .insert("a.b.bias", Tensor::vector(vec![f64::MAX, f64::MIN_POSITIVE]))
            .unwrap();
        let mut adam = AdamState::new(&store);
        adam.step = 7;
        adam.m[0][2] = 1e-17;
        let ck = Checkpoint::new(42, serde_json::json!({"seed": 3}), &store, Some(&adam));
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let restored = back.to_store().unwrap();
        for (id, _, t) in store.iter() {
            let bits: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let got: Vec<u64> = restored.tensor(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, got);
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let store = ParamStore::new();
        let mut ck = Checkpoint::new(0, serde_json::Value::Null, &store, None);
        ck.format_version = 99;
        let err = Checkpoint::from_json(&serde_json::to_string(&ck).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
