//! Named, shape-tagged parameter tensors with per-tensor freeze flags and
//! RMSProp mean-square accumulators.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
    rms: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Registers a parameter tensor with a zeroed optimizer accumulator.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        self.rms.insert(name.clone(), Tensor::zeros(tensor.shape()));
        self.params.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid_argument(format!("unknown parameter {name:?}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::invalid_argument(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        if !self.params.contains_key(name) {
            return Err(Error::invalid_argument(format!("unknown parameter {name:?}")));
        }
        if frozen {
            self.frozen.insert(name.to_string());
        } else {
            self.frozen.remove(name);
        }
        Ok(())
    }

    /// Freezes or thaws every parameter whose name starts with
    /// `group` followed by `.` (or equals `group`).
    pub fn set_group_frozen(&mut self, group: &str, frozen: bool) {
        let names: Vec<String> = self
            .params
            .keys()
            .filter(|n| *n == group || n.starts_with(&format!("{group}.")))
            .cloned()
            .collect();
        for n in names {
            let _ = self.set_frozen(&n, frozen);
        }
    }

    pub fn unfrozen_names(&self) -> Vec<String> {
        self.params.keys().filter(|n| !self.frozen.contains(*n)).cloned().collect()
    }

    pub fn rms_state(&self, name: &str) -> Option<&Tensor> {
        self.rms.get(name)
    }

    pub(super) fn rms_state_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.rms.get_mut(name)
    }

    pub(super) fn set_rms_state(&mut self, name: &str, state: Tensor) -> Result<()> {
        let param = self.tensor(name)?;
        if !param.same_shape(&state) {
            return Err(Error::Shape(format!(
                "rms state shape {:?} does not match parameter {name:?} {:?}",
                state.shape(),
                param.shape()
            )));
        }
        self.rms.insert(name.to_string(), state);
        Ok(())
    }

    /// Clears optimizer state, e.g. before fine-tuning with a fresh run.
    pub fn reset_rms(&mut self) {
        for (name, tensor) in &self.params {
            self.rms.insert(name.clone(), Tensor::zeros(tensor.shape()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_freezing_matches_prefixes() {
        let mut store = ParamStore::new();
        store.insert("lstm_fwd.w_ih", Tensor::zeros(&[2, 2]));
        store.insert("lstm_fwd.bias", Tensor::zeros(&[2]));
        store.insert("fc.weight", Tensor::zeros(&[1, 2]));
        store.set_group_frozen("lstm_fwd", true);
        assert!(store.is_frozen("lstm_fwd.w_ih"));
        assert!(store.is_frozen("lstm_fwd.bias"));
        assert!(!store.is_frozen("fc.weight"));
        assert_eq!(store.unfrozen_names(), vec!["fc.weight".to_string()]);
    }

    #[test]
    fn rms_state_tracks_parameters() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[3]));
        assert_eq!(store.rms_state("w").unwrap().shape(), &[3]);
    }
}
