use indexmap::IndexMap;
use ndarray::Array2;

use super::{cast_matrix, Real, Tape, Var};

/// Named learnable tensors plus non-learnable buffers (batch-norm running
/// statistics). Names are dotted paths such as `encoder.layer0.root.weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub params: IndexMap<String, Array2<T>>,
    pub buffers: IndexMap<String, Array2<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Array2<T>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<T>> {
        self.params.get(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Array2<T>> {
        self.buffers.get(name)
    }

    /// Total learnable scalar count.
    pub fn count(&self) -> usize {
        self.params.values().map(|p| p.len()).sum()
    }

    /// Learnable scalar count of every parameter whose name starts with
    /// `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Registers every parameter on the tape. Parameters for which
    /// `trainable` is false are recorded as constants.
    pub fn bind(
        &self,
        tape: &mut Tape<T>,
        trainable: impl Fn(&str) -> bool,
    ) -> IndexMap<String, Var> {
        self.params
            .iter()
            .map(|(k, v)| {
                let var = if trainable(k) {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), cast_matrix(v)))
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|(k, v)| (k.clone(), cast_matrix(v)))
                .collect(),
        }
    }
}
