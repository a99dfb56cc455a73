use std::collections::BTreeMap;

use super::{AutodiffError, Gradients, Tensor};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
}

/// Named trainable arrays plus their accumulated gradients.
///
/// Every mutation of a value bumps `version`; gradients computed against an
/// older version are rejected by [`ParamStore::accumulate`].
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, ParamId>,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: "param" });
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            grad: vec![0.0; value.len()],
            value,
        });
        self.version += 1;
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), AutodiffError> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set_param",
                detail: format!("{}: {:?} vs {:?}", entry.name, entry.value.shape(), value.shape()),
            });
        }
        entry.value = value;
        self.version += 1;
        Ok(())
    }

    pub(crate) fn update_with(&mut self, id: ParamId, f: impl FnOnce(&mut [f64], &[f64])) {
        let entry = &mut self.entries[id.0];
        f(entry.value.data_mut(), &entry.grad);
        self.version += 1;
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale * dLoss/dParam` from a backward pass into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<(), AutodiffError> {
        if let Some(v) = grads.store_version() {
            if v != self.version {
                return Err(AutodiffError::StaleGradients {
                    built: v,
                    current: self.version,
                });
            }
        }
        for (id, g) in grads.param_grads() {
            let entry = self
                .entries
                .get_mut(id.0)
                .ok_or_else(|| AutodiffError::UnknownParam(format!("#{}", id.0)))?;
            for (dst, src) in entry.grad.iter_mut().zip(g) {
                *dst += scale * src;
            }
        }
        Ok(())
    }

    /// Euclidean norm over every accumulated gradient.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Copies of all values, for restoring a snapshot later.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<(), AutodiffError> {
        if snapshot.len() != self.entries.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "restore",
                detail: format!("snapshot has {} params, store has {}", snapshot.len(), self.entries.len()),
            });
        }
        for (i, v) in snapshot.iter().enumerate() {
            self.set(ParamId(i), v.clone())?;
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }
}
