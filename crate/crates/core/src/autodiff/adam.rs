use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are laid out in parameter-id
/// order, so two runs over the same store produce identical trajectories.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update using the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), AutodiffError> {
        if store.len() != self.first.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam",
                detail: format!("state tracks {} params, store has {}", self.first.len(), store.len()),
            });
        }
        for id in store.ids() {
            if store.grad(id).iter().any(|g| !g.is_finite()) {
                return Err(AutodiffError::NonFinite { op: "adam" });
            }
            if store.grad(id).len() != self.first[id.index()].len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    detail: format!("moment buffer for {} has wrong length", store.name(id)),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            store.update_with(id, |values, grad| {
                for i in 0..values.len() {
                    let g = grad[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    fn store_with(values: Vec<f64>) -> (ParamStore, crate::autodiff::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(values)).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let (mut store, id) = store_with(vec![0.3, -1.2, 4.0]);
        let before = store.value(id).clone();
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(id), &before);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let (mut store, id) = store_with(vec![1.0, 1.0, 1.0]);
        let grads = [0.5, -3.0, 1e-3];
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let c = g.constant(Tensor::vector(grads.to_vec()));
        let prod = g.mul(w, c).unwrap();
        let loss = g.sum(prod).unwrap();
        let gr = g.backward(loss).unwrap();
        store.accumulate(&gr, 1.0).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, &store);
        adam.step(&mut store).unwrap();
        for (i, &gv) in grads.iter().enumerate() {
            let expected = 1.0 - 0.01 * gv / (gv.abs() + 1e-8);
            assert!((store.value(id).data()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let (mut store, id) = store_with(vec![1.0]);
        store.update_with(id, |_, _| {});
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        // Poison the gradient buffer directly.
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let loss = g.sum(w).unwrap();
        let gr = g.backward(loss).unwrap();
        store.accumulate(&gr, f64::INFINITY).unwrap();
        assert!(matches!(adam.step(&mut store), Err(AutodiffError::NonFinite { .. })));
    }
}
