//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation applied to its nodes; [`Graph::backward`]
//! replays the record in exact reverse order, so gradients are bit-identical
//! across runs. Trainable arrays live in a [`ParamStore`] and are bound into a
//! graph per forward pass.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport, FD_STEP, REL_ERR_FLOOR};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("log: non-positive input {value}")]
    NonPositiveLog { value: f64 },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range for table of {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("parameters changed since the forward pass (built at version {built}, store now at {current})")]
    StaleGradients { built: u64, current: u64 },
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_is_elementwise() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn identity_matmul() {
        let a = t(&[3, 3], &[1.0, -2.0, 0.5, 3.0, 4.0, 5.0, -6.0, 7.0, 8.5]);
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(3));
        let av = g.constant(a.clone());
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn dilated_conv_uses_centred_padding() {
        // K=2, dilation=2 -> taps at t-1 and t+1.
        let mut g = Graph::new();
        let x = g.constant(t(&[4, 1], &[1.0, 0.0, 0.0, 0.0]));
        let w = g.constant(t(&[2, 1, 1], &[1.0, 1.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv1d(x, w, b, 2).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 0.0, 0.0]);

        // K=3, dilation=2 -> taps at t-2, t, t+2.
        let w3 = g.constant(t(&[3, 1, 1], &[1.0, 10.0, 100.0]));
        let y3 = g.conv1d(x, w3, b, 2).unwrap();
        assert_eq!(g.value(y3).data(), &[10.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(0.0));
        let s = g.sigmoid(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[0.25]);
    }

    #[test]
    fn errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let err = g.add(a, b).unwrap_err();
        assert!(err.to_string().starts_with("add:"), "{err}");
        let z = g.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(g.log(z), Err(AutodiffError::NonPositiveLog { .. })));
        let big = g.constant(Tensor::vector(vec![1000.0]));
        let err = g.exp(big).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { op: "exp" }));
        let m = g.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(m), Err(AutodiffError::NotScalar { .. })));
    }

    #[test]
    fn stale_gradients_are_rejected() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let loss = g.sum(w).unwrap();
        let grads = g.backward(loss).unwrap();
        store.set(id, Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert!(matches!(store.accumulate(&grads, 1.0), Err(AutodiffError::StaleGradients { .. })));
    }

    #[test]
    fn backward_is_bit_identical_across_runs() {
        let run = || {
            let mut g = Graph::new();
            let x = g.input(t(&[3, 2], &[0.1, -0.7, 1.3, 0.2, -1.1, 0.9]));
            let w = g.input(t(&[3, 2, 2], &[0.3, -0.2, 0.5, 0.1, -0.4, 0.8, 0.6, -0.9, 0.2, 0.7, -0.3, 0.05]));
            let b = g.input(t(&[2], &[0.01, -0.02]));
            let y = g.conv1d(x, w, b, 1).unwrap();
            let y = g.tanh(y).unwrap();
            let l = g.sum(y).unwrap();
            let gr = g.backward(l).unwrap();
            [x, w, b]
                .iter()
                .flat_map(|v| gr.wrt(*v).unwrap().iter().map(|f| f.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn linear_layer_gradient_is_exact() {
        let x = t(&[2, 3], &[0.5, -1.0, 2.0, 1.5, 0.25, -0.75]);
        let w = t(&[3, 2], &[0.2, -0.3, 0.4, 0.1, -0.5, 0.6]);
        let report = grad_check(
            |g, v| {
                let y = g.matmul(v[0], v[1])?;
                g.sum(y)
            },
            &[x, w],
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_err < 1e-9, "{}", report.max_rel_err);
    }
}
