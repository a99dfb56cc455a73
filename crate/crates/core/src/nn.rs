//! Small layer helpers shared by the duration models.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform,
    Zeros,
}

fn uniform(rng: &mut ChaCha20Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// 1-D convolution over `[length, channels]` sequences. Kernel size 1 makes it
/// a per-position linear layer.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        init: Init,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self, AutodiffError> {
        let shape = [kernel, in_channels, out_channels];
        let weight = match init {
            Init::Uniform => uniform(rng, &shape, 1.0 / ((in_channels * kernel) as f64).sqrt()),
            Init::Zeros => Tensor::zeros(&shape),
        };
        let weight = store.add(format!("{name}.weight"), weight)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?;
        Ok(Self {
            weight,
            bias,
            kernel,
            dilation,
            in_channels,
            out_channels,
        })
    }

    pub fn linear(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        init: Init,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self, AutodiffError> {
        Self::new(store, name, in_channels, out_channels, 1, 1, init, rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b, self.dilation)
    }
}

/// `[rows, channels]` mask that is true on padded rows, for `masked_fill`.
pub fn padded_row_mask(valid: &[bool], channels: usize) -> Vec<bool> {
    valid
        .iter()
        .flat_map(|&v| std::iter::repeat_n(!v, channels))
        .collect()
}

/// Zeroes the rows of `x` whose entry in `valid` is false.
pub fn zero_padded_rows(g: &mut Graph, x: Var, valid: &[bool]) -> Result<Var, AutodiffError> {
    if valid.iter().all(|&v| v) {
        return Ok(x);
    }
    let channels = g.value(x).cols();
    g.masked_fill(x, padded_row_mask(valid, channels), 0.0)
}

/// Repeats a `[1, C]` row `rows` times.
pub fn repeat_row(g: &mut Graph, row: Var, rows: usize) -> Result<Var, AutodiffError> {
    let ones = g.constant(Tensor::ones(&[rows, 1]));
    g.matmul(ones, row)
}

/// Uniformly initialised `[rows, cols]` parameter.
pub fn uniform_param(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    cols: usize,
    bound: f64,
    rng: &mut ChaCha20Rng,
) -> Result<ParamId, AutodiffError> {
    store.add(name, uniform(rng, &[rows, cols], bound))
}
