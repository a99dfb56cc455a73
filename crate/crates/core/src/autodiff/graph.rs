use std::collections::HashMap;

use super::tensor::numel;
use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// The closed set of differentiable operations.
///
/// Binary elementwise ops require identical shapes; the only broadcast is
/// [`OpKind::Broadcast`] of a one-element tensor. Sequences are laid out
/// as `[length, channels]`.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    /// Inputs `x [L, Cin]`, `w [K, Cin, Cout]`, `b [Cout]`. Zero "same"
    /// padding: tap `k` reads `x[t + k*dilation - floor((K-1)*dilation/2)]`.
    Conv1d { dilation: usize },
    /// Row lookup into a `[V, E]` table.
    Embedding { indices: Vec<usize> },
    Sum,
    Mean,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    /// Positions where `mask` is true are replaced by `value`.
    MaskedFill { mask: Vec<bool>, value: f64 },
    /// One-element tensor repeated to `shape`.
    Broadcast { shape: Vec<usize> },
    Scale(f64),
    Reshape { shape: Vec<usize> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softplus => "softplus",
            OpKind::MatMul => "matmul",
            OpKind::Conv1d { .. } => "conv1d",
            OpKind::Embedding { .. } => "embedding",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::MaskedFill { .. } => "masked_fill",
            OpKind::Broadcast { .. } => "broadcast",
            OpKind::Scale(_) => "scale",
            OpKind::Reshape { .. } => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<OpKind>,
    inputs: Vec<Var>,
    needs_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in execution order, so
/// the node list is always a topological order and backward simply walks it
/// in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_vars: HashMap<ParamId, Var>,
    store_version: Option<u64>,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
    store_version: Option<u64>,
}

impl Gradients {
    /// dLoss/dVar for a node that required grad and was reached by backward.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|(id, v)| self.grads[v.0].as_deref().map(|g| (*id, g)))
    }

    pub fn store_version(&self) -> Option<u64> {
        self.store_version
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn conv_pad(k: usize, dilation: usize) -> isize {
    ((k - 1) * dilation / 2) as isize
}

fn forward(kind: &OpKind, ins: &[&Tensor]) -> Result<Tensor, AutodiffError> {
    let name = kind.name();
    let arity = match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul => 2,
        OpKind::Conv1d { .. } => 3,
        OpKind::Concat { .. } => ins.len().max(1),
        _ => 1,
    };
    if ins.len() != arity {
        return Err(shape_err(name, format!("expected {arity} inputs, got {}", ins.len())));
    }
    let unary = |f: &dyn Fn(f64) -> f64| ins[0].map(f);
    let out = match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let (a, b) = (ins[0], ins[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| match kind {
                    OpKind::Add => x + y,
                    OpKind::Sub => x - y,
                    _ => x * y,
                })
                .collect();
            Tensor::new(a.shape().to_vec(), data)?
        }
        OpKind::Exp => unary(&f64::exp),
        OpKind::Log => {
            if let Some(bad) = ins[0].data().iter().find(|&&v| v <= 0.0) {
                return Err(AutodiffError::NonPositiveLog { value: *bad });
            }
            unary(&f64::ln)
        }
        OpKind::Tanh => unary(&f64::tanh),
        OpKind::Sigmoid => unary(&stable_sigmoid),
        OpKind::Softplus => unary(&stable_softplus),
        OpKind::MatMul => {
            let (a, b) = (ins[0], ins[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(name, format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            let (ad, bd) = (a.data(), b.data());
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::new(vec![m, n], out)?
        }
        OpKind::Conv1d { dilation } => {
            let (x, w, b) = (ins[0], ins[1], ins[2]);
            if *dilation == 0
                || x.rank() != 2
                || w.rank() != 3
                || b.rank() != 1
                || w.shape()[1] != x.shape()[1]
                || w.shape()[2] != b.shape()[0]
                || w.shape()[0] == 0
            {
                return Err(shape_err(
                    name,
                    format!("x {:?}, w {:?}, b {:?}, dilation {dilation}", x.shape(), w.shape(), b.shape()),
                ));
            }
            let (len, cin) = (x.shape()[0], x.shape()[1]);
            let (k, cout) = (w.shape()[0], w.shape()[2]);
            let pad = conv_pad(k, *dilation);
            let mut out = Vec::with_capacity(len * cout);
            for _ in 0..len {
                out.extend_from_slice(b.data());
            }
            let (xd, wd) = (x.data(), w.data());
            for tap in 0..k {
                let off = (tap * dilation) as isize - pad;
                let wk = &wd[tap * cin * cout..(tap + 1) * cin * cout];
                for t in 0..len {
                    let s = t as isize + off;
                    if s < 0 || s >= len as isize {
                        continue;
                    }
                    let s = s as usize;
                    let xr = &xd[s * cin..(s + 1) * cin];
                    let yr = &mut out[t * cout..(t + 1) * cout];
                    for (i, &xi) in xr.iter().enumerate() {
                        if xi == 0.0 {
                            continue;
                        }
                        for (y, &wv) in yr.iter_mut().zip(&wk[i * cout..(i + 1) * cout]) {
                            *y += xi * wv;
                        }
                    }
                }
            }
            Tensor::new(vec![len, cout], out)?
        }
        OpKind::Embedding { indices } => {
            let table = ins[0];
            if table.rank() != 2 {
                return Err(shape_err(name, format!("table {:?}", table.shape())));
            }
            let (v, e) = (table.shape()[0], table.shape()[1]);
            let mut out = Vec::with_capacity(indices.len() * e);
            for &ix in indices {
                if ix >= v {
                    return Err(AutodiffError::IndexOutOfRange { index: ix, len: v });
                }
                out.extend_from_slice(table.row(ix));
            }
            Tensor::new(vec![indices.len(), e], out)?
        }
        OpKind::Sum => Tensor::scalar(ins[0].data().iter().sum()),
        OpKind::Mean => {
            if ins[0].is_empty() {
                return Err(shape_err(name, "empty input".into()));
            }
            Tensor::scalar(ins[0].data().iter().sum::<f64>() / ins[0].len() as f64)
        }
        OpKind::Concat { axis } => {
            let first = ins[0];
            let rank = first.rank();
            if *axis >= rank {
                return Err(shape_err(name, format!("axis {axis} for rank {rank}")));
            }
            for t in ins {
                let same = t.rank() == rank
                    && t.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == *axis || a == b);
                if !same {
                    return Err(shape_err(name, format!("{:?} vs {:?} on axis {axis}", t.shape(), first.shape())));
                }
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = ins.iter().map(|t| t.shape()[*axis]).sum();
            let (outer, _, inner) = split_axis(&shape, *axis);
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for t in ins {
                    let block = t.shape()[*axis] * inner;
                    out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                }
            }
            Tensor::new(shape, out)?
        }
        OpKind::Slice { axis, start, end } => {
            let x = ins[0];
            if *axis >= x.rank() || start >= end || *end > x.shape()[*axis] {
                return Err(shape_err(name, format!("{start}..{end} on axis {axis} of {:?}", x.shape())));
            }
            let (outer, dim, inner) = split_axis(x.shape(), *axis);
            let mut shape = x.shape().to_vec();
            shape[*axis] = end - start;
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                let base = o * dim * inner;
                out.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
            }
            Tensor::new(shape, out)?
        }
        OpKind::MaskedFill { mask, value } => {
            let x = ins[0];
            if mask.len() != x.len() {
                return Err(shape_err(name, format!("mask {} vs {}", mask.len(), x.len())));
            }
            let data = x.data().iter().zip(mask).map(|(&v, &m)| if m { *value } else { v }).collect();
            Tensor::new(x.shape().to_vec(), data)?
        }
        OpKind::Broadcast { shape } => {
            let v = ins[0]
                .item()
                .ok_or_else(|| shape_err(name, format!("source {:?} is not one element", ins[0].shape())))?;
            Tensor::full(shape, v)
        }
        OpKind::Scale(c) => unary(&|v| c * v),
        OpKind::Reshape { shape } => ins[0].clone().reshape(shape)?,
    };
    if !out.is_finite() {
        return Err(AutodiffError::NonFinite { op: name });
    }
    Ok(out)
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Option<OpKind>, inputs: Vec<Var>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), false)
    }

    /// A leaf whose gradient is reported by backward.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), true)
    }

    /// Binds a stored parameter as a gradient-tracked leaf (once per graph).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.store_version = Some(store.version());
        let v = self.input(store.value(id).clone());
        self.param_vars.insert(id, v);
        self.params.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Evaluates `kind` on `inputs` and records the node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let value = {
            let ins: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            forward(&kind, &ins)?
        };
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, Some(kind), inputs.to_vec(), needs_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Softplus, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Conv1d { dilation }, &[x, w, b])
    }

    pub fn embedding(&mut self, table: Var, indices: Vec<usize>) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Embedding { indices }, &[table])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Mean, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Slice { axis, start, end }, &[a])
    }

    pub fn masked_fill(&mut self, a: Var, mask: Vec<bool>, value: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::MaskedFill { mask, value }, &[a])
    }

    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Broadcast { shape: shape.to_vec() }, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Reshape { shape: shape.to_vec() }, &[a])
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| shape_err("backward", format!("unknown node {}", loss.0)))?;
        if loss_node.value.len() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(op, node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let poisoned = grads
            .iter()
            .flatten()
            .any(|g| g.iter().any(|x| !x.is_finite()));
        if poisoned {
            return Err(AutodiffError::NonFinite { op: "backward" });
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            store_version: self.store_version,
        })
    }

    fn backward_node(&self, op: &OpKind, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let ins = &node.inputs;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let y = node.value.data();
        match op {
            OpKind::Add | OpKind::Sub => {
                let sign = if matches!(op, OpKind::Sub) { -1.0 } else { 1.0 };
                if wants(ins[0]) {
                    accumulate(grads, ins[0], g.len(), |ga| ga.iter_mut().zip(g).for_each(|(a, &d)| *a += d));
                }
                if wants(ins[1]) {
                    accumulate(grads, ins[1], g.len(), |gb| {
                        gb.iter_mut().zip(g).for_each(|(b, &d)| *b += sign * d)
                    });
                }
            }
            OpKind::Mul => {
                let (a, b) = (val(ins[0]).data(), val(ins[1]).data());
                if wants(ins[0]) {
                    accumulate(grads, ins[0], g.len(), |ga| {
                        for ((t, &d), &bv) in ga.iter_mut().zip(g).zip(b) {
                            *t += d * bv;
                        }
                    });
                }
                if wants(ins[1]) {
                    accumulate(grads, ins[1], g.len(), |gb| {
                        for ((t, &d), &av) in gb.iter_mut().zip(g).zip(a) {
                            *t += d * av;
                        }
                    });
                }
            }
            OpKind::Exp | OpKind::Log | OpKind::Tanh | OpKind::Sigmoid | OpKind::Softplus | OpKind::Scale(_) => {
                if !wants(ins[0]) {
                    return;
                }
                let x = val(ins[0]).data();
                accumulate(grads, ins[0], g.len(), |ga| {
                    for i in 0..g.len() {
                        let local = match op {
                            OpKind::Exp => y[i],
                            OpKind::Log => 1.0 / x[i],
                            OpKind::Tanh => 1.0 - y[i] * y[i],
                            OpKind::Sigmoid => y[i] * (1.0 - y[i]),
                            OpKind::Softplus => stable_sigmoid(x[i]),
                            OpKind::Scale(c) => *c,
                            _ => unreachable!(),
                        };
                        ga[i] += g[i] * local;
                    }
                });
            }
            OpKind::MatMul => {
                let (a, b) = (val(ins[0]), val(ins[1]));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let (ad, bd) = (a.data(), b.data());
                if wants(ins[0]) {
                    accumulate(grads, ins[0], m * k, |ga| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bd[p * n..(p + 1) * n];
                                ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if wants(ins[1]) {
                    accumulate(grads, ins[1], k * n, |gb| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let av = ad[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for (t, &d) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *t += av * d;
                                }
                            }
                        }
                    });
                }
            }
            OpKind::Conv1d { dilation } => {
                let (x, w) = (val(ins[0]), val(ins[1]));
                let (len, cin) = (x.shape()[0], x.shape()[1]);
                let (k, cout) = (w.shape()[0], w.shape()[2]);
                let pad = conv_pad(k, *dilation);
                let (xd, wd) = (x.data(), w.data());
                let taps = |tap: usize| {
                    let off = (tap * dilation) as isize - pad;
                    (0..len).filter_map(move |t| {
                        let s = t as isize + off;
                        (s >= 0 && s < len as isize).then_some((t, s as usize))
                    })
                };
                if wants(ins[0]) {
                    accumulate(grads, ins[0], len * cin, |gx| {
                        for tap in 0..k {
                            let wk = &wd[tap * cin * cout..(tap + 1) * cin * cout];
                            for (t, s) in taps(tap) {
                                let grow = &g[t * cout..(t + 1) * cout];
                                for i in 0..cin {
                                    let wrow = &wk[i * cout..(i + 1) * cout];
                                    gx[s * cin + i] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                        }
                    });
                }
                if wants(ins[1]) {
                    accumulate(grads, ins[1], k * cin * cout, |gw| {
                        for tap in 0..k {
                            let gk = &mut gw[tap * cin * cout..(tap + 1) * cin * cout];
                            for (t, s) in taps(tap) {
                                let grow = &g[t * cout..(t + 1) * cout];
                                for i in 0..cin {
                                    let xi = xd[s * cin + i];
                                    if xi == 0.0 {
                                        continue;
                                    }
                                    for (dst, &d) in gk[i * cout..(i + 1) * cout].iter_mut().zip(grow) {
                                        *dst += xi * d;
                                    }
                                }
                            }
                        }
                    });
                }
                if wants(ins[2]) {
                    accumulate(grads, ins[2], cout, |gb| {
                        for t in 0..len {
                            for (dst, &d) in gb.iter_mut().zip(&g[t * cout..(t + 1) * cout]) {
                                *dst += d;
                            }
                        }
                    });
                }
            }
            OpKind::Embedding { indices } => {
                if !wants(ins[0]) {
                    return;
                }
                let table = val(ins[0]);
                let e = table.shape()[1];
                accumulate(grads, ins[0], table.len(), |gt| {
                    for (r, &ix) in indices.iter().enumerate() {
                        for (dst, &d) in gt[ix * e..(ix + 1) * e].iter_mut().zip(&g[r * e..(r + 1) * e]) {
                            *dst += d;
                        }
                    }
                });
            }
            OpKind::Sum | OpKind::Mean | OpKind::Broadcast { .. } => {
                if !wants(ins[0]) {
                    return;
                }
                let n = val(ins[0]).len();
                match op {
                    OpKind::Sum => accumulate(grads, ins[0], n, |ga| ga.iter_mut().for_each(|a| *a += g[0])),
                    OpKind::Mean => {
                        accumulate(grads, ins[0], n, |ga| ga.iter_mut().for_each(|a| *a += g[0] / n as f64))
                    }
                    _ => accumulate(grads, ins[0], 1, |ga| ga[0] += g.iter().sum::<f64>()),
                }
            }
            OpKind::Concat { axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                let total_block: usize = ins.iter().map(|v| val(*v).shape()[*axis] * inner).sum();
                for &v in ins {
                    let block = val(v).shape()[*axis] * inner;
                    if wants(v) {
                        accumulate(grads, v, outer * block, |ga| {
                            for o in 0..outer {
                                let src = &g[o * total_block + offset..o * total_block + offset + block];
                                for (dst, &d) in ga[o * block..(o + 1) * block].iter_mut().zip(src) {
                                    *dst += d;
                                }
                            }
                        });
                    }
                    offset += block;
                }
            }
            OpKind::Slice { axis, start, end } => {
                if !wants(ins[0]) {
                    return;
                }
                let x = val(ins[0]);
                let (outer, dim, inner) = split_axis(x.shape(), *axis);
                let width = (end - start) * inner;
                accumulate(grads, ins[0], x.len(), |ga| {
                    for o in 0..outer {
                        let base = o * dim * inner + start * inner;
                        for (dst, &d) in ga[base..base + width].iter_mut().zip(&g[o * width..(o + 1) * width]) {
                            *dst += d;
                        }
                    }
                });
            }
            OpKind::MaskedFill { mask, .. } => {
                if wants(ins[0]) {
                    accumulate(grads, ins[0], g.len(), |ga| {
                        for ((dst, &d), &m) in ga.iter_mut().zip(g).zip(mask) {
                            if !m {
                                *dst += d;
                            }
                        }
                    });
                }
            }
            OpKind::Reshape { .. } => {
                if wants(ins[0]) {
                    accumulate(grads, ins[0], g.len(), |ga| ga.iter_mut().zip(g).for_each(|(a, &d)| *a += d));
                }
            }
        }
    }
}
