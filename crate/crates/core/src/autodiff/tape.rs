//! Recording tape for reverse-mode differentiation over [`Tensor2`].
//!
//! Ops are evaluated eagerly as they are recorded, so model code can read
//! intermediate values (edge-pool matching, top-k selection) while it builds
//! the graph. The recorded graph can later be replayed with different leaf
//! values via [`Tape::forward`]; data-dependent structure such as gather
//! indices is frozen at record time.

use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{matmul_at_acc, matmul_bt_acc, Tensor2};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index list shared between the op record and the caller.
pub type Indices = Rc<[usize]>;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Input {
        name: Option<String>,
    },
    Param {
        name: String,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `n×c + 1×c`, broadcast over rows.
    AddRow(Var, Var),
    /// `n×c * n×1`, broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Indices),
    SliceRows(Var, usize, usize),
    SegmentSoftmax(Var, Indices),
    SegmentSum(Var, Indices),
    SegmentMean(Var, Indices),
    SegmentMax(Var, Indices),
    /// `out[s] = Σ_{e ∈ seg s} w[e] · x[src[e]]`.
    Spmm {
        weights: Var,
        x: Var,
        src: Indices,
        offsets: Indices,
    },
    MeanRows(Var),
    MaxRows(Var),
    SoftmaxRows(Var),
    OuterRows(Var, Var),
    CrossEntropy(Var, Indices),
    BceWithLogits(Var, f64),
    Sum(Var),
    Grl(Var, f64),
    Detach(Var),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param { .. } => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Elu(..) => "elu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Log(..) => "log",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::SegmentSum(..) => "segment_sum",
            Op::SegmentMean(..) => "segment_mean",
            Op::SegmentMax(..) => "segment_max",
            Op::Spmm { .. } => "spmm",
            Op::MeanRows(..) => "mean_rows",
            Op::MaxRows(..) => "max_rows",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::OuterRows(..) => "outer_rows",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::BceWithLogits(..) => "bce_with_logits",
            Op::Sum(..) => "sum",
            Op::Grl(..) => "grl",
            Op::Detach(..) => "detach",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input { .. } | Op::Param { .. } => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::ConcatCols(a, b)
            | Op::OuterRows(a, b) => vec![*a, *b],
            Op::Spmm { weights, x, .. } => vec![*weights, *x],
            Op::ConcatRows(parts) => parts.clone(),
            Op::Scale(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Elu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Log(a)
            | Op::GatherRows(a, _)
            | Op::SliceRows(a, _, _)
            | Op::SegmentSoftmax(a, _)
            | Op::SegmentSum(a, _)
            | Op::SegmentMean(a, _)
            | Op::SegmentMax(a, _)
            | Op::MeanRows(a)
            | Op::MaxRows(a)
            | Op::SoftmaxRows(a)
            | Op::CrossEntropy(a, _)
            | Op::BceWithLogits(a, _)
            | Op::Sum(a)
            | Op::Grl(a, _)
            | Op::Detach(a) => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Tensor2,
    pub(crate) grad: Option<Tensor2>,
    requires_grad: bool,
}

/// Returns `Some(cap)` once a resource budget has been exceeded.
pub type Guard = fn() -> Option<usize>;

/// Parameter gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) by_name: HashMap<String, Tensor2>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    outputs: Vec<(String, Var)>,
    guard: Option<Guard>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape that fails with [`Error::MemCapExceeded`] when `guard` trips.
    pub fn with_guard(guard: Guard) -> Self {
        Self {
            guard: Some(guard),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Tape::backward`]; `None` if the
    /// node was not reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor2> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn check_guard(&self) -> Result<()> {
        if let Some(cap) = self.guard.and_then(|g| g()) {
            return Err(Error::MemCapExceeded { cap });
        }
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        self.check_guard()?;
        let at = self.nodes.len();
        let inputs = op.inputs();
        debug_assert!(
            inputs.iter().all(|v| v.0 < at),
            "tape inputs must precede node"
        );
        let value = compute(&self.nodes, &op, at)?;
        debug_assert!(
            !value.data().iter().any(|x| x.is_nan())
                || inputs
                    .iter()
                    .any(|v| self.nodes[v.0].value.data().iter().any(|x| x.is_nan())),
            "{} produced NaN at node {at} from finite inputs",
            op.name()
        );
        let requires_grad = match &op {
            Op::Param { .. } => true,
            Op::Input { .. } | Op::Detach(_) => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        Ok(Var(at))
    }

    pub fn input(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node {
            op: Op::Input { name: None },
            value,
            grad: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that can be re-fed by name in [`Tape::forward`].
    pub fn named_input(&mut self, name: &str, value: Tensor2) -> Var {
        self.nodes.push(Node {
            op: Op::Input {
                name: Some(name.to_string()),
            },
            value,
            grad: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable leaf. Repeated calls with the same name return
    /// the existing node so gradients accumulate in one place.
    pub fn param(&mut self, name: &str, value: &Tensor2) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param {
                name: name.to_string(),
            },
            value: value.clone(),
            grad: None,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn mark_output(&mut self, name: &str, v: Var) {
        self.outputs.push((name.to_string(), v));
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.push(Op::AddRow(x, row))
    }
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        self.push(Op::MulCol(x, col))
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(x, c))
    }
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.push(Op::LeakyRelu(x, slope))
    }
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Elu(x))
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sigmoid(x))
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Tanh(x))
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Log(x))
    }
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::ConcatCols(a, b))
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.push(Op::ConcatRows(parts.to_vec()))
    }
    pub fn gather_rows(&mut self, x: Var, idx: Indices) -> Result<Var> {
        self.push(Op::GatherRows(x, idx))
    }
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::SliceRows(x, start, len))
    }
    /// Softmax of an `E×1` column within each `offsets[s]..offsets[s+1]` run.
    pub fn segment_softmax(&mut self, x: Var, offsets: Indices) -> Result<Var> {
        self.push(Op::SegmentSoftmax(x, offsets))
    }
    pub fn segment_sum(&mut self, x: Var, offsets: Indices) -> Result<Var> {
        self.push(Op::SegmentSum(x, offsets))
    }
    pub fn segment_mean(&mut self, x: Var, offsets: Indices) -> Result<Var> {
        self.push(Op::SegmentMean(x, offsets))
    }
    pub fn segment_max(&mut self, x: Var, offsets: Indices) -> Result<Var> {
        self.push(Op::SegmentMax(x, offsets))
    }
    pub fn spmm(&mut self, weights: Var, x: Var, src: Indices, offsets: Indices) -> Result<Var> {
        self.push(Op::Spmm {
            weights,
            x,
            src,
            offsets,
        })
    }
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MeanRows(x))
    }
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MaxRows(x))
    }
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::SoftmaxRows(x))
    }
    /// Row-wise flattened outer product: `n×p`, `n×k` → `n×(p·k)`.
    pub fn outer_rows(&mut self, f: Var, g: Var) -> Result<Var> {
        self.push(Op::OuterRows(f, g))
    }
    /// Mean softmax cross-entropy of `n×k` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: Indices) -> Result<Var> {
        self.push(Op::CrossEntropy(logits, labels))
    }
    /// Mean binary cross-entropy of logits against a constant target.
    pub fn bce_with_logits(&mut self, logits: Var, target: f64) -> Result<Var> {
        self.push(Op::BceWithLogits(logits, target))
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }
    /// Gradient reversal: identity forward, `-lambda · g` backward.
    pub fn grl(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::Precondition(format!(
                "grl lambda must be >= 0, got {lambda}"
            )));
        }
        self.push(Op::Grl(x, lambda))
    }
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Detach(x))
    }

    /// Re-evaluates every node in recording order. `feeds` may override
    /// named inputs and parameters; other leaves keep their values.
    pub fn forward(
        &mut self,
        feeds: &HashMap<String, Tensor2>,
    ) -> Result<HashMap<String, Tensor2>> {
        let mut used = 0usize;
        for i in 0..self.nodes.len() {
            let fed = match &self.nodes[i].op {
                Op::Input { name: Some(n) } | Op::Param { name: n } => feeds.get(n),
                _ => None,
            };
            if let Some(t) = fed {
                let node = &self.nodes[i];
                if t.shape() != node.value.shape() {
                    return Err(Error::Shape {
                        node: i,
                        op: node.op.name(),
                        detail: format!(
                            "fed {}x{}, recorded {}x{}",
                            t.rows(),
                            t.cols(),
                            node.value.rows(),
                            node.value.cols()
                        ),
                    });
                }
                self.nodes[i].value = t.clone();
                used += 1;
                continue;
            }
            if matches!(self.nodes[i].op, Op::Input { .. } | Op::Param { .. }) {
                continue;
            }
            let value = compute(&self.nodes, &self.nodes[i].op, i)?;
            self.nodes[i].value = value;
        }
        if used < feeds.len() {
            let known: Vec<&str> = self
                .nodes
                .iter()
                .filter_map(|n| match &n.op {
                    Op::Input { name: Some(n) } | Op::Param { name: n } => Some(n.as_str()),
                    _ => None,
                })
                .collect();
            if let Some(missing) = feeds.keys().find(|k| !known.contains(&k.as_str())) {
                return Err(Error::UnknownInput(missing.clone()));
            }
        }
        Ok(self
            .outputs
            .iter()
            .map(|(n, v)| (n.clone(), self.nodes[v.0].value.clone()))
            .collect())
    }

    /// Reverse sweep from a scalar loss. Every registered parameter gets an
    /// entry in the result; parameters off every path to the loss are zero.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss {
                node: loss.0,
                rows: shape.0,
                cols: shape.1,
            });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor2::scalar(1.0));
        for i in (0..=loss.0).rev() {
            self.check_guard()?;
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(g) = node.grad.as_ref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            backprop(before, node, g);
        }
        let by_name = self
            .params
            .iter()
            .map(|(name, v)| {
                let node = &self.nodes[v.0];
                let g = node
                    .grad
                    .clone()
                    .unwrap_or_else(|| Tensor2::zeros(node.value.rows(), node.value.cols()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { by_name })
    }
}

fn shape_err(at: usize, op: &Op, detail: String) -> Error {
    Error::Shape {
        node: at,
        op: op.name(),
        detail,
    }
}

fn check_offsets(at: usize, op: &Op, offsets: &[usize], rows: usize) -> Result<()> {
    let ok = !offsets.is_empty()
        && offsets[0] == 0
        && *offsets.last().unwrap() == rows
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(shape_err(
            at,
            op,
            format!("segment offsets do not partition {rows} rows"),
        ))
    }
}

fn same_shape(at: usize, op: &Op, a: &Tensor2, b: &Tensor2) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(shape_err(
            at,
            op,
            format!("{}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in xs.iter_mut() {
        *x /= z;
    }
}

fn compute(nodes: &[Node], op: &Op, at: usize) -> Result<Tensor2> {
    let val = |v: &Var| -> &Tensor2 {
        debug_assert!(v.0 < at, "node {at} reads uncomputed node {}", v.0);
        &nodes[v.0].value
    };
    Ok(match op {
        Op::Input { .. } | Op::Param { .. } => unreachable!("leaves are not computed"),
        Op::MatMul(a, b) => {
            let (a, b) = (val(a), val(b));
            if a.cols() != b.rows() {
                return Err(shape_err(
                    at,
                    op,
                    format!("{}x{} @ {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
                ));
            }
            a.matmul(b)
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (a, b) = (val(a), val(b));
            same_shape(at, op, a, b)?;
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add(..) => |x, y| x + y,
                Op::Sub(..) => |x, y| x - y,
                _ => |x, y| x * y,
            };
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor2::from_vec(a.rows(), a.cols(), data)
        }
        Op::AddRow(x, r) => {
            let (x, r) = (val(x), val(r));
            if r.rows() != 1 || r.cols() != x.cols() {
                return Err(shape_err(
                    at,
                    op,
                    format!(
                        "row {}x{} onto {}x{}",
                        r.rows(),
                        r.cols(),
                        x.rows(),
                        x.cols()
                    ),
                ));
            }
            let mut out = x.clone();
            for i in 0..out.rows() {
                for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                    *o += b;
                }
            }
            out
        }
        Op::MulCol(x, c) => {
            let (x, c) = (val(x), val(c));
            if c.cols() != 1 || c.rows() != x.rows() {
                return Err(shape_err(
                    at,
                    op,
                    format!(
                        "column {}x{} onto {}x{}",
                        c.rows(),
                        c.cols(),
                        x.rows(),
                        x.cols()
                    ),
                ));
            }
            let mut out = x.clone();
            for i in 0..out.rows() {
                let s = c.data()[i];
                out.row_mut(i).iter_mut().for_each(|o| *o *= s);
            }
            out
        }
        Op::Scale(x, c) => val(x).map(|v| v * c),
        Op::LeakyRelu(x, s) => val(x).map(|v| if v > 0.0 { v } else { s * v }),
        Op::Elu(x) => val(x).map(|v| if v > 0.0 { v } else { v.exp_m1() }),
        Op::Sigmoid(x) => val(x).map(sigmoid),
        Op::Tanh(x) => val(x).map(f64::tanh),
        Op::Log(x) => {
            let x = val(x);
            if let Some(bad) = x.data().iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Precondition(format!(
                    "log of non-positive value {bad} at node {at}"
                )));
            }
            x.map(f64::ln)
        }
        Op::ConcatCols(a, b) => {
            let (a, b) = (val(a), val(b));
            if a.rows() != b.rows() {
                return Err(shape_err(
                    at,
                    op,
                    format!("{} rows vs {} rows", a.rows(), b.rows()),
                ));
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            for i in 0..a.rows() {
                data.extend_from_slice(a.row(i));
                data.extend_from_slice(b.row(i));
            }
            Tensor2::from_vec(a.rows(), a.cols() + b.cols(), data)
        }
        Op::ConcatRows(parts) => {
            let cols = parts.first().map_or(0, |p| val(p).cols());
            let mut rows = 0;
            for p in parts {
                let t = val(p);
                if t.cols() != cols {
                    return Err(shape_err(
                        at,
                        op,
                        format!("{} cols vs {} cols", t.cols(), cols),
                    ));
                }
                rows += t.rows();
            }
            let mut data = Vec::with_capacity(rows * cols);
            for p in parts {
                data.extend_from_slice(val(p).data());
            }
            Tensor2::from_vec(rows, cols, data)
        }
        Op::GatherRows(x, idx) => {
            let x = val(x);
            let cols = x.cols();
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &i in idx.iter() {
                if i >= x.rows() {
                    return Err(shape_err(at, op, format!("row {i} out of {}", x.rows())));
                }
                data.extend_from_slice(x.row(i));
            }
            Tensor2::from_vec(idx.len(), cols, data)
        }
        Op::SliceRows(x, start, len) => {
            let x = val(x);
            if start + len > x.rows() {
                return Err(shape_err(
                    at,
                    op,
                    format!("rows {start}..{} of {}", start + len, x.rows()),
                ));
            }
            let c = x.cols();
            Tensor2::from_vec(*len, c, x.data()[start * c..(start + len) * c].to_vec())
        }
        Op::SegmentSoftmax(x, offsets) => {
            let x = val(x);
            if x.cols() != 1 {
                return Err(shape_err(
                    at,
                    op,
                    format!("expected a column, got {} cols", x.cols()),
                ));
            }
            check_offsets(at, op, offsets, x.rows())?;
            let mut out = x.clone();
            for w in offsets.windows(2) {
                softmax_in_place(&mut out.data_mut()[w[0]..w[1]]);
            }
            out
        }
        Op::SegmentSum(x, offsets) | Op::SegmentMean(x, offsets) | Op::SegmentMax(x, offsets) => {
            let x = val(x);
            check_offsets(at, op, offsets, x.rows())?;
            let c = x.cols();
            let mut out = Tensor2::zeros(offsets.len() - 1, c);
            for (s, w) in offsets.windows(2).enumerate() {
                let n = w[1] - w[0];
                let o = out.row_mut(s);
                match op {
                    Op::SegmentMax(..) => {
                        if n == 0 {
                            return Err(shape_err(at, op, format!("empty segment {s}")));
                        }
                        o.copy_from_slice(x.row(w[0]));
                        for r in w[0] + 1..w[1] {
                            for (a, &b) in o.iter_mut().zip(x.row(r)) {
                                if b > *a {
                                    *a = b;
                                }
                            }
                        }
                    }
                    _ => {
                        for r in w[0]..w[1] {
                            for (a, &b) in o.iter_mut().zip(x.row(r)) {
                                *a += b;
                            }
                        }
                        if matches!(op, Op::SegmentMean(..)) {
                            if n == 0 {
                                return Err(shape_err(at, op, format!("empty segment {s}")));
                            }
                            let inv = 1.0 / n as f64;
                            o.iter_mut().for_each(|a| *a *= inv);
                        }
                    }
                }
            }
            out
        }
        Op::Spmm {
            weights,
            x,
            src,
            offsets,
        } => {
            let (w, x) = (val(weights), val(x));
            if w.cols() != 1 || w.rows() != src.len() {
                return Err(shape_err(
                    at,
                    op,
                    format!("weights {}x{} for {} edges", w.rows(), w.cols(), src.len()),
                ));
            }
            check_offsets(at, op, offsets, src.len())?;
            if let Some(&bad) = src.iter().find(|&&s| s >= x.rows()) {
                return Err(shape_err(
                    at,
                    op,
                    format!("source row {bad} out of {}", x.rows()),
                ));
            }
            let mut out = Tensor2::zeros(offsets.len() - 1, x.cols());
            for (s, win) in offsets.windows(2).enumerate() {
                let o = out.row_mut(s);
                for e in win[0]..win[1] {
                    let we = w.data()[e];
                    for (a, &b) in o.iter_mut().zip(x.row(src[e])) {
                        *a += we * b;
                    }
                }
            }
            out
        }
        Op::MeanRows(x) | Op::MaxRows(x) => {
            let x = val(x);
            if x.rows() == 0 {
                return Err(shape_err(at, op, "empty row set".into()));
            }
            let offsets = [0, x.rows()];
            let mut out = Tensor2::zeros(1, x.cols());
            if matches!(op, Op::MaxRows(_)) {
                out.data_mut().copy_from_slice(x.row(0));
                for r in 1..x.rows() {
                    for (a, &b) in out.data_mut().iter_mut().zip(x.row(r)) {
                        if b > *a {
                            *a = b;
                        }
                    }
                }
            } else {
                for r in 0..offsets[1] {
                    for (a, &b) in out.data_mut().iter_mut().zip(x.row(r)) {
                        *a += b;
                    }
                }
                let inv = 1.0 / x.rows() as f64;
                out.data_mut().iter_mut().for_each(|a| *a *= inv);
            }
            out
        }
        Op::SoftmaxRows(x) => {
            let mut out = val(x).clone();
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
            out
        }
        Op::OuterRows(f, g) => {
            let (f, g) = (val(f), val(g));
            if f.rows() != g.rows() {
                return Err(shape_err(
                    at,
                    op,
                    format!("{} rows vs {} rows", f.rows(), g.rows()),
                ));
            }
            let (p, k) = (f.cols(), g.cols());
            let mut data = Vec::with_capacity(f.rows() * p * k);
            for r in 0..f.rows() {
                for &a in f.row(r) {
                    data.extend(g.row(r).iter().map(|&b| a * b));
                }
            }
            Tensor2::from_vec(f.rows(), p * k, data)
        }
        Op::CrossEntropy(x, labels) => {
            let x = val(x);
            if labels.len() != x.rows() || x.rows() == 0 {
                return Err(shape_err(
                    at,
                    op,
                    format!("{} labels for {} rows", labels.len(), x.rows()),
                ));
            }
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                if y >= x.cols() {
                    return Err(shape_err(
                        at,
                        op,
                        format!("label {y} out of {} classes", x.cols()),
                    ));
                }
                let row = x.row(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                total += lse - row[y];
            }
            Tensor2::scalar(total / x.rows() as f64)
        }
        Op::BceWithLogits(x, t) => {
            let x = val(x);
            if x.is_empty() {
                return Err(shape_err(at, op, "empty logit set".into()));
            }
            let total: f64 = x.data().iter().map(|&v| softplus(v) - v * t).sum();
            Tensor2::scalar(total / x.len() as f64)
        }
        Op::Sum(x) => Tensor2::scalar(val(x).data().iter().sum()),
        Op::Grl(x, _) | Op::Detach(x) => val(x).clone(),
    })
}

fn accumulate(nodes: &mut [Node], v: Var, contrib: Tensor2) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    match &mut node.grad {
        Some(g) => g.add_assign(&contrib),
        None => node.grad = Some(contrib),
    }
}

/// Adds `f(grad_slot)` in place, allocating a zero slot on first touch.
fn with_grad(nodes: &mut [Node], v: Var, f: impl FnOnce(&mut Tensor2, &Tensor2)) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let (r, c) = node.value.shape();
    let slot = node.grad.get_or_insert_with(|| Tensor2::zeros(r, c));
    f(slot, &node.value);
}

fn needs(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

/// Like [`with_grad`], also lending the value of a second node.
fn with_grad_and(
    nodes: &mut [Node],
    target: Var,
    other: Var,
    f: impl FnOnce(&mut Tensor2, &Tensor2),
) {
    if !nodes[target.0].requires_grad {
        return;
    }
    if target == other {
        let ov = nodes[other.0].value.clone();
        with_grad(nodes, target, |g, _| f(g, &ov));
        return;
    }
    let (t, o) = if target.0 < other.0 {
        let (l, r) = nodes.split_at_mut(other.0);
        (&mut l[target.0], &r[0])
    } else {
        let (l, r) = nodes.split_at_mut(target.0);
        (&mut r[0], &l[other.0])
    };
    let (rows, cols) = t.value.shape();
    let slot = t.grad.get_or_insert_with(|| Tensor2::zeros(rows, cols));
    f(slot, &o.value);
}

fn backprop(before: &mut [Node], node: &Node, g: &Tensor2) {
    let y = &node.value;
    match &node.op {
        Op::Input { .. } | Op::Param { .. } | Op::Detach(_) => {}
        Op::MatMul(a, b) => {
            if needs(before, *a) {
                with_grad_and(before, *a, *b, |ga, bv| matmul_bt_acc(g, &bv, ga));
            }
            if needs(before, *b) {
                with_grad_and(before, *b, *a, |gb, av| matmul_at_acc(&av, g, gb));
            }
        }
        Op::Add(a, b) => {
            with_grad(before, *a, |ga, _| ga.add_assign(g));
            with_grad(before, *b, |gb, _| gb.add_assign(g));
        }
        Op::Sub(a, b) => {
            with_grad(before, *a, |ga, _| ga.add_assign(g));
            with_grad(before, *b, |gb, _| gb.axpy(-1.0, g));
        }
        Op::Mul(a, b) => {
            if needs(before, *a) {
                with_grad_and(before, *a, *b, |ga, bv| {
                    for ((o, &gi), &bi) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += gi * bi;
                    }
                });
            }
            if needs(before, *b) {
                with_grad_and(before, *b, *a, |gb, av| {
                    for ((o, &gi), &ai) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gi * ai;
                    }
                });
            }
        }
        Op::AddRow(x, r) => {
            with_grad(before, *x, |gx, _| gx.add_assign(g));
            with_grad(before, *r, |gr, _| {
                for i in 0..g.rows() {
                    for (o, &gi) in gr.data_mut().iter_mut().zip(g.row(i)) {
                        *o += gi;
                    }
                }
            });
        }
        Op::MulCol(x, c) => {
            if needs(before, *x) {
                with_grad_and(before, *x, *c, |gx, cv| {
                    for i in 0..g.rows() {
                        let s = cv.data()[i];
                        for (o, &gi) in gx.row_mut(i).iter_mut().zip(g.row(i)) {
                            *o += gi * s;
                        }
                    }
                });
            }
            if needs(before, *c) {
                with_grad_and(before, *c, *x, |gc, xv| {
                    for i in 0..g.rows() {
                        let d: f64 = g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum();
                        gc.data_mut()[i] += d;
                    }
                });
            }
        }
        Op::Scale(x, c) => with_grad(before, *x, |gx, _| gx.axpy(*c, g)),
        Op::LeakyRelu(x, s) => with_grad(before, *x, |gx, xv| {
            for ((o, &gi), &xi) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                *o += if xi > 0.0 { gi } else { s * gi };
            }
        }),
        Op::Elu(x) => with_grad(before, *x, |gx, xv| {
            for (((o, &gi), &xi), &yi) in gx
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(xv.data())
                .zip(y.data())
            {
                *o += if xi > 0.0 { gi } else { gi * (yi + 1.0) };
            }
        }),
        Op::Sigmoid(x) => with_grad(before, *x, |gx, _| {
            for ((o, &gi), &yi) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                *o += gi * yi * (1.0 - yi);
            }
        }),
        Op::Tanh(x) => with_grad(before, *x, |gx, _| {
            for ((o, &gi), &yi) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                *o += gi * (1.0 - yi * yi);
            }
        }),
        Op::Log(x) => with_grad(before, *x, |gx, xv| {
            for ((o, &gi), &xi) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                *o += gi / xi;
            }
        }),
        Op::ConcatCols(a, b) => {
            let ca = before[a.0].value.cols();
            with_grad(before, *a, |ga, _| {
                for i in 0..g.rows() {
                    for (o, &gi) in ga.row_mut(i).iter_mut().zip(&g.row(i)[..ca]) {
                        *o += gi;
                    }
                }
            });
            with_grad(before, *b, |gb, _| {
                for i in 0..g.rows() {
                    for (o, &gi) in gb.row_mut(i).iter_mut().zip(&g.row(i)[ca..]) {
                        *o += gi;
                    }
                }
            });
        }
        Op::ConcatRows(parts) => {
            let cols = g.cols();
            let mut start = 0;
            for p in parts {
                let rows = before[p.0].value.rows();
                let chunk = &g.data()[start * cols..(start + rows) * cols];
                with_grad(before, *p, |gp, _| {
                    for (o, &gi) in gp.data_mut().iter_mut().zip(chunk) {
                        *o += gi;
                    }
                });
                start += rows;
            }
        }
        Op::GatherRows(x, idx) => with_grad(before, *x, |gx, _| {
            for (r, &i) in idx.iter().enumerate() {
                for (o, &gi) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                    *o += gi;
                }
            }
        }),
        Op::SliceRows(x, start, len) => with_grad(before, *x, |gx, _| {
            let c = g.cols();
            for (o, &gi) in gx.data_mut()[start * c..(start + len) * c]
                .iter_mut()
                .zip(g.data())
            {
                *o += gi;
            }
        }),
        Op::SegmentSoftmax(x, offsets) => with_grad(before, *x, |gx, _| {
            for w in offsets.windows(2) {
                let dot: f64 = (w[0]..w[1]).map(|e| g.data()[e] * y.data()[e]).sum();
                for e in w[0]..w[1] {
                    gx.data_mut()[e] += y.data()[e] * (g.data()[e] - dot);
                }
            }
        }),
        Op::SegmentSum(x, offsets) | Op::SegmentMean(x, offsets) => {
            let mean = matches!(node.op, Op::SegmentMean(..));
            with_grad(before, *x, |gx, _| {
                for (s, w) in offsets.windows(2).enumerate() {
                    let scale = if mean {
                        1.0 / (w[1] - w[0]) as f64
                    } else {
                        1.0
                    };
                    for r in w[0]..w[1] {
                        for (o, &gi) in gx.row_mut(r).iter_mut().zip(g.row(s)) {
                            *o += gi * scale;
                        }
                    }
                }
            })
        }
        Op::SegmentMax(x, offsets) => with_grad(before, *x, |gx, xv| {
            for (s, w) in offsets.windows(2).enumerate() {
                for c in 0..xv.cols() {
                    let target = y.get(s, c);
                    if let Some(r) = (w[0]..w[1]).find(|&r| xv.get(r, c) == target) {
                        gx.data_mut()[r * xv.cols() + c] += g.get(s, c);
                    }
                }
            }
        }),
        Op::Spmm {
            weights,
            x,
            src,
            offsets,
        } => {
            if needs(before, *weights) {
                with_grad_and(before, *weights, *x, |gw, xv| {
                    for (s, win) in offsets.windows(2).enumerate() {
                        for e in win[0]..win[1] {
                            let d: f64 = g
                                .row(s)
                                .iter()
                                .zip(xv.row(src[e]))
                                .map(|(a, b)| a * b)
                                .sum();
                            gw.data_mut()[e] += d;
                        }
                    }
                });
            }
            if needs(before, *x) {
                with_grad_and(before, *x, *weights, |gx, wv| {
                    for (s, win) in offsets.windows(2).enumerate() {
                        for e in win[0]..win[1] {
                            let we = wv.data()[e];
                            for (o, &gi) in gx.row_mut(src[e]).iter_mut().zip(g.row(s)) {
                                *o += we * gi;
                            }
                        }
                    }
                });
            }
        }
        Op::MeanRows(x) => with_grad(before, *x, |gx, _| {
            let inv = 1.0 / gx.rows() as f64;
            for r in 0..gx.rows() {
                for (o, &gi) in gx.row_mut(r).iter_mut().zip(g.data()) {
                    *o += gi * inv;
                }
            }
        }),
        Op::MaxRows(x) => with_grad(before, *x, |gx, xv| {
            for c in 0..xv.cols() {
                let target = y.data()[c];
                if let Some(r) = (0..xv.rows()).find(|&r| xv.get(r, c) == target) {
                    gx.data_mut()[r * xv.cols() + c] += g.data()[c];
                }
            }
        }),
        Op::SoftmaxRows(x) => with_grad(before, *x, |gx, _| {
            for r in 0..y.rows() {
                let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                for ((o, &gi), &yi) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                    *o += yi * (gi - dot);
                }
            }
        }),
        Op::OuterRows(f, h) => {
            let k = before[h.0].value.cols();
            if needs(before, *f) {
                with_grad_and(before, *f, *h, |gf, hv| {
                    for r in 0..g.rows() {
                        let grow = g.row(r);
                        let hrow = hv.row(r);
                        for (a, o) in gf.row_mut(r).iter_mut().enumerate() {
                            *o += grow[a * k..(a + 1) * k]
                                .iter()
                                .zip(hrow)
                                .map(|(x, y)| x * y)
                                .sum::<f64>();
                        }
                    }
                });
            }
            if needs(before, *h) {
                with_grad_and(before, *h, *f, |gh, fv| {
                    for r in 0..g.rows() {
                        let grow = g.row(r);
                        for (a, &fa) in fv.row(r).iter().enumerate() {
                            for (o, &gi) in gh.row_mut(r).iter_mut().zip(&grow[a * k..(a + 1) * k])
                            {
                                *o += gi * fa;
                            }
                        }
                    }
                });
            }
        }
        Op::CrossEntropy(x, labels) => with_grad(before, *x, |gx, xv| {
            let scale = g.item() / xv.rows() as f64;
            for (r, &lab) in labels.iter().enumerate() {
                let mut p = xv.row(r).to_vec();
                softmax_in_place(&mut p);
                p[lab] -= 1.0;
                for (o, pi) in gx.row_mut(r).iter_mut().zip(p) {
                    *o += pi * scale;
                }
            }
        }),
        Op::BceWithLogits(x, t) => with_grad(before, *x, |gx, xv| {
            let scale = g.item() / xv.len() as f64;
            for (o, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                *o += (sigmoid(v) - t) * scale;
            }
        }),
        Op::Sum(x) => {
            let gi = g.item();
            with_grad(before, *x, |gx, _| {
                gx.data_mut().iter_mut().for_each(|o| *o += gi)
            });
        }
        Op::Grl(x, lambda) => {
            let mut rev = g.clone();
            rev.data_mut().iter_mut().for_each(|v| *v *= -lambda);
            accumulate(before, *x, rev);
        }
    }
}
