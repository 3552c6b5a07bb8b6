//! Dense `f64` tensors with a reverse-mode tape.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation on a [`Var`]
//! evaluates eagerly and records how to route the output gradient back to its
//! inputs; [`Graph::backward`] walks the nodes in exact reverse append order.
//! Only scalar-vs-tensor broadcasting exists; anything else is a shape error.

use std::cell::RefCell;

use crate::par;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, format!("expected a matrix, got {:?}", self.shape))),
        }
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Gelu,
    Exp,
    Log,
    Log1p,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Binary(Binary, usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Unary(Unary, usize),
    Sum(usize),
    SumAxis0(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        x: usize,
        idx: Vec<usize>,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    ConcatRows(Vec<usize>),
    Reshape(usize),
    Pick {
        x: usize,
        cols: Vec<usize>,
    },
    MaxOverPositions {
        x: usize,
        argmax: Vec<usize>,
    },
    Cosine {
        a: usize,
        b: usize,
        tau: f64,
        a_hat: Vec<f64>,
        b_hat: Vec<f64>,
        a_norm: Vec<f64>,
        b_norm: Vec<f64>,
    },
    WeightedLse {
        x: usize,
        weights: Vec<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        segments: Vec<(usize, usize)>,
        heads: usize,
        probs: Vec<Vec<f64>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only computation record.
///
/// Construction and backward are single-threaded; a graph is not `Sync`.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient on backward.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push(value, op, requires_grad))
    }

    fn value(&self, id: usize) -> std::cell::Ref<'_, Tensor> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Populates `grad` on every `requires_grad` leaf with d(loss)/d(leaf).
    ///
    /// Repeated calls without [`Graph::zero_grad`] accumulate into the leaves.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let shape = nodes[loss.id].value.shape.clone();
        if nodes[loss.id].value.len() != 1 || shape.len() > 1 {
            return Err(Error::Rank(shape));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = nodes[id].op {
                match &mut nodes[id].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (input, contrib) in backprop(&nodes, id, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut adj[input] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// C[m×n] = A[m×k]·B[k×n].
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    par::rows_mut(&mut out, n, m * k * n, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    out
}

/// C[m×n] = A[m×k]·B[n×k]ᵀ.
pub(crate) fn matmul_nt_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    par::rows_mut(&mut out, n, m * k * n, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *o = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    });
    out
}

/// C[k×n] = A[m×k]ᵀ·B[m×n].
pub(crate) fn matmul_tn_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    par::rows_mut(&mut out, n, m * k * n, |p, row| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    out
}

fn transpose_kernel(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

fn normalize_rows(x: &[f64], rows: usize, cols: usize, operand: &'static str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut hat = vec![0.0; x.len()];
    let mut norms = Vec::with_capacity(rows);
    for i in 0..rows {
        let r = &x[i * cols..(i + 1) * cols];
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Degenerate { operand, row: i });
        }
        for (h, v) in hat[i * cols..(i + 1) * cols].iter_mut().zip(r) {
            *h = v / n;
        }
        norms.push(n);
    }
    Ok((hat, norms))
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.value(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value(self.id).shape.clone()
    }

    pub fn item(&self) -> f64 {
        self.graph.value(self.id).data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grad(*self)
    }

    fn same_graph(&self, other: &Var<'_>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::shape(op, "operands live on different graphs"))
        }
    }

    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&rhs, "matmul")?;
        let out = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(rhs.id);
            let (m, k) = a.dims2("matmul")?;
            let (k2, n) = b.dims2("matmul")?;
            if k != k2 {
                return Err(Error::shape("matmul", format!("inner dims {k} vs {k2}")));
            }
            Tensor::matrix(m, n, matmul_kernel(&a.data, &b.data, m, k, n))?
        };
        self.graph
            .record("matmul", out, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id])
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let out = {
            let a = self.graph.value(self.id);
            let (r, c) = a.dims2("transpose")?;
            Tensor::matrix(c, r, transpose_kernel(&a.data, r, c))?
        };
        self.graph.record("transpose", out, Op::Transpose(self.id), &[self.id])
    }

    fn binary(self, rhs: Var<'g>, kind: Binary, name: &'static str) -> Result<Var<'g>> {
        self.same_graph(&rhs, name)?;
        let out = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(rhs.id);
            check_same(name, &a, &b)?;
            let data = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                })
                .collect();
            Tensor::new(a.shape.clone(), data)?
        };
        self.graph
            .record(name, out, Op::Binary(kind, self.id, rhs.id), &[self.id, rhs.id])
    }

    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Binary::Add, "add")
    }

    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Binary::Sub, "sub")
    }

    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Binary::Mul, "mul")
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_bias(self, bias: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&bias, "add_bias")?;
        let out = {
            let x = self.graph.value(self.id);
            let b = self.graph.value(bias.id);
            let (_, n) = x.dims2("add_bias")?;
            if b.shape != [n] {
                return Err(Error::shape(
                    "add_bias",
                    format!("bias {:?} for {} columns", b.shape, n),
                ));
            }
            let mut data = x.data.clone();
            for row in data.chunks_mut(n) {
                row.iter_mut().zip(&b.data).for_each(|(o, v)| *o += v);
            }
            Tensor::new(x.shape.clone(), data)?
        };
        self.graph
            .record("add_bias", out, Op::AddBias(self.id, bias.id), &[self.id, bias.id])
    }

    pub fn scale(self, c: f64) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            Tensor::new(x.shape.clone(), x.data.iter().map(|v| v * c).collect())?
        };
        self.graph.record("scale", out, Op::Scale(self.id, c), &[self.id])
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            Tensor::new(x.shape.clone(), x.data.iter().map(|v| v + c).collect())?
        };
        self.graph.record("add_scalar", out, Op::AddScalar(self.id), &[self.id])
    }

    fn unary(self, kind: Unary) -> Result<Var<'g>> {
        let name = match kind {
            Unary::Relu => "relu",
            Unary::Gelu => "gelu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Log1p => "log1p",
        };
        let out = {
            let x = self.graph.value(self.id);
            match kind {
                Unary::Log if x.data.iter().any(|&v| v <= 0.0) => {
                    return Err(Error::Domain {
                        op: "log",
                        detail: "argument must be positive".into(),
                    })
                }
                Unary::Log1p if x.data.iter().any(|&v| v <= -1.0) => {
                    return Err(Error::Domain {
                        op: "log1p",
                        detail: "argument must exceed -1".into(),
                    })
                }
                _ => {}
            }
            let f: fn(f64) -> f64 = match kind {
                Unary::Relu => |v| v.max(0.0),
                Unary::Gelu => gelu,
                Unary::Exp => f64::exp,
                Unary::Log => f64::ln,
                Unary::Log1p => f64::ln_1p,
            };
            Tensor::new(x.shape.clone(), x.data.iter().map(|&v| f(v)).collect())?
        };
        self.graph.record(name, out, Op::Unary(kind, self.id), &[self.id])
    }

    pub fn relu(self) -> Result<Var<'g>> {
        self.unary(Unary::Relu)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Result<Var<'g>> {
        self.unary(Unary::Gelu)
    }

    pub fn exp(self) -> Result<Var<'g>> {
        self.unary(Unary::Exp)
    }

    pub fn log(self) -> Result<Var<'g>> {
        self.unary(Unary::Log)
    }

    pub fn log1p(self) -> Result<Var<'g>> {
        self.unary(Unary::Log1p)
    }

    pub fn sum(self) -> Result<Var<'g>> {
        let out = Tensor::scalar(self.graph.value(self.id).data.iter().sum());
        self.graph.record("sum", out, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let n = self.graph.value(self.id).len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Column sums of an `m×n` matrix, giving a length-`n` vector.
    pub fn sum_axis0(self) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            let (_, n) = x.dims2("sum_axis0")?;
            let mut acc = vec![0.0; n];
            for row in x.data.chunks(n) {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            Tensor::vector(acc)
        };
        self.graph.record("sum_axis0", out, Op::SumAxis0(self.id), &[self.id])
    }

    pub fn softmax_rows(self) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            let (_, n) = x.dims2("softmax_rows")?;
            let mut data = vec![0.0; x.len()];
            for (src, dst) in x.data.chunks(n).zip(data.chunks_mut(n)) {
                softmax_row(src, dst);
            }
            Tensor::new(x.shape.clone(), data)?
        };
        self.graph
            .record("softmax_rows", out, Op::SoftmaxRows(self.id), &[self.id])
    }

    pub fn log_softmax_rows(self) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            let (_, n) = x.dims2("log_softmax_rows")?;
            let mut data = vec![0.0; x.len()];
            for (src, dst) in x.data.chunks(n).zip(data.chunks_mut(n)) {
                log_softmax_row(src, dst);
            }
            Tensor::new(x.shape.clone(), data)?
        };
        self.graph
            .record("log_softmax_rows", out, Op::LogSoftmaxRows(self.id), &[self.id])
    }

    /// Row-wise layer normalization with learned gain and shift.
    pub fn layer_norm(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Result<Var<'g>> {
        self.same_graph(&gamma, "layer_norm")?;
        self.same_graph(&beta, "layer_norm")?;
        let (out, xhat, inv_std) = {
            let x = self.graph.value(self.id);
            let g = self.graph.value(gamma.id);
            let b = self.graph.value(beta.id);
            let (m, n) = x.dims2("layer_norm")?;
            if g.shape != [n] || b.shape != [n] {
                return Err(Error::shape("layer_norm", "gain/shift must match row width"));
            }
            let mut xhat = vec![0.0; m * n];
            let mut inv_std = Vec::with_capacity(m);
            let mut y = vec![0.0; m * n];
            for i in 0..m {
                let row = &x.data[i * n..(i + 1) * n];
                let mu = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std.push(is);
                for j in 0..n {
                    let h = (row[j] - mu) * is;
                    xhat[i * n + j] = h;
                    y[i * n + j] = g.data[j] * h + b.data[j];
                }
            }
            (Tensor::new(x.shape.clone(), y)?, xhat, inv_std)
        };
        self.graph.record(
            "layer_norm",
            out,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            &[self.id, gamma.id, beta.id],
        )
    }

    /// Selects rows `idx` (with repetition) from a matrix.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            let (r, c) = x.dims2("gather_rows")?;
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                if i >= r {
                    return Err(Error::shape(
                        "gather_rows",
                        format!("row {i} out of range for {r} rows"),
                    ));
                }
                data.extend_from_slice(&x.data[i * c..(i + 1) * c]);
            }
            Tensor::matrix(idx.len(), c, data)?
        };
        self.graph.record(
            "gather_rows",
            out,
            Op::GatherRows {
                x: self.id,
                idx: idx.to_vec(),
            },
            &[self.id],
        )
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            let (r, c) = x.dims2("slice_rows")?;
            if start + len > r {
                return Err(Error::shape(
                    "slice_rows",
                    format!("rows {start}..{} of {r}", start + len),
                ));
            }
            Tensor::matrix(len, c, x.data[start * c..(start + len) * c].to_vec())?
        };
        self.graph
            .record("slice_rows", out, Op::SliceRows { x: self.id, start }, &[self.id])
    }

    /// Stacks matrices (or vectors, as single rows) vertically.
    pub fn concat_rows(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        let graph = first.graph;
        let out = {
            let mut cols = None;
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                first.same_graph(p, "concat_rows")?;
                let t = graph.value(p.id);
                let (r, c) = match t.shape[..] {
                    [c] => (1, c),
                    [r, c] => (r, c),
                    _ => return Err(Error::shape("concat_rows", "rank must be 1 or 2")),
                };
                if *cols.get_or_insert(c) != c {
                    return Err(Error::shape("concat_rows", "column counts differ"));
                }
                rows += r;
                data.extend_from_slice(&t.data);
            }
            Tensor::matrix(rows, cols.unwrap_or(0), data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        graph.record("concat_rows", out, Op::ConcatRows(ids.clone()), &ids)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            Tensor::new(shape.to_vec(), x.data.clone())?
        };
        self.graph.record("reshape", out, Op::Reshape(self.id), &[self.id])
    }

    /// Picks `x[i, cols[i]]` for every row, giving a length-`m` vector.
    pub fn pick(self, cols: &[usize]) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            let (m, n) = x.dims2("pick")?;
            if cols.len() != m || cols.iter().any(|&c| c >= n) {
                return Err(Error::shape("pick", "one in-range column per row required"));
            }
            Tensor::vector(cols.iter().enumerate().map(|(i, &c)| x.data[i * n + c]).collect())
        };
        self.graph.record(
            "pick",
            out,
            Op::Pick {
                x: self.id,
                cols: cols.to_vec(),
            },
            &[self.id],
        )
    }

    /// Per-column maximum over the unmasked rows of an `L×V` matrix.
    ///
    /// The gradient flows to the arg-max row only, taking the first row on ties.
    pub fn max_over_positions(self, mask: &[bool]) -> Result<Var<'g>> {
        let (out, argmax) = {
            let x = self.graph.value(self.id);
            let (l, v) = x.dims2("max_over_positions")?;
            if mask.len() != l {
                return Err(Error::shape(
                    "max_over_positions",
                    format!("mask length {} for {l} positions", mask.len()),
                ));
            }
            let first = mask.iter().position(|&m| m).ok_or(Error::EmptySequence)?;
            let mut best = x.data[first * v..(first + 1) * v].to_vec();
            let mut argmax = vec![first; v];
            for (i, _) in mask.iter().enumerate().skip(first + 1).filter(|(_, &m)| m) {
                let row = &x.data[i * v..(i + 1) * v];
                for j in 0..v {
                    if row[j] > best[j] {
                        best[j] = row[j];
                        argmax[j] = i;
                    }
                }
            }
            (Tensor::vector(best), argmax)
        };
        self.graph.record(
            "max_over_positions",
            out,
            Op::MaxOverPositions { x: self.id, argmax },
            &[self.id],
        )
    }

    /// Temperature-scaled cosine similarity between every row of `self` and
    /// every row of `other`.
    pub fn cosine_matrix(self, other: Var<'g>, tau: f64) -> Result<Var<'g>> {
        self.same_graph(&other, "cosine_matrix")?;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        let (out, a_hat, b_hat, a_norm, b_norm) = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(other.id);
            let (m, d) = a.dims2("cosine_matrix")?;
            let (n, d2) = b.dims2("cosine_matrix")?;
            if d != d2 {
                return Err(Error::shape("cosine_matrix", format!("widths {d} vs {d2}")));
            }
            let (a_hat, a_norm) = normalize_rows(&a.data, m, d, "lhs")?;
            let (b_hat, b_norm) = normalize_rows(&b.data, n, d, "rhs")?;
            let mut s = matmul_nt_kernel(&a_hat, &b_hat, m, d, n);
            s.iter_mut().for_each(|v| *v /= tau);
            (Tensor::matrix(m, n, s)?, a_hat, b_hat, a_norm, b_norm)
        };
        self.graph.record(
            "cosine_matrix",
            out,
            Op::Cosine {
                a: self.id,
                b: other.id,
                tau,
                a_hat,
                b_hat,
                a_norm,
                b_norm,
            },
            &[self.id, other.id],
        )
    }

    /// Row-wise `log Σ_j w_ij·exp(x_ij)` with constant nonnegative weights.
    pub fn weighted_logsumexp_rows(self, weights: &Tensor) -> Result<Var<'g>> {
        let out = {
            let x = self.graph.value(self.id);
            check_same("weighted_logsumexp_rows", &x, weights)?;
            let (m, n) = x.dims2("weighted_logsumexp_rows")?;
            if weights.data.iter().any(|&w| w < 0.0 || !w.is_finite()) {
                return Err(Error::Domain {
                    op: "weighted_logsumexp_rows",
                    detail: "weights must be finite and nonnegative".into(),
                });
            }
            let mut y = Vec::with_capacity(m);
            for i in 0..m {
                let xs = &x.data[i * n..(i + 1) * n];
                let ws = &weights.data[i * n..(i + 1) * n];
                let max = xs
                    .iter()
                    .zip(ws)
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(Error::Domain {
                        op: "weighted_logsumexp_rows",
                        detail: format!("row {i} has no positive weight"),
                    });
                }
                let z: f64 = xs.iter().zip(ws).map(|(&v, &w)| w * (v - max).exp()).sum();
                y.push(max + z.ln());
            }
            Tensor::vector(y)
        };
        self.graph.record(
            "weighted_logsumexp_rows",
            out,
            Op::WeightedLse {
                x: self.id,
                weights: weights.data.clone(),
            },
            &[self.id],
        )
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `T×H` with every sequence occupying the contiguous
    /// rows `segments[s] = (start, len)`. Tokens attend only within their own
    /// segment, so there is no padding to mask.
    pub fn attention(q: Var<'g>, k: Var<'g>, v: Var<'g>, segments: &[(usize, usize)], heads: usize) -> Result<Var<'g>> {
        q.same_graph(&k, "attention")?;
        q.same_graph(&v, "attention")?;
        let graph = q.graph;
        let (out, probs) = {
            let qt = graph.value(q.id);
            let kt = graph.value(k.id);
            let vt = graph.value(v.id);
            check_same("attention", &qt, &kt)?;
            check_same("attention", &qt, &vt)?;
            let (t, h) = qt.dims2("attention")?;
            if heads == 0 || h % heads != 0 {
                return Err(Error::Config(format!("hidden {h} not divisible by {heads} heads")));
            }
            for &(s, l) in segments {
                if s + l > t {
                    return Err(Error::shape("attention", "segment out of range"));
                }
            }
            let dh = h / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let jobs: Vec<(usize, usize)> = (0..segments.len())
                .flat_map(|s| (0..heads).map(move |hd| (s, hd)))
                .collect();
            let (qd, kd, vd) = (&qt.data, &kt.data, &vt.data);
            let results = par::map(&jobs, |&(s, hd)| {
                let (start, len) = segments[s];
                let off = hd * dh;
                let mut p = vec![0.0; len * len];
                for i in 0..len {
                    let qi = &qd[(start + i) * h + off..(start + i) * h + off + dh];
                    for j in 0..len {
                        let kj = &kd[(start + j) * h + off..(start + j) * h + off + dh];
                        p[i * len + j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    let row = p[i * len..(i + 1) * len].to_vec();
                    softmax_row(&row, &mut p[i * len..(i + 1) * len]);
                }
                let mut o = vec![0.0; len * dh];
                for i in 0..len {
                    for j in 0..len {
                        let w = p[i * len + j];
                        let vj = &vd[(start + j) * h + off..(start + j) * h + off + dh];
                        for (oo, vv) in o[i * dh..(i + 1) * dh].iter_mut().zip(vj) {
                            *oo += w * vv;
                        }
                    }
                }
                (p, o)
            });
            let mut out = vec![0.0; t * h];
            let mut probs = Vec::with_capacity(jobs.len());
            for (&(s, hd), (p, o)) in jobs.iter().zip(results) {
                let (start, len) = segments[s];
                for i in 0..len {
                    let dst = (start + i) * h + hd * dh;
                    out[dst..dst + dh].copy_from_slice(&o[i * dh..(i + 1) * dh]);
                }
                probs.push(p);
            }
            (Tensor::matrix(t, h, out)?, probs)
        };
        graph.record(
            "attention",
            out,
            Op::Attention {
                q: q.id,
                k: k.id,
                v: v.id,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            &[q.id, k.id, v.id],
        )
    }
}

/// Gradient contributions of node `id` to its inputs, given its output gradient.
fn backprop(nodes: &[Node], id: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b) => {
            let (at, bt) = (val(*a), val(*b));
            let (m, k) = (at.shape[0], at.shape[1]);
            let n = bt.shape[1];
            let mut out = Vec::with_capacity(2);
            if nodes[*a].requires_grad {
                out.push((*a, matmul_nt_kernel(g, &bt.data, m, n, k)));
            }
            if nodes[*b].requires_grad {
                out.push((*b, matmul_tn_kernel(&at.data, g, m, k, n)));
            }
            out
        }
        Op::Transpose(a) => {
            let (r, c) = (val(*a).shape[0], val(*a).shape[1]);
            vec![(*a, transpose_kernel(g, c, r))]
        }
        Op::Binary(kind, a, b) => match kind {
            Binary::Add => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Binary::Sub => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Binary::Mul => {
                let (at, bt) = (val(*a), val(*b));
                vec![
                    (*a, g.iter().zip(&bt.data).map(|(x, y)| x * y).collect()),
                    (*b, g.iter().zip(&at.data).map(|(x, y)| x * y).collect()),
                ]
            }
        },
        Op::AddBias(x, b) => {
            let n = val(*b).len();
            let mut db = vec![0.0; n];
            for row in g.chunks(n) {
                db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            vec![(*x, g.to_vec()), (*b, db)]
        }
        Op::Scale(x, c) => vec![(*x, g.iter().map(|v| v * c).collect())],
        Op::AddScalar(x) => vec![(*x, g.to_vec())],
        Op::Unary(kind, x) => {
            let xs = &val(*x).data;
            let ys = &node.value.data;
            let d: Vec<f64> = match kind {
                Unary::Relu => g
                    .iter()
                    .zip(xs)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect(),
                Unary::Gelu => g.iter().zip(xs).map(|(gv, &xv)| gv * gelu_grad(xv)).collect(),
                Unary::Exp => g.iter().zip(ys).map(|(gv, yv)| gv * yv).collect(),
                Unary::Log => g.iter().zip(xs).map(|(gv, xv)| gv / xv).collect(),
                Unary::Log1p => g.iter().zip(xs).map(|(gv, xv)| gv / (1.0 + xv)).collect(),
            };
            vec![(*x, d)]
        }
        Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
        Op::SumAxis0(x) => {
            let t = val(*x);
            let n = t.shape[1];
            let mut d = Vec::with_capacity(t.len());
            for _ in 0..t.shape[0] {
                d.extend_from_slice(&g[..n]);
            }
            vec![(*x, d)]
        }
        Op::SoftmaxRows(x) => {
            let n = node.value.shape[1];
            let mut d = vec![0.0; g.len()];
            for ((gr, yr), dr) in g.chunks(n).zip(node.value.data.chunks(n)).zip(d.chunks_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    dr[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![(*x, d)]
        }
        Op::LogSoftmaxRows(x) => {
            let n = node.value.shape[1];
            let mut d = vec![0.0; g.len()];
            for ((gr, yr), dr) in g.chunks(n).zip(node.value.data.chunks(n)).zip(d.chunks_mut(n)) {
                let total: f64 = gr.iter().sum();
                for j in 0..n {
                    dr[j] = gr[j] - yr[j].exp() * total;
                }
            }
            vec![(*x, d)]
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let gm = &val(*gamma).data;
            let n = gm.len();
            let mut dx = vec![0.0; g.len()];
            let mut dgamma = vec![0.0; n];
            let mut dbeta = vec![0.0; n];
            for (i, is) in inv_std.iter().enumerate() {
                let gr = &g[i * n..(i + 1) * n];
                let hr = &xhat[i * n..(i + 1) * n];
                let mut sum_dh = 0.0;
                let mut sum_dh_h = 0.0;
                for j in 0..n {
                    dgamma[j] += gr[j] * hr[j];
                    dbeta[j] += gr[j];
                    let dh = gr[j] * gm[j];
                    sum_dh += dh;
                    sum_dh_h += dh * hr[j];
                }
                let nf = n as f64;
                for j in 0..n {
                    let dh = gr[j] * gm[j];
                    dx[i * n + j] = is / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                }
            }
            vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
        }
        Op::GatherRows { x, idx } => {
            let t = val(*x);
            let c = t.shape[1];
            let mut d = vec![0.0; t.len()];
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    d[i * c + j] += g[r * c + j];
                }
            }
            vec![(*x, d)]
        }
        Op::SliceRows { x, start } => {
            let t = val(*x);
            let c = t.shape[1];
            let mut d = vec![0.0; t.len()];
            d[start * c..start * c + g.len()].copy_from_slice(g);
            vec![(*x, d)]
        }
        Op::ConcatRows(ids) => {
            let mut off = 0;
            ids.iter()
                .map(|&i| {
                    let n = val(i).len();
                    let part = g[off..off + n].to_vec();
                    off += n;
                    (i, part)
                })
                .collect()
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Pick { x, cols } => {
            let t = val(*x);
            let n = t.shape[1];
            let mut d = vec![0.0; t.len()];
            for (i, &c) in cols.iter().enumerate() {
                d[i * n + c] += g[i];
            }
            vec![(*x, d)]
        }
        Op::MaxOverPositions { x, argmax } => {
            let t = val(*x);
            let v = t.shape[1];
            let mut d = vec![0.0; t.len()];
            for (j, &i) in argmax.iter().enumerate() {
                d[i * v + j] += g[j];
            }
            vec![(*x, d)]
        }
        Op::Cosine {
            a,
            b,
            tau,
            a_hat,
            b_hat,
            a_norm,
            b_norm,
        } => {
            let m = a_norm.len();
            let n = b_norm.len();
            let dim = a_hat.len() / m.max(1);
            let gs: Vec<f64> = g.iter().map(|v| v / tau).collect();
            // d(a_hat) = G·b_hat, d(b_hat) = Gᵀ·a_hat, then project out the radial part.
            let mut da = matmul_kernel(&gs, b_hat, m, n, dim);
            let mut db = matmul_tn_kernel(&gs, a_hat, m, n, dim);
            let project = |d: &mut [f64], hat: &[f64], norms: &[f64]| {
                for (i, nrm) in norms.iter().enumerate() {
                    let dr = &mut d[i * dim..(i + 1) * dim];
                    let hr = &hat[i * dim..(i + 1) * dim];
                    let radial: f64 = dr.iter().zip(hr).map(|(x, y)| x * y).sum();
                    for (dv, hv) in dr.iter_mut().zip(hr) {
                        *dv = (*dv - radial * hv) / nrm;
                    }
                }
            };
            project(&mut da, a_hat, a_norm);
            project(&mut db, b_hat, b_norm);
            vec![(*a, da), (*b, db)]
        }
        Op::WeightedLse { x, weights } => {
            let t = val(*x);
            let n = t.shape[1];
            let mut d = vec![0.0; t.len()];
            for (i, &lse) in node.value.data.iter().enumerate() {
                for j in 0..n {
                    let w = weights[i * n + j];
                    if w > 0.0 {
                        d[i * n + j] = g[i] * w * (t.data[i * n + j] - lse).exp();
                    }
                }
            }
            vec![(*x, d)]
        }
        Op::Attention {
            q,
            k,
            v,
            segments,
            heads,
            probs,
        } => {
            let (qd, kd, vd) = (&val(*q).data, &val(*k).data, &val(*v).data);
            let h = val(*q).shape[1];
            let dh = h / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let jobs: Vec<(usize, usize)> = (0..segments.len())
                .flat_map(|s| (0..*heads).map(move |hd| (s, hd)))
                .collect();
            let parts = par::map_range(jobs.len(), |ji| {
                let (s, hd) = jobs[ji];
                let (start, len) = segments[s];
                let off = hd * dh;
                let p = &probs[ji];
                let row = |buf: &[f64], i: usize| -> Vec<f64> {
                    buf[(start + i) * h + off..(start + i) * h + off + dh].to_vec()
                };
                let go: Vec<Vec<f64>> = (0..len).map(|i| row(g, i)).collect();
                let qs: Vec<Vec<f64>> = (0..len).map(|i| row(qd, i)).collect();
                let ks: Vec<Vec<f64>> = (0..len).map(|i| row(kd, i)).collect();
                let vs: Vec<Vec<f64>> = (0..len).map(|i| row(vd, i)).collect();
                let mut dq = vec![vec![0.0; dh]; len];
                let mut dk = vec![vec![0.0; dh]; len];
                let mut dv = vec![vec![0.0; dh]; len];
                for i in 0..len {
                    let pi = &p[i * len..(i + 1) * len];
                    let dp: Vec<f64> = (0..len)
                        .map(|j| go[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum())
                        .collect();
                    let dot: f64 = dp.iter().zip(pi).map(|(a, b)| a * b).sum();
                    for j in 0..len {
                        for c in 0..dh {
                            dv[j][c] += pi[j] * go[i][c];
                        }
                        let ds = pi[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            dq[i][c] += ds * ks[j][c];
                            dk[j][c] += ds * qs[i][c];
                        }
                    }
                }
                (dq, dk, dv)
            });
            let t = val(*q).shape[0];
            let mut dq = vec![0.0; t * h];
            let mut dk = vec![0.0; t * h];
            let mut dv = vec![0.0; t * h];
            for (&(s, hd), (pq, pk, pv)) in jobs.iter().zip(parts) {
                let (start, len) = segments[s];
                for i in 0..len {
                    let dst = (start + i) * h + hd * dh;
                    dq[dst..dst + dh].copy_from_slice(&pq[i]);
                    dk[dst..dst + dh].copy_from_slice(&pk[i]);
                    dv[dst..dst + dh].copy_from_slice(&pv[i]);
                }
            }
            vec![(*q, dq), (*k, dk), (*v, dv)]
        }
    }
}
