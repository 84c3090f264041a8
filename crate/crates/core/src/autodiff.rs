//! Tape-based reverse-mode automatic differentiation over small dense
//! matrices.
//!
//! Every value is a rank-2 [`Tensor`] (scalars are `1×1`, vectors are
//! `1×n` rows). Operations are methods on [`Tape`]; an operation records a
//! node only when at least one of its inputs is tracked, so the same model
//! code runs untaped (decoding) or taped (training) depending on whether
//! the parameters were registered with [`Tape::track`].
//!
//! ```
//! use sambr::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.track(&Tensor::scalar(3.0));
//! let y = tape.mul(&x, &x).unwrap();
//! let grads = tape.backward(&y).unwrap();
//! assert_eq!(y.item(), 9.0);
//! assert_eq!(grads.get(&x).unwrap()[0], 6.0);
//! ```
//!
//! Broadcasting is deliberately absent except for [`Tape::scale`]; rows are
//! replicated explicitly with [`Tape::broadcast_rows`].

use std::sync::Arc;

use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-major `rows × cols` matrix of `f64` with an optional tape reference.
///
/// The data buffer is reference counted, so cloning a tensor (and saving
/// it on the tape) is cheap.
#[derive(Debug, Clone)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Arc<[f64]>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension {
                op: "from_vec",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self::raw(rows, cols, data))
    }

    fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Tensor {
            rows,
            cols,
            data: data.into(),
            node: None,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(1, 1, vec![v])
    }

    /// A `1×n` row vector.
    pub fn row(values: &[f64]) -> Self {
        Self::raw(1, values.len(), values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Value of a `1×1` tensor.
    ///
    /// # Panics
    /// If the tensor is not `1×1`.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Copy of the value with the tape reference dropped.
    pub fn detach(&self) -> Tensor {
        Tensor {
            node: None,
            ..self.clone()
        }
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce/normalize down each column (over rows).
    Rows,
    /// Reduce/normalize along each row (over columns).
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Concat(Vec<Tensor>, Axis),
    Slice {
        input: Tensor,
        row0: usize,
        col0: usize,
    },
    Tanh(Tensor),
    Sigmoid(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Softmax(Tensor, Axis),
    LogSoftmax(Tensor, Axis),
    ReduceSum(Tensor),
    ReduceMean(Tensor),
    Scale(Tensor, f64),
    Reshape(Tensor),
    BroadcastRows(Tensor),
    Transpose(Tensor),
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    /// Output value; kept for ops whose derivative is expressed through it.
    output: Option<Arc<[f64]>>,
}

/// Append-only record of tracked operations.
///
/// Node order is topological by construction, and [`Tape::backward`]
/// visits each node once, in reverse append order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradient accumulators produced by a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient accumulated at a tracked tensor's node, if any flowed there.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        t.node.and_then(|id| self.by_node(id))
    }

    pub fn by_node(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn dim_err(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(
            op,
            format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    Ok(())
}

/// Iterate `(start, stride, len)` for each softmax slice along `axis`.
fn slices(rows: usize, cols: usize, axis: Axis) -> impl Iterator<Item = (usize, usize, usize)> {
    let (count, stride, len, step) = match axis {
        Axis::Cols => (rows, 1, cols, cols),
        Axis::Rows => (cols, cols, rows, 1),
    };
    (0..count).map(move |i| (i * step, stride, len))
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a^T b` where `a` is `k×m` and `b` is `k×n`.
fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a b^T` where `a` is `m×k` and `b` is `n×k`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn softmax_into(src: &[f64], out: &mut [f64], rows: usize, cols: usize, axis: Axis, log: bool) {
    for (start, stride, len) in slices(rows, cols, axis) {
        let idx = |j: usize| start + j * stride;
        let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..len).map(|j| (src[idx(j)] - max).exp()).sum();
        if log {
            let lse = max + sum.ln();
            for j in 0..len {
                out[idx(j)] = src[idx(j)] - lse;
            }
        } else {
            for j in 0..len {
                out[idx(j)] = (src[idx(j)] - max).exp() / sum;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a value as a differentiable leaf and return the tracked copy.
    pub fn track(&mut self, t: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf, t.rows, t.cols, None);
        Tensor {
            node: Some(id),
            ..t.clone()
        }
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, output: Option<Arc<[f64]>>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            rows,
            cols,
            output,
        });
        id
    }

    /// Build the output tensor, recording `op` when any input is tracked.
    fn emit(
        &mut self,
        name: &'static str,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        tracked: bool,
        keep_output: bool,
        op: impl FnOnce() -> Op,
    ) -> Result<Tensor> {
        check_finite(name, &data)?;
        let data: Arc<[f64]> = data.into();
        let node = if tracked {
            let output = keep_output.then(|| data.clone());
            Some(self.push(op(), rows, cols, output))
        } else {
            None
        };
        Ok(Tensor {
            rows,
            cols,
            data,
            node,
        })
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(dim_err(
                "matmul",
                format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
            ));
        }
        let out = matmul_raw(&a.data, &b.data, a.rows, a.cols, b.cols);
        let tracked = a.is_tracked() || b.is_tracked();
        self.emit("matmul", a.rows, b.cols, out, tracked, false, || {
            Op::MatMul(a.clone(), b.clone())
        })
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("add", a, b)?;
        let out = a.data.iter().zip(b.data.iter()).map(|(x, y)| x + y).collect();
        let tracked = a.is_tracked() || b.is_tracked();
        self.emit("add", a.rows, a.cols, out, tracked, false, || {
            Op::Add(a.clone(), b.clone())
        })
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("sub", a, b)?;
        let out = a.data.iter().zip(b.data.iter()).map(|(x, y)| x - y).collect();
        let tracked = a.is_tracked() || b.is_tracked();
        self.emit("sub", a.rows, a.cols, out, tracked, false, || {
            Op::Sub(a.clone(), b.clone())
        })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("mul", a, b)?;
        let out = a.data.iter().zip(b.data.iter()).map(|(x, y)| x * y).collect();
        let tracked = a.is_tracked() || b.is_tracked();
        self.emit("mul", a.rows, a.cols, out, tracked, false, || {
            Op::Mul(a.clone(), b.clone())
        })
    }

    pub fn concat(&mut self, parts: &[&Tensor], axis: Axis) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("concat", "no inputs".into()))?;
        let (rows, cols) = match axis {
            Axis::Cols => {
                if parts.iter().any(|p| p.rows != first.rows) {
                    return Err(dim_err("concat", "row counts differ".into()));
                }
                (first.rows, parts.iter().map(|p| p.cols).sum())
            }
            Axis::Rows => {
                if parts.iter().any(|p| p.cols != first.cols) {
                    return Err(dim_err("concat", "column counts differ".into()));
                }
                (parts.iter().map(|p| p.rows).sum(), first.cols)
            }
        };
        let mut out = Vec::with_capacity(rows * cols);
        match axis {
            Axis::Rows => parts.iter().for_each(|p| out.extend_from_slice(&p.data)),
            Axis::Cols => {
                for r in 0..rows {
                    for p in parts {
                        out.extend_from_slice(p.row_slice(r));
                    }
                }
            }
        }
        let tracked = parts.iter().any(|p| p.is_tracked());
        self.emit("concat", rows, cols, out, tracked, false, || {
            Op::Concat(parts.iter().map(|p| (*p).clone()).collect(), axis)
        })
    }

    /// Sub-block `rows × cols` window of `t`.
    pub fn slice(
        &mut self,
        t: &Tensor,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Tensor> {
        if rows.end > t.rows || cols.end > t.cols || rows.is_empty() || cols.is_empty() {
            return Err(dim_err(
                "slice",
                format!("{rows:?},{cols:?} out of {}x{}", t.rows, t.cols),
            ));
        }
        let (nr, nc) = (rows.len(), cols.len());
        let mut out = Vec::with_capacity(nr * nc);
        for r in rows.clone() {
            out.extend_from_slice(&t.row_slice(r)[cols.clone()]);
        }
        self.emit("slice", nr, nc, out, t.is_tracked(), false, || Op::Slice {
            input: t.clone(),
            row0: rows.start,
            col0: cols.start,
        })
    }

    /// Single element `(r, c)` as a `1×1` tensor.
    pub fn pick(&mut self, t: &Tensor, r: usize, c: usize) -> Result<Tensor> {
        self.slice(t, r..r + 1, c..c + 1)
    }

    fn unary(
        &mut self,
        name: &'static str,
        t: &Tensor,
        f: impl Fn(f64) -> f64,
        keep_output: bool,
        op: impl FnOnce(Tensor) -> Op,
    ) -> Result<Tensor> {
        let out = t.data.iter().map(|&x| f(x)).collect();
        self.emit(name, t.rows, t.cols, out, t.is_tracked(), keep_output, || {
            op(t.clone())
        })
    }

    pub fn tanh(&mut self, t: &Tensor) -> Result<Tensor> {
        self.unary("tanh", t, f64::tanh, true, Op::Tanh)
    }

    pub fn sigmoid(&mut self, t: &Tensor) -> Result<Tensor> {
        self.unary("sigmoid", t, |x| 1.0 / (1.0 + (-x).exp()), true, Op::Sigmoid)
    }

    pub fn exp(&mut self, t: &Tensor) -> Result<Tensor> {
        self.unary("exp", t, f64::exp, true, Op::Exp)
    }

    pub fn log(&mut self, t: &Tensor) -> Result<Tensor> {
        self.unary("log", t, f64::ln, false, Op::Log)
    }

    pub fn scale(&mut self, t: &Tensor, factor: f64) -> Result<Tensor> {
        self.unary("scale", t, |x| x * factor, false, |t| Op::Scale(t, factor))
    }

    pub fn softmax(&mut self, t: &Tensor, axis: Axis) -> Result<Tensor> {
        let mut out = vec![0.0; t.len()];
        softmax_into(&t.data, &mut out, t.rows, t.cols, axis, false);
        self.emit("softmax", t.rows, t.cols, out, t.is_tracked(), true, || {
            Op::Softmax(t.clone(), axis)
        })
    }

    /// Fused, max-shifted `log(softmax(t))`.
    pub fn log_softmax(&mut self, t: &Tensor, axis: Axis) -> Result<Tensor> {
        let mut out = vec![0.0; t.len()];
        softmax_into(&t.data, &mut out, t.rows, t.cols, axis, true);
        self.emit("log_softmax", t.rows, t.cols, out, t.is_tracked(), true, || {
            Op::LogSoftmax(t.clone(), axis)
        })
    }

    /// Sum of all elements, `1×1`.
    pub fn reduce_sum(&mut self, t: &Tensor) -> Result<Tensor> {
        let s = t.data.iter().sum();
        self.emit("reduce_sum", 1, 1, vec![s], t.is_tracked(), false, || {
            Op::ReduceSum(t.clone())
        })
    }

    /// Mean of all elements, `1×1`.
    pub fn reduce_mean(&mut self, t: &Tensor) -> Result<Tensor> {
        if t.is_empty() {
            return Err(dim_err("reduce_mean", "empty tensor".into()));
        }
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.emit("reduce_mean", 1, 1, vec![s], t.is_tracked(), false, || {
            Op::ReduceMean(t.clone())
        })
    }

    pub fn reshape(&mut self, t: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
        if rows * cols != t.len() {
            return Err(dim_err(
                "reshape",
                format!("{}x{} into {rows}x{cols}", t.rows, t.cols),
            ));
        }
        self.emit("reshape", rows, cols, t.data.to_vec(), t.is_tracked(), false, || {
            Op::Reshape(t.clone())
        })
    }

    /// Replicate a `1×c` row into an `n×c` matrix.
    pub fn broadcast_rows(&mut self, t: &Tensor, n: usize) -> Result<Tensor> {
        if t.rows != 1 || n == 0 {
            return Err(dim_err(
                "broadcast_rows",
                format!("{}x{} to {n} rows", t.rows, t.cols),
            ));
        }
        let mut out = Vec::with_capacity(n * t.cols);
        for _ in 0..n {
            out.extend_from_slice(&t.data);
        }
        self.emit("broadcast_rows", n, t.cols, out, t.is_tracked(), false, || {
            Op::BroadcastRows(t.clone())
        })
    }

    pub fn transpose(&mut self, t: &Tensor) -> Result<Tensor> {
        let mut out = vec![0.0; t.len()];
        for r in 0..t.rows {
            for c in 0..t.cols {
                out[c * t.rows + r] = t.get(r, c);
            }
        }
        self.emit("transpose", t.cols, t.rows, out, t.is_tracked(), false, || {
            Op::Transpose(t.clone())
        })
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let id = loss
            .node
            .ok_or_else(|| Error::Contract("loss is not on the tape".into()))?;
        self.backward_from(&[(id, vec![1.0])])
    }

    /// Reverse pass seeded with an explicit upstream gradient at `node`.
    ///
    /// Seeding `1.0` at a scalar node is the same as [`Tape::backward`] on it.
    pub fn inject_gradient(&self, node: &Tensor, grad: &Tensor) -> Result<Gradients> {
        self.inject_gradients(&[(node, grad)])
    }

    /// Reverse pass seeded at several nodes at once; seeds are summed.
    pub fn inject_gradients(&self, seeds: &[(&Tensor, &Tensor)]) -> Result<Gradients> {
        let mut raw = Vec::with_capacity(seeds.len());
        for (node, grad) in seeds {
            if node.shape() != grad.shape() {
                return Err(dim_err(
                    "inject_gradient",
                    format!(
                        "seed {}x{} for node {}x{}",
                        grad.rows, grad.cols, node.rows, node.cols
                    ),
                ));
            }
            let id = node
                .node
                .ok_or_else(|| Error::Contract("seed target is not on the tape".into()))?;
            raw.push((id, grad.data.to_vec()));
        }
        self.backward_from(&raw)
    }

    fn backward_from(&self, seeds: &[(NodeId, Vec<f64>)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            if id.0 >= self.nodes.len() {
                return Err(Error::Contract(format!("node {} not on this tape", id.0)));
            }
            accumulate(&mut grads, Some(*id), g);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if a.is_tracked() {
                    let da = matmul_nt(g, &b.data, rows, cols, a.cols);
                    accumulate(grads, a.node, &da);
                }
                if b.is_tracked() {
                    let db = matmul_tn(&a.data, g, a.rows, a.cols, cols);
                    accumulate(grads, b.node, &db);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, a.node, g);
                accumulate(grads, b.node, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, a.node, g);
                if b.is_tracked() {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(grads, b.node, &neg);
                }
            }
            Op::Mul(a, b) => {
                if a.is_tracked() {
                    let da: Vec<f64> = g.iter().zip(b.data.iter()).map(|(x, y)| x * y).collect();
                    accumulate(grads, a.node, &da);
                }
                if b.is_tracked() {
                    let db: Vec<f64> = g.iter().zip(a.data.iter()).map(|(x, y)| x * y).collect();
                    accumulate(grads, b.node, &db);
                }
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for p in parts {
                    let part: Vec<f64> = match axis {
                        Axis::Rows => g[offset * cols..(offset + p.rows) * cols].to_vec(),
                        Axis::Cols => (0..rows)
                            .flat_map(|r| g[r * cols + offset..r * cols + offset + p.cols].iter())
                            .copied()
                            .collect(),
                    };
                    offset += match axis {
                        Axis::Rows => p.rows,
                        Axis::Cols => p.cols,
                    };
                    if p.is_tracked() {
                        accumulate(grads, p.node, &part);
                    }
                }
            }
            Op::Slice { input, row0, col0 } => {
                let mut full = vec![0.0; input.len()];
                for r in 0..rows {
                    let dst = (row0 + r) * input.cols + col0;
                    full[dst..dst + cols].copy_from_slice(&g[r * cols..(r + 1) * cols]);
                }
                accumulate(grads, input.node, &full);
            }
            Op::Tanh(x) => {
                let y = node.output.as_ref().expect("tanh keeps output");
                let d: Vec<f64> = g.iter().zip(y.iter()).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(grads, x.node, &d);
            }
            Op::Sigmoid(x) => {
                let y = node.output.as_ref().expect("sigmoid keeps output");
                let d: Vec<f64> = g.iter().zip(y.iter()).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(grads, x.node, &d);
            }
            Op::Exp(x) => {
                let y = node.output.as_ref().expect("exp keeps output");
                let d: Vec<f64> = g.iter().zip(y.iter()).map(|(g, y)| g * y).collect();
                accumulate(grads, x.node, &d);
            }
            Op::Log(x) => {
                let d: Vec<f64> = g.iter().zip(x.data.iter()).map(|(g, x)| g / x).collect();
                accumulate(grads, x.node, &d);
            }
            Op::Softmax(x, axis) => {
                let y = node.output.as_ref().expect("softmax keeps output");
                let mut d = vec![0.0; g.len()];
                for (start, stride, len) in slices(rows, cols, *axis) {
                    let idx = |j: usize| start + j * stride;
                    let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                    for j in 0..len {
                        d[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                    }
                }
                accumulate(grads, x.node, &d);
            }
            Op::LogSoftmax(x, axis) => {
                let y = node.output.as_ref().expect("log_softmax keeps output");
                let mut d = vec![0.0; g.len()];
                for (start, stride, len) in slices(rows, cols, *axis) {
                    let idx = |j: usize| start + j * stride;
                    let total: f64 = (0..len).map(|j| g[idx(j)]).sum();
                    for j in 0..len {
                        d[idx(j)] = g[idx(j)] - y[idx(j)].exp() * total;
                    }
                }
                accumulate(grads, x.node, &d);
            }
            Op::ReduceSum(x) => {
                accumulate(grads, x.node, &vec![g[0]; x.len()]);
            }
            Op::ReduceMean(x) => {
                accumulate(grads, x.node, &vec![g[0] / x.len() as f64; x.len()]);
            }
            Op::Scale(x, f) => {
                let d: Vec<f64> = g.iter().map(|g| g * f).collect();
                accumulate(grads, x.node, &d);
            }
            Op::Reshape(x) => accumulate(grads, x.node, g),
            Op::BroadcastRows(x) => {
                let mut d = vec![0.0; cols];
                for r in 0..rows {
                    for (acc, v) in d.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                        *acc += v;
                    }
                }
                accumulate(grads, x.node, &d);
            }
            Op::Transpose(x) => {
                // g is cols_x × rows_x laid out as rows × cols of the output.
                let mut d = vec![0.0; g.len()];
                for r in 0..rows {
                    for c in 0..cols {
                        d[c * rows + r] = g[r * cols + c];
                    }
                }
                accumulate(grads, x.node, &d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], node: Option<NodeId>, g: &[f64]) {
    let Some(id) = node else { return };
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}
