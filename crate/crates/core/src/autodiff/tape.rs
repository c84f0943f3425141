//! Dynamic tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the ids of its
//! inputs. [`Tape::backward`] walks the nodes in reverse insertion order, which
//! is a reverse topological order because inputs always precede outputs.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geometry::wrap_unchecked;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Abs(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    LogSumExp(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Transpose(Var),
    WrapPassthrough(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients for every parameter of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients(
            store
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        )
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.index()]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.0
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Add `scale * other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numerical { op: name.to_string() });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(name: &str, a: &Tensor, b: &Tensor) -> Error {
        Error::contract(format!(
            "{name}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        ))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant, false)
    }

    /// Record a parameter leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push("param", store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Self::shape_err("matmul", ta, tb));
        }
        let out = ta.matmul(tb);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::MatMul(a, b), ng)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err(name, ta, tb));
        }
        let out = ta.zip_map(tb, f);
        let ng = self.needs(a) || self.needs(b);
        self.push(name, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x (n x m) + bias (1 x m)` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(Self::shape_err("add_bias", tx, tb));
        }
        let mut out = tx.clone();
        let m = tx.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % m];
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push("add_bias", out, Op::AddBias(x, bias), ng)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(x).map(f);
        let ng = self.needs(x);
        self.push(name, out, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * s, Op::Scale(x, s))
    }

    /// Add a constant to every element.
    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("shift", x, |v| v + c, Op::Shift(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, f64::abs, Op::Abs(x))
    }

    /// `max(x, 0)`.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary("sin", x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary("cos", x, f64::cos, Op::Cos(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    /// Square root; the backward pass uses a zero subgradient at exactly 0.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let ng = self.needs(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let m = t.sum() / t.len() as f64;
        let ng = self.needs(x);
        self.push("mean", Tensor::scalar(m), Op::Mean(x), ng)
    }

    /// Per-row sums, `n x m -> n x 1`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::column((0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect());
        let ng = self.needs(x);
        self.push("row_sum", out, Op::RowSum(x), ng)
    }

    /// Max-shifted log-sum-exp of every row, `n x m -> n x 1`.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.cols() == 0 {
            return Err(Error::contract("logsumexp over empty rows"));
        }
        let out = Tensor::column(
            (0..t.rows())
                .map(|r| {
                    let row = t.row_slice(r);
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
                })
                .collect(),
        );
        let ng = self.needs(x);
        self.push("logsumexp", out, Op::LogSumExp(x), ng)
    }

    /// Concatenate along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(v) => self.value(*v).rows(),
            None => return Err(Error::contract("concat of nothing")),
        };
        if parts.iter().any(|v| self.value(*v).rows() != rows) {
            return Err(Error::contract("concat: row counts differ"));
        }
        let cols: usize = parts.iter().map(|v| self.value(*v).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in parts {
                data.extend_from_slice(self.value(*v).row_slice(r));
            }
        }
        let ng = parts.iter().any(|v| self.needs(*v));
        self.push("concat", Tensor::new(rows, cols, data)?, Op::Concat(parts.to_vec()), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start >= end || end > t.cols() {
            return Err(Error::contract(format!(
                "slice_cols: range {start}..{end} invalid for {} columns",
                t.cols()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let out = Tensor::new(t.rows(), end - start, data)?;
        let ng = self.needs(x);
        self.push("slice_cols", out, Op::SliceCols(x, start), ng)
    }

    /// Select rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::contract(format!(
                "gather_rows: index {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(idx.len(), t.cols(), data)?;
        let ng = self.needs(x);
        self.push("gather_rows", out, Op::GatherRows(x, idx.to_vec()), ng)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x);
        if rows * cols != t.len() {
            return Err(Error::contract(format!(
                "reshape: {:?} cannot become [{rows}, {cols}]",
                t.shape()
            )));
        }
        let out = t.clone().reshaped(rows, cols);
        let ng = self.needs(x);
        self.push("reshape", out, Op::Reshape(x), ng)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose();
        let ng = self.needs(x);
        self.push("transpose", out, Op::Transpose(x), ng)
    }

    /// Wrap column `c` into `[0, k_c)` where `moduli[c] = Some(k_c)`; other
    /// columns pass through. The gradient is the identity everywhere.
    pub fn wrap_passthrough(&mut self, x: Var, moduli: &[Option<f64>]) -> Result<Var> {
        let t = self.value(x);
        if moduli.len() != t.cols() {
            return Err(Error::contract(format!(
                "wrap_passthrough: {} moduli for {} columns",
                moduli.len(),
                t.cols()
            )));
        }
        let mut out = t.clone();
        let cols = t.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if let Some(k) = moduli[i % cols] {
                *v = wrap_unchecked(*v, k);
            }
        }
        let ng = self.needs(x);
        self.push("wrap_passthrough", out, Op::WrapPassthrough(x), ng)
    }

    /// Gradients of the scalar `root` with respect to every parameter in `store`.
    /// Parameters absent from the tape get zero gradients.
    pub fn backward(&self, root: Var, store: &ParamStore) -> Result<Gradients> {
        let rt = self.value(root);
        if !rt.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                rt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::zeros_like(store);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.tensors_mut()[id.index()].add_assign(g),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    acc(*a, g.matmul_t(tb));
                }
                if self.needs(*b) {
                    acc(*b, ta.t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(tb, |gv, bv| gv * bv));
                acc(*b, g.zip_map(ta, |gv, av| gv * av));
            }
            Op::AddBias(x, bias) => {
                acc(*x, g.clone());
                let m = g.cols();
                let mut gb = vec![0.0; m];
                for (i, v) in g.data().iter().enumerate() {
                    gb[i % m] += v;
                }
                acc(*bias, Tensor::row(gb));
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Shift(x) => acc(*x, g.clone()),
            Op::Tanh(x) => acc(*x, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))),
            Op::Abs(x) => {
                let tx = self.value(*x);
                acc(*x, g.zip_map(tx, |gv, xv| gv * sign(xv)));
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                acc(*x, g.zip_map(tx, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Exp(x) => acc(*x, g.zip_map(y, |gv, yv| gv * yv)),
            Op::Log(x) => {
                let tx = self.value(*x);
                acc(*x, g.zip_map(tx, |gv, xv| gv / xv));
            }
            Op::Sin(x) => {
                let tx = self.value(*x);
                acc(*x, g.zip_map(tx, |gv, xv| gv * xv.cos()));
            }
            Op::Cos(x) => {
                let tx = self.value(*x);
                acc(*x, g.zip_map(tx, |gv, xv| -gv * xv.sin()));
            }
            Op::Square(x) => {
                let tx = self.value(*x);
                acc(*x, g.zip_map(tx, |gv, xv| 2.0 * gv * xv));
            }
            Op::Sqrt(x) => acc(*x, g.zip_map(y, |gv, yv| if yv > 0.0 { gv / (2.0 * yv) } else { 0.0 })),
            Op::Sum(x) => {
                let tx = self.value(*x);
                acc(*x, Tensor::filled(tx.rows(), tx.cols(), g.item()));
            }
            Op::Mean(x) => {
                let tx = self.value(*x);
                acc(*x, Tensor::filled(tx.rows(), tx.cols(), g.item() / tx.len() as f64));
            }
            Op::RowSum(x) => {
                let tx = self.value(*x);
                let cols = tx.cols();
                let data = (0..tx.len()).map(|i| g.data()[i / cols]).collect();
                acc(*x, Tensor::new(tx.rows(), cols, data).expect("shape"));
            }
            Op::LogSumExp(x) => {
                let tx = self.value(*x);
                let cols = tx.cols();
                let data = tx
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| g.data()[i / cols] * (v - y.data()[i / cols]).exp())
                    .collect();
                acc(*x, Tensor::new(tx.rows(), cols, data).expect("shape"));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for v in parts {
                    let cols = self.value(*v).cols();
                    if self.needs(*v) {
                        let mut data = Vec::with_capacity(g.rows() * cols);
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + cols]);
                        }
                        acc(*v, Tensor::new(g.rows(), cols, data).expect("shape"));
                    }
                    offset += cols;
                }
            }
            Op::SliceCols(x, start) => {
                let tx = self.value(*x);
                let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                let w = g.cols();
                let cols = tx.cols();
                for r in 0..g.rows() {
                    gx.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(g.row_slice(r));
                }
                acc(*x, gx);
            }
            Op::GatherRows(x, idx) => {
                let tx = self.value(*x);
                let cols = tx.cols();
                let mut gx = Tensor::zeros(tx.rows(), cols);
                for (k, &i) in idx.iter().enumerate() {
                    let dst = &mut gx.data_mut()[i * cols..(i + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(g.row_slice(k)) {
                        *d += s;
                    }
                }
                acc(*x, gx);
            }
            Op::Reshape(x) => {
                let tx = self.value(*x);
                acc(*x, g.clone().reshaped(tx.rows(), tx.cols()));
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::WrapPassthrough(x) => acc(*x, g.clone()),
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
