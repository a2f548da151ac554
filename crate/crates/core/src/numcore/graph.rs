//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only tape of nodes. Every primitive pushes one
//! node whose inputs are strictly earlier nodes, so node order is already a
//! topological order and the backward sweep simply walks the tape in
//! reverse. Graphs are meant to be rebuilt for every batch.
//!
//! ```
//! use pctl::numcore::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::vector(vec![1.0, 2.0]));
//! let loss = g.dot(x, x).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    L2NormalizeRows(Var),
    LogSumExpRows(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Nll(Var, Vec<usize>),
    Dot(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherCols(Var, Vec<Vec<usize>>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    ReverseGrad(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddBias(a, b) | ScaleBy(a, b)
            | Dot(a, b) => vec![*a, *b],
            Transpose(a) | Scale(a, _) | Exp(a) | Log(a) | Tanh(a) | Relu(a)
            | L2NormalizeRows(a) | LogSumExpRows(a) | SoftmaxRows(a) | LogSoftmaxRows(a)
            | Nll(a, _) | GatherCols(a, _) | Reshape(a) | Sum(a) | Mean(a) | ReverseGrad(a) => {
                vec![*a]
            }
            ConcatCols(vs) | ConcatRows(vs) => vs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only leaves that require grad carry one.
    grad: Option<Vec<f64>>,
}

/// Tape of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    zero_norm_rows: usize,
}

fn row_softmax(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Stabilized `ln Σ exp(x)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Output shape of a row reduction: a vector collapses to a scalar.
fn reduced_rows_shape(shape: &[usize]) -> Vec<usize> {
    match shape {
        [_, _] => vec![shape[0]],
        _ => vec![],
    }
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

    /// Number of zero rows met by [`Graph::l2_normalize_rows`] so far.
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        let n = value.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad: Some(vec![0.0; n]),
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a parameter leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = node_op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        match self.value(a).shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got {:?}", s))),
        }
    }

    fn map(&mut self, op: &'static str, a: Var, f: impl Fn(f64) -> f64, node_op: Op) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push(op, out, node_op)
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node_op: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, out, node_op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push("transpose", Tensor::matrix(n, m, out)?, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a row vector `bias` to every row of the matrix `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("add_bias", a)?;
        let b = self.value(bias);
        if b.len() != n || (b.shape().len() > 1 && b.rows_cols().0 != 1) {
            return Err(Error::shape(
                "add_bias",
                format!("[{m}, {n}] + {:?}", b.shape()),
            ));
        }
        let bd = b.data();
        let data = self
            .value(a)
            .data()
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(bd).map(|(x, y)| x + y))
            .collect();
        self.push("add_bias", Tensor::matrix(m, n, data)?, Op::AddBias(a, bias))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, |x| x * c, Op::Scale(a, c))
    }

    /// Multiplies every element of `a` by the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape(
                "scale_by",
                format!("factor must be scalar, got {:?}", self.value(s).shape()),
            ));
        }
        let c = self.value(s).item();
        self.map("scale_by", a, |x| x * c, Op::ScaleBy(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map("log", a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Divides every row by its L2 norm. A zero row stays zero and bumps
    /// [`Graph::zero_norm_rows`].
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, c) = t.rows_cols();
        let mut out = t.data().to_vec();
        let mut zeros = 0;
        for row in out.chunks_mut(c.max(1)) {
            let n = dot(row, row).sqrt();
            if n == 0.0 {
                zeros += 1;
            } else {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        let shape = t.shape().to_vec();
        self.zero_norm_rows += zeros;
        if zeros > 0 {
            log::warn!("l2_normalize_rows: {zeros} zero row(s) left unnormalized");
        }
        self.push("l2_normalize_rows", Tensor::new(shape, out)?, Op::L2NormalizeRows(a))
    }

    /// Row-wise stabilized log-sum-exp: `[m, n] -> [m]`, `[n] -> []`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().is_empty() || t.rows_cols().1 == 0 {
            return Err(Error::shape("log_sum_exp_rows", format!("{:?}", t.shape())));
        }
        let out: Vec<f64> = t.rows().map(log_sum_exp).collect();
        let shape = reduced_rows_shape(t.shape());
        self.push("log_sum_exp_rows", Tensor::new(shape, out)?, Op::LogSumExpRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, c) = t.rows_cols();
        if t.shape().is_empty() || c == 0 {
            return Err(Error::shape("softmax_rows", format!("{:?}", t.shape())));
        }
        let mut out = vec![0.0; t.len()];
        for (row, o) in t.rows().zip(out.chunks_mut(c)) {
            row_softmax(row, o);
        }
        let shape = t.shape().to_vec();
        self.push("softmax_rows", Tensor::new(shape, out)?, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, c) = t.rows_cols();
        if t.shape().is_empty() || c == 0 {
            return Err(Error::shape("log_softmax_rows", format!("{:?}", t.shape())));
        }
        let mut out = Vec::with_capacity(t.len());
        for row in t.rows() {
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|x| x - lse));
        }
        let shape = t.shape().to_vec();
        self.push("log_softmax_rows", Tensor::new(shape, out)?, Op::LogSoftmaxRows(a))
    }

    /// Negative log-likelihood of `targets` under row-wise log-probabilities:
    /// `[m, c] -> [m]`.
    pub fn nll(&mut self, log_probs: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(log_probs);
        let (m, c) = t.rows_cols();
        if t.shape().is_empty() || targets.len() != m {
            return Err(Error::shape(
                "nll",
                format!("{:?} with {} targets", t.shape(), targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::shape("nll", format!("target {bad} out of {c} classes")));
        }
        let out = t.rows().zip(targets).map(|(row, &y)| -row[y]).collect();
        let shape = reduced_rows_shape(t.shape());
        self.push("nll", Tensor::new(shape, out)?, Op::Nll(log_probs, targets.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::shape("dot", format!("{:?} . {:?}", ta.shape(), tb.shape())));
        }
        let v = dot(ta.data(), tb.data());
        self.push("dot", Tensor::scalar(v), Op::Dot(a, b))
    }

    /// Joins tensors side by side. Vectors concatenate into a vector.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let all_vectors = parts.iter().all(|&v| self.value(v).shape().len() <= 1);
        let rows = self.value(parts[0]).rows_cols().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).rows_cols();
            if r != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {} vs {}", rows, r),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let shape = if all_vectors { vec![total] } else { vec![rows, total] };
        self.push("concat_cols", Tensor::new(shape, out)?, Op::ConcatCols(parts.to_vec()))
    }

    /// Stacks matrices (or vectors, as rows) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let cols = self.value(parts[0]).rows_cols().1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.rows_cols();
            if c != cols {
                return Err(Error::shape("concat_rows", format!("widths {} vs {}", cols, c)));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        self.push("concat_rows", Tensor::matrix(rows, cols, out)?, Op::ConcatRows(parts.to_vec()))
    }

    /// Picks per-row columns: `out[i][j] = a[i][index[i][j]]`. Every row of
    /// `index` must have the same width.
    pub fn gather_cols(&mut self, a: Var, index: Vec<Vec<usize>>) -> Result<Var> {
        let (m, n) = self.matrix_dims("gather_cols", a)?;
        if index.len() != m {
            return Err(Error::shape(
                "gather_cols",
                format!("{} index rows for {} matrix rows", index.len(), m),
            ));
        }
        let w = index.first().map_or(0, Vec::len);
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * w);
        for (i, cols) in index.iter().enumerate() {
            if cols.len() != w {
                return Err(Error::shape("gather_cols", "ragged index rows"));
            }
            for &j in cols {
                if j >= n {
                    return Err(Error::shape("gather_cols", format!("column {j} out of {n}")));
                }
                out.push(src.data()[i * n + j]);
            }
        }
        self.push("gather_cols", Tensor::matrix(m, w, out)?, Op::GatherCols(a, index))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshaped(shape).map_err(|e| match e {
            Error::Shape { detail, .. } => Error::shape("reshape", detail),
            other => other,
        })?;
        self.push("reshape", t, Op::Reshape(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(v), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let v = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(v), Op::Mean(a))
    }

    /// Identity on the forward pass, negated gradient on the backward pass.
    pub fn reverse_grad(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).clone();
        self.push("reverse_grad", t, Op::ReverseGrad(a))
    }

    /// Accumulates `d loss / d leaf` into every parameter leaf reachable from
    /// `loss`. Calling it twice without [`Graph::zero_grad`] adds the
    /// gradients again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let g = self.nodes[idx].grad.as_mut().expect("param leaf carries grad");
                g.iter_mut().zip(&dy).for_each(|(g, d)| *g += d);
                continue;
            }
            for input in node.op.inputs() {
                if input.0 >= idx {
                    return Err(Error::Invariant(format!(
                        "graph cycle: node {idx} reads node {}",
                        input.0
                    )));
                }
            }
            for (input, grad) in self.local_grads(idx, &dy)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match adj[input.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    None => adj[input.0] = Some(grad),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` with upstream gradient `dy`.
    fn local_grads(&self, idx: usize, dy: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let val = |v: Var| self.value(v);
        let grads = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).rows_cols();
                let n = val(*b).rows_cols().1;
                let (ad, bd) = (val(*a).data(), val(*b).data());
                // dA = dY B^T, dB = A^T dY
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += dy[i * n + j] * bd[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += aip * dy[i * n + j];
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => {
                let (m, n) = val(*a).rows_cols();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = dy[j * m + i];
                    }
                }
                vec![(*a, da)]
            }
            Op::Add(a, b) => vec![(*a, dy.to_vec()), (*b, dy.to_vec())],
            Op::Sub(a, b) => vec![(*a, dy.to_vec()), (*b, dy.iter().map(|d| -d).collect())],
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                vec![
                    (*a, dy.iter().zip(bd).map(|(d, x)| d * x).collect()),
                    (*b, dy.iter().zip(ad).map(|(d, x)| d * x).collect()),
                ]
            }
            Op::AddBias(a, bias) => {
                let n = val(*bias).len();
                let mut db = vec![0.0; n];
                for row in dy.chunks(n.max(1)) {
                    db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
                vec![(*a, dy.to_vec()), (*bias, db)]
            }
            Op::Scale(a, c) => vec![(*a, dy.iter().map(|d| d * c).collect())],
            Op::ScaleBy(a, s) => {
                let c = val(*s).item();
                let ds = dot(dy, val(*a).data());
                vec![(*a, dy.iter().map(|d| d * c).collect()), (*s, vec![ds])]
            }
            Op::Exp(a) => vec![(*a, dy.iter().zip(y).map(|(d, e)| d * e).collect())],
            Op::Log(a) => vec![(*a, dy.iter().zip(val(*a).data()).map(|(d, x)| d / x).collect())],
            Op::Tanh(a) => vec![(*a, dy.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect())],
            Op::Relu(a) => vec![(
                *a,
                dy.iter()
                    .zip(val(*a).data())
                    .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                    .collect(),
            )],
            Op::L2NormalizeRows(a) => {
                let x = val(*a);
                let c = x.rows_cols().1.max(1);
                let mut dx = vec![0.0; x.len()];
                for ((xr, yr), (dyr, dxr)) in x
                    .data()
                    .chunks(c)
                    .zip(y.chunks(c))
                    .zip(dy.chunks(c).zip(dx.chunks_mut(c)))
                {
                    let n = dot(xr, xr).sqrt();
                    if n == 0.0 {
                        continue;
                    }
                    let proj = dot(yr, dyr);
                    for ((o, &g), &u) in dxr.iter_mut().zip(dyr).zip(yr) {
                        *o = (g - u * proj) / n;
                    }
                }
                vec![(*a, dx)]
            }
            Op::LogSumExpRows(a) => {
                let x = val(*a);
                let c = x.rows_cols().1;
                let mut dx = vec![0.0; x.len()];
                for ((row, out), &d) in x.rows().zip(dx.chunks_mut(c)).zip(dy) {
                    row_softmax(row, out);
                    out.iter_mut().for_each(|o| *o *= d);
                }
                vec![(*a, dx)]
            }
            Op::SoftmaxRows(a) => {
                let c = val(*a).rows_cols().1;
                let mut dx = vec![0.0; y.len()];
                for ((s, g), out) in y.chunks(c).zip(dy.chunks(c)).zip(dx.chunks_mut(c)) {
                    let inner = dot(s, g);
                    for ((o, &si), &gi) in out.iter_mut().zip(s).zip(g) {
                        *o = si * (gi - inner);
                    }
                }
                vec![(*a, dx)]
            }
            Op::LogSoftmaxRows(a) => {
                let c = val(*a).rows_cols().1;
                let mut dx = vec![0.0; y.len()];
                for ((ls, g), out) in y.chunks(c).zip(dy.chunks(c)).zip(dx.chunks_mut(c)) {
                    let total: f64 = g.iter().sum();
                    for ((o, &l), &gi) in out.iter_mut().zip(ls).zip(g) {
                        *o = gi - l.exp() * total;
                    }
                }
                vec![(*a, dx)]
            }
            Op::Nll(a, targets) => {
                let c = val(*a).rows_cols().1;
                let mut dx = vec![0.0; val(*a).len()];
                for (i, (&t, &d)) in targets.iter().zip(dy).enumerate() {
                    dx[i * c + t] = -d;
                }
                vec![(*a, dx)]
            }
            Op::Dot(a, b) => {
                let d = dy[0];
                vec![
                    (*a, val(*b).data().iter().map(|x| d * x).collect()),
                    (*b, val(*a).data().iter().map(|x| d * x).collect()),
                ]
            }
            Op::ConcatCols(parts) => {
                let total = node.value.rows_cols().1;
                let mut offset = 0;
                let mut grads = Vec::with_capacity(parts.len());
                for &p in parts {
                    let (r, c) = val(p).rows_cols();
                    let mut g = Vec::with_capacity(r * c);
                    for i in 0..r {
                        g.extend_from_slice(&dy[i * total + offset..i * total + offset + c]);
                    }
                    offset += c;
                    grads.push((p, g));
                }
                grads
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(parts.len());
                for &p in parts {
                    let n = val(p).len();
                    grads.push((p, dy[offset..offset + n].to_vec()));
                    offset += n;
                }
                grads
            }
            Op::GatherCols(a, index) => {
                let n = val(*a).rows_cols().1;
                let mut dx = vec![0.0; val(*a).len()];
                let mut k = 0;
                for (i, cols) in index.iter().enumerate() {
                    for &j in cols {
                        dx[i * n + j] += dy[k];
                        k += 1;
                    }
                }
                vec![(*a, dx)]
            }
            Op::Reshape(a) => vec![(*a, dy.to_vec())],
            Op::Sum(a) => vec![(*a, vec![dy[0]; val(*a).len()])],
            Op::Mean(a) => {
                let n = val(*a).len();
                vec![(*a, vec![dy[0] / n as f64; n])]
            }
            Op::ReverseGrad(a) => vec![(*a, dy.iter().map(|d| -d).collect())],
        };
        for (_, g) in &grads {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(grads)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let y = g.l2_normalize_rows(x).unwrap();
        assert!(close(g.value(y).data(), &[0.6, 0.8], 1e-15));
    }

    #[test]
    fn l2_normalize_zero_row_is_flagged() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap());
        let y = g.l2_normalize_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(g.zero_norm_rows(), 1);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(&g.grad(x).unwrap()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn log_sum_exp_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.log_sum_exp_rows(x).unwrap();
        assert_eq!(g.value(y).shape(), &[] as &[usize]);
        assert!((g.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
        let z = g.constant(Tensor::vector(vec![700.0, -700.0, 0.0]));
        let l = g.log_sum_exp_rows(z).unwrap();
        assert!((g.value(l).item() - 700.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let loss = g.dot(x, x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, -3.0]));
        let c = g.constant(Tensor::scalar(5.0));
        let loss = g.scale(c, 2.0).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let loss = g.dot(x, x).unwrap();
        g.backward(loss).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
        g.zero_grad();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("[2, 3]"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0]));
        assert!(matches!(g.log(x), Err(Error::NonFinite { op: "log" })));
        let big = g.constant(Tensor::vector(vec![1000.0]));
        assert!(matches!(g.exp(big), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn nll_of_log_softmax() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_rows(&[vec![3f64.ln(), 0.0]]).unwrap());
        let lp = g.log_softmax_rows(z).unwrap();
        let l = g.nll(lp, &[0]).unwrap();
        assert!((g.value(l).data()[0] + 0.75f64.ln()).abs() < 1e-15);
        assert!(g.nll(lp, &[2]).is_err());
    }

    #[test]
    fn reverse_grad_negates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let r = g.reverse_grad(x).unwrap();
        let loss = g.dot(r, r).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[-2.0, -4.0]);
    }
}
