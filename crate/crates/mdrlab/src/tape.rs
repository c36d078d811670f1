//! Reverse-mode autodiff on an arena tape.
//!
//! Each op appends a [`Node`] holding the op kind, output shape and output
//! buffer; [`ValueId`]s index into the arena. Ops only ever reference earlier
//! nodes, so a single reverse sweep propagates adjoints. `backward` runs once
//! per tape (the tape is consumed) and accumulates parameter gradients into
//! the [`ParamStore`].
//!
//! Supported ranks are 0 (scalar), 1 and 2; matmul is strictly rank-2 and is
//! dispatched to `matrixmultiply::dgemm`. Every op output is scanned for
//! non-finite values so numerical blowups fail loudly at the node that
//! produced them instead of surfacing later as a poisoned loss.

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input { param: Option<ParamId> },
    Matmul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Div { a: ValueId, b: ValueId },
    MinElem { a: ValueId, b: ValueId },
    Scale { a: ValueId, c: f64 },
    AddScalar { a: ValueId },
    Relu { a: ValueId },
    Tanh { a: ValueId },
    Exp { a: ValueId },
    Log { a: ValueId },
    Sqrt { a: ValueId },
    Square { a: ValueId },
    Clamp { a: ValueId, lo: f64, hi: f64 },
    Sum { a: ValueId },
    MeanAll { a: ValueId },
    MeanAxis0 { a: ValueId },
    VarAxis0 { a: ValueId },
    BroadcastRows { a: ValueId, rows: usize },
    BroadcastScalar { a: ValueId },
    Slice { a: ValueId, axis: usize, start: usize, len: usize },
    Concat { a: ValueId, b: ValueId, axis: usize },
    LogSoftmax { a: ValueId },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Numerically stable row-wise log-softmax, shared with
/// `CategoricalDistribution` so tape and plain-data code paths agree bitwise.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &x in row {
        sum += (x - max).exp();
    }
    let lse = max + sum.ln();
    row.iter().map(|&x| x - lse).collect()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar_value(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1, "scalar_value on non-scalar node");
        self.nodes[id.0].data[0]
    }

    fn chk(&self, id: ValueId, op: &'static str) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("{op}: value id {} not on this tape", id.0)));
        }
        Ok(())
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, name: &'static str) -> Result<ValueId> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("op {name} (node {}, element {i})", self.nodes.len()),
            });
        }
        self.nodes.push(Node { op, shape, data });
        Ok(ValueId(self.nodes.len() - 1))
    }

    // ── Inputs ──────────────────────────────────────────────────────────

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: &Tensor) -> ValueId {
        self.nodes.push(Node {
            op: Op::Input { param: None },
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        });
        ValueId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<ValueId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "constant",
                detail: format!("shape {:?} vs {} values", shape, data.len()),
            });
        }
        self.push(Op::Input { param: None }, shape, data, "constant")
    }

    pub fn scalar_const(&mut self, v: f64) -> Result<ValueId> {
        self.push(Op::Input { param: None }, vec![], vec![v], "constant")
    }

    /// Trainable input: gradients accumulate into `store` on `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> ValueId {
        let t = store.get(id);
        self.nodes.push(Node {
            op: Op::Input { param: Some(id) },
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        });
        ValueId(self.nodes.len() - 1)
    }

    // ── Binary elementwise ──────────────────────────────────────────────

    fn binary_map(
        &mut self,
        a: ValueId,
        b: ValueId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(ValueId, ValueId) -> Op,
    ) -> Result<ValueId> {
        self.chk(a, name)?;
        self.chk(b, name)?;
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(op(a, b), shape, data, name)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_map(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_map(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_map(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.chk(b, "div")?;
        if self.nodes[b.0].data.iter().any(|&y| y == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".to_string(),
            });
        }
        self.binary_map(a, b, "div", |x, y| x / y, |a, b| Op::Div { a, b })
    }

    /// Elementwise minimum. Ties route the gradient to the first argument.
    pub fn min_elem(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_map(a, b, "min_elem", f64::min, |a, b| Op::MinElem { a, b })
    }

    // ── Unary ───────────────────────────────────────────────────────────

    fn unary_map(
        &mut self,
        a: ValueId,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: impl Fn(ValueId) -> Op,
    ) -> Result<ValueId> {
        self.chk(a, name)?;
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(op(a), shape, data, name)
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> Result<ValueId> {
        self.unary_map(a, "scale", |x| c * x, |a| Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: ValueId, c: f64) -> Result<ValueId> {
        self.unary_map(a, "add_scalar", |x| x + c, |a| Op::AddScalar { a })
    }

    pub fn relu(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary_map(a, "relu", |x| x.max(0.0), |a| Op::Relu { a })
    }

    pub fn tanh(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary_map(a, "tanh", f64::tanh, |a| Op::Tanh { a })
    }

    pub fn exp(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary_map(a, "exp", f64::exp, |a| Op::Exp { a })
    }

    pub fn log(&mut self, a: ValueId) -> Result<ValueId> {
        self.chk(a, "log")?;
        if let Some(i) = self.nodes[a.0].data.iter().position(|&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("log of non-positive value {} at element {i}", self.nodes[a.0].data[i]),
            });
        }
        self.unary_map(a, "log", f64::ln, |a| Op::Log { a })
    }

    pub fn sqrt(&mut self, a: ValueId) -> Result<ValueId> {
        self.chk(a, "sqrt")?;
        if let Some(i) = self.nodes[a.0].data.iter().position(|&x| x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("sqrt of negative value {} at element {i}", self.nodes[a.0].data[i]),
            });
        }
        self.unary_map(a, "sqrt", f64::sqrt, |a| Op::Sqrt { a })
    }

    pub fn square(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary_map(a, "square", |x| x * x, |a| Op::Square { a })
    }

    /// Clamp to `[lo, hi]`. Gradient passes through wherever the input lies
    /// inside the interval (inclusive) and is zero where it was clipped.
    pub fn clamp(&mut self, a: ValueId, lo: f64, hi: f64) -> Result<ValueId> {
        if !(lo <= hi) {
            return Err(Error::Domain {
                op: "clamp",
                detail: format!("lo {lo} > hi {hi}"),
            });
        }
        self.unary_map(a, "clamp", |x| x.clamp(lo, hi), |a| Op::Clamp { a, lo, hi })
    }

    // ── Reductions ──────────────────────────────────────────────────────

    pub fn sum(&mut self, a: ValueId) -> Result<ValueId> {
        self.chk(a, "sum")?;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(Op::Sum { a }, vec![], vec![s], "sum")
    }

    pub fn mean_all(&mut self, a: ValueId) -> Result<ValueId> {
        self.chk(a, "mean_all")?;
        let n = self.nodes[a.0].data.len();
        if n == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_all",
                detail: "mean of empty tensor".to_string(),
            });
        }
        let s: f64 = self.nodes[a.0].data.iter().sum::<f64>() / n as f64;
        self.push(Op::MeanAll { a }, vec![], vec![s], "mean_all")
    }

    fn rows_cols(&self, a: ValueId, op: &'static str) -> Result<(usize, usize)> {
        let shape = &self.nodes[a.0].shape;
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("expected rank 2, got {:?}", shape),
            });
        }
        Ok((shape[0], shape[1]))
    }

    /// Column means of a rank-2 input: `(m, n) -> (n)`.
    pub fn mean_axis0(&mut self, a: ValueId) -> Result<ValueId> {
        self.chk(a, "mean_axis0")?;
        let (m, n) = self.rows_cols(a, "mean_axis0")?;
        if m == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_axis0",
                detail: "zero rows".to_string(),
            });
        }
        let x = &self.nodes[a.0].data;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += x[i * n + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        self.push(Op::MeanAxis0 { a }, vec![n], out, "mean_axis0")
    }

    /// Biased column variances of a rank-2 input: `(m, n) -> (n)`, divisor m.
    pub fn var_axis0(&mut self, a: ValueId) -> Result<ValueId> {
        self.chk(a, "var_axis0")?;
        let (m, n) = self.rows_cols(a, "var_axis0")?;
        if m == 0 {
            return Err(Error::ShapeMismatch {
                op: "var_axis0",
                detail: "zero rows".to_string(),
            });
        }
        let x = &self.nodes[a.0].data;
        let mut mean = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                mean[j] += x[i * n + j];
            }
        }
        for v in &mut mean {
            *v /= m as f64;
        }
        let mut var = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                let d = x[i * n + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= m as f64;
        }
        self.push(Op::VarAxis0 { a }, vec![n], var, "var_axis0")
    }

    // ── Shape ops ───────────────────────────────────────────────────────

    /// Tile a rank-1 `(n)` input across `rows` rows: `(n) -> (rows, n)`.
    pub fn broadcast_rows(&mut self, a: ValueId, rows: usize) -> Result<ValueId> {
        self.chk(a, "broadcast_rows")?;
        let shape = &self.nodes[a.0].shape;
        if shape.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_rows",
                detail: format!("expected rank 1, got {:?}", shape),
            });
        }
        let n = shape[0];
        let src = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(src);
        }
        self.push(Op::BroadcastRows { a, rows }, vec![rows, n], data, "broadcast_rows")
    }

    /// Broadcast a single-element input to an arbitrary shape.
    pub fn broadcast_scalar(&mut self, a: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        self.chk(a, "broadcast_scalar")?;
        if self.nodes[a.0].data.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_scalar",
                detail: format!("expected scalar, got {:?}", self.nodes[a.0].shape),
            });
        }
        let v = self.nodes[a.0].data[0];
        let numel: usize = shape.iter().product();
        self.push(Op::BroadcastScalar { a }, shape, vec![v; numel], "broadcast_scalar")
    }

    /// Contiguous slice along `axis` (rank 1: axis 0; rank 2: axis 0 or 1).
    pub fn slice(&mut self, a: ValueId, axis: usize, start: usize, len: usize) -> Result<ValueId> {
        self.chk(a, "slice")?;
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len().max(1) || shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("axis {axis} out of range for shape {:?}", shape),
            });
        }
        if start + len > shape[axis] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("range {start}..{} exceeds axis length {}", start + len, shape[axis]),
            });
        }
        let x = &self.nodes[a.0].data;
        let (out_shape, data) = match (shape.len(), axis) {
            (1, 0) => (vec![len], x[start..start + len].to_vec()),
            (2, 0) => {
                let n = shape[1];
                (vec![len, n], x[start * n..(start + len) * n].to_vec())
            }
            (2, 1) => {
                let (m, n) = (shape[0], shape[1]);
                let mut data = Vec::with_capacity(m * len);
                for i in 0..m {
                    data.extend_from_slice(&x[i * n + start..i * n + start + len]);
                }
                (vec![m, len], data)
            }
            _ => unreachable!(),
        };
        self.push(Op::Slice { a, axis, start, len }, out_shape, data, "slice")
    }

    /// Concatenate along `axis`; the other dimension must agree.
    pub fn concat(&mut self, a: ValueId, b: ValueId, axis: usize) -> Result<ValueId> {
        self.chk(a, "concat")?;
        self.chk(b, "concat")?;
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != sb.len() || sa.is_empty() || axis >= sa.len() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: format!("shapes {:?} and {:?}, axis {axis}", sa, sb),
            });
        }
        for d in 0..sa.len() {
            if d != axis && sa[d] != sb[d] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    detail: format!("shapes {:?} and {:?} differ off axis {axis}", sa, sb),
                });
            }
        }
        let xa = &self.nodes[a.0].data;
        let xb = &self.nodes[b.0].data;
        let (out_shape, data) = match (sa.len(), axis) {
            (1, 0) => {
                let mut d = xa.clone();
                d.extend_from_slice(xb);
                (vec![sa[0] + sb[0]], d)
            }
            (2, 0) => {
                let mut d = xa.clone();
                d.extend_from_slice(xb);
                (vec![sa[0] + sb[0], sa[1]], d)
            }
            (2, 1) => {
                let (m, na, nb) = (sa[0], sa[1], sb[1]);
                let mut d = Vec::with_capacity(m * (na + nb));
                for i in 0..m {
                    d.extend_from_slice(&xa[i * na..(i + 1) * na]);
                    d.extend_from_slice(&xb[i * nb..(i + 1) * nb]);
                }
                (vec![m, na + nb], d)
            }
            _ => unreachable!(),
        };
        self.push(Op::Concat { a, b, axis }, out_shape, data, "concat")
    }

    // ── Matmul and log-softmax ──────────────────────────────────────────

    /// `(m, k) x (k, n) -> (m, n)` via dgemm.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.chk(a, "matmul")?;
        self.chk(b, "matmul")?;
        let (m, ka) = self.rows_cols(a, "matmul")?;
        let (kb, n) = self.rows_cols(b, "matmul")?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims {ka} vs {kb}"),
            });
        }
        let mut out = vec![0.0; m * n];
        dgemm_rowmajor(m, ka, n, &self.nodes[a.0].data, false, &self.nodes[b.0].data, false, 0.0, &mut out);
        self.push(Op::Matmul { a, b }, vec![m, n], out, "matmul")
    }

    /// Row-wise log-softmax of a rank-2 input.
    pub fn log_softmax(&mut self, a: ValueId) -> Result<ValueId> {
        self.chk(a, "log_softmax")?;
        let (m, n) = self.rows_cols(a, "log_softmax")?;
        let x = &self.nodes[a.0].data;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend_from_slice(&log_softmax_row(&x[i * n..(i + 1) * n]));
        }
        self.push(Op::LogSoftmax { a }, vec![m, n], out, "log_softmax")
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `root`; parameter gradients accumulate
    /// into `store`. Consumes the tape: a second call is an error.
    pub fn backward(&mut self, root: ValueId, store: &mut ParamStore) -> Result<()> {
        self.chk(root, "backward")?;
        if self.consumed {
            return Err(Error::Tape("backward called twice on the same tape".to_string()));
        }
        if self.nodes[root.0].data.len() != 1 {
            return Err(Error::Tape(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        self.consumed = true;

        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            match self.nodes[i].op.clone() {
                Op::Input { param } => {
                    if let Some(pid) = param {
                        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                            return Err(Error::NonFinite {
                                context: format!("gradient of parameter {} (element {j})", pid.0),
                            });
                        }
                        store.get_mut(pid).accumulate_grad(&g);
                    }
                }
                Op::Matmul { a, b } => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let nn = self.nodes[b.0].shape[1];
                    {
                        let ga = ensure(&mut grads[a.0], m * k);
                        dgemm_rowmajor(m, nn, k, &g, false, &self.nodes[b.0].data, true, 1.0, ga);
                    }
                    {
                        let gb = ensure(&mut grads[b.0], k * nn);
                        dgemm_rowmajor(k, m, nn, &self.nodes[a.0].data, true, &g, false, 1.0, gb);
                    }
                }
                Op::Add { a, b } => {
                    axpy(ensure(&mut grads[a.0], g.len()), &g, 1.0);
                    axpy(ensure(&mut grads[b.0], g.len()), &g, 1.0);
                }
                Op::Sub { a, b } => {
                    axpy(ensure(&mut grads[a.0], g.len()), &g, 1.0);
                    axpy(ensure(&mut grads[b.0], g.len()), &g, -1.0);
                }
                Op::Mul { a, b } => {
                    {
                        let xb = self.nodes[b.0].data.clone();
                        let ga = ensure(&mut grads[a.0], g.len());
                        for j in 0..g.len() {
                            ga[j] += g[j] * xb[j];
                        }
                    }
                    let xa = self.nodes[a.0].data.clone();
                    let gb = ensure(&mut grads[b.0], g.len());
                    for j in 0..g.len() {
                        gb[j] += g[j] * xa[j];
                    }
                }
                Op::Div { a, b } => {
                    let xa = self.nodes[a.0].data.clone();
                    let xb = self.nodes[b.0].data.clone();
                    {
                        let ga = ensure(&mut grads[a.0], g.len());
                        for j in 0..g.len() {
                            ga[j] += g[j] / xb[j];
                        }
                    }
                    let gb = ensure(&mut grads[b.0], g.len());
                    for j in 0..g.len() {
                        gb[j] -= g[j] * xa[j] / (xb[j] * xb[j]);
                    }
                }
                Op::MinElem { a, b } => {
                    let xa = self.nodes[a.0].data.clone();
                    let xb = self.nodes[b.0].data.clone();
                    {
                        let ga = ensure(&mut grads[a.0], g.len());
                        for j in 0..g.len() {
                            if xa[j] <= xb[j] {
                                ga[j] += g[j];
                            }
                        }
                    }
                    let gb = ensure(&mut grads[b.0], g.len());
                    for j in 0..g.len() {
                        if xa[j] > xb[j] {
                            gb[j] += g[j];
                        }
                    }
                }
                Op::Scale { a, c } => {
                    axpy(ensure(&mut grads[a.0], g.len()), &g, c);
                }
                Op::AddScalar { a } => {
                    axpy(ensure(&mut grads[a.0], g.len()), &g, 1.0);
                }
                Op::Relu { a } => {
                    let x = self.nodes[a.0].data.clone();
                    let ga = ensure(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        if x[j] > 0.0 {
                            ga[j] += g[j];
                        }
                    }
                }
                Op::Tanh { a } => {
                    let y = self.nodes[i].data.clone();
                    let ga = ensure(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Exp { a } => {
                    let y = self.nodes[i].data.clone();
                    let ga = ensure(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * y[j];
                    }
                }
                Op::Log { a } => {
                    let x = self.nodes[a.0].data.clone();
                    let ga = ensure(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] / x[j];
                    }
                }
                Op::Sqrt { a } => {
                    let y = self.nodes[i].data.clone();
                    let ga = ensure(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] / (2.0 * y[j]);
                    }
                }
                Op::Square { a } => {
                    let x = self.nodes[a.0].data.clone();
                    let ga = ensure(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += 2.0 * x[j] * g[j];
                    }
                }
                Op::Clamp { a, lo, hi } => {
                    let x = self.nodes[a.0].data.clone();
                    let ga = ensure(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        if x[j] >= lo && x[j] <= hi {
                            ga[j] += g[j];
                        }
                    }
                }
                Op::Sum { a } => {
                    let ga = ensure(&mut grads[a.0], self.nodes[a.0].data.len());
                    for v in ga.iter_mut() {
                        *v += g[0];
                    }
                }
                Op::MeanAll { a } => {
                    let count = self.nodes[a.0].data.len();
                    let ga = ensure(&mut grads[a.0], count);
                    let w = g[0] / count as f64;
                    for v in ga.iter_mut() {
                        *v += w;
                    }
                }
                Op::MeanAxis0 { a } => {
                    let (m, cols) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let ga = ensure(&mut grads[a.0], m * cols);
                    for r in 0..m {
                        for j in 0..cols {
                            ga[r * cols + j] += g[j] / m as f64;
                        }
                    }
                }
                Op::VarAxis0 { a } => {
                    // d var_j / d x_ij = (2/m)(x_ij - mu_j); the mean term
                    // cancels because centered residuals sum to zero.
                    let (m, cols) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let x = self.nodes[a.0].data.clone();
                    let mut mu = vec![0.0; cols];
                    for r in 0..m {
                        for j in 0..cols {
                            mu[j] += x[r * cols + j];
                        }
                    }
                    for v in &mut mu {
                        *v /= m as f64;
                    }
                    let ga = ensure(&mut grads[a.0], m * cols);
                    for r in 0..m {
                        for j in 0..cols {
                            ga[r * cols + j] += g[j] * 2.0 * (x[r * cols + j] - mu[j]) / m as f64;
                        }
                    }
                }
                Op::BroadcastRows { a, rows } => {
                    let cols = self.nodes[a.0].shape[0];
                    let ga = ensure(&mut grads[a.0], cols);
                    for r in 0..rows {
                        for j in 0..cols {
                            ga[j] += g[r * cols + j];
                        }
                    }
                }
                Op::BroadcastScalar { a } => {
                    let ga = ensure(&mut grads[a.0], 1);
                    ga[0] += g.iter().sum::<f64>();
                }
                Op::Slice { a, axis, start, len } => {
                    let shape = self.nodes[a.0].shape.clone();
                    let ga = ensure(&mut grads[a.0], self.nodes[a.0].data.len());
                    match (shape.len(), axis) {
                        (1, 0) => axpy(&mut ga[start..start + len], &g, 1.0),
                        (2, 0) => {
                            let cols = shape[1];
                            axpy(&mut ga[start * cols..(start + len) * cols], &g, 1.0);
                        }
                        (2, 1) => {
                            let (m, cols) = (shape[0], shape[1]);
                            for r in 0..m {
                                for j in 0..len {
                                    ga[r * cols + start + j] += g[r * len + j];
                                }
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                Op::Concat { a, b, axis } => {
                    let sa = self.nodes[a.0].shape.clone();
                    let sb = self.nodes[b.0].shape.clone();
                    match (sa.len(), axis) {
                        (1, 0) | (2, 0) => {
                            let na = self.nodes[a.0].data.len();
                            axpy(ensure(&mut grads[a.0], na), &g[..na], 1.0);
                            let nb = self.nodes[b.0].data.len();
                            axpy(ensure(&mut grads[b.0], nb), &g[na..], 1.0);
                        }
                        (2, 1) => {
                            let (m, na, nb) = (sa[0], sa[1], sb[1]);
                            {
                                let ga = ensure(&mut grads[a.0], m * na);
                                for r in 0..m {
                                    for j in 0..na {
                                        ga[r * na + j] += g[r * (na + nb) + j];
                                    }
                                }
                            }
                            let gb = ensure(&mut grads[b.0], m * nb);
                            for r in 0..m {
                                for j in 0..nb {
                                    gb[r * nb + j] += g[r * (na + nb) + na + j];
                                }
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                Op::LogSoftmax { a } => {
                    // gx = g - softmax * rowsum(g), with softmax = exp(y)
                    let (m, cols) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let y = self.nodes[i].data.clone();
                    let ga = ensure(&mut grads[a.0], m * cols);
                    for r in 0..m {
                        let row_sum: f64 = g[r * cols..(r + 1) * cols].iter().sum();
                        for j in 0..cols {
                            let idx = r * cols + j;
                            ga[idx] += g[idx] - y[idx].exp() * row_sum;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn ensure(slot: &mut Option<Vec<f64>>, n: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; n])
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Row-major `C = alpha*A*B + beta*C` with optional logical transposes.
/// `m, k, n` are the dimensions of the logical (possibly transposed) product.
fn dgemm_rowmajor(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // Safety: slice lengths are checked by callers against the shapes above;
    // strides describe valid row-major (or transposed) layouts of a and b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
