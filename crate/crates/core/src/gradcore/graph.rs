//! Computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in creation order, so every node's inputs have smaller
//! ids than the node itself. Walking ids in descending order is therefore a
//! valid reverse topological order, and it is the same order on every run.

use std::collections::HashMap;

use rand::Rng;

use super::matrix::{gemm, Operand};
use super::params::{Gradients, ParamId, ParameterStore};
use super::{GradError, Matrix, SMOOTH_ABS_EPS};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the second operand of `add`/`mul` is stretched to the first one's shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `1 x cols`, repeated down the rows.
    Row,
    /// `rows x 1`, repeated across the columns.
    Col,
    Scalar,
}

impl Broadcast {
    fn resolve(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<Self, GradError> {
        match b {
            _ if a == b => Ok(Broadcast::Same),
            (1, 1) => Ok(Broadcast::Scalar),
            (1, c) if c == a.1 => Ok(Broadcast::Row),
            (r, 1) if r == a.0 => Ok(Broadcast::Col),
            _ => Err(GradError::shape(op, a, b)),
        }
    }

}

/// `f(a, b)` elementwise with `b` broadcast to the shape of `a`.
fn zip_broadcast(a: &Matrix, b: &[f64], bc: Broadcast, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let (rows, cols) = a.shape();
    let a_s = a.as_slice();
    let mut data = Vec::with_capacity(a_s.len());
    match bc {
        Broadcast::Same => data.extend(a_s.iter().zip(b).map(|(&x, &y)| f(x, y))),
        Broadcast::Scalar => data.extend(a_s.iter().map(|&x| f(x, b[0]))),
        Broadcast::Row if cols > 0 => {
            for ar in a_s.chunks_exact(cols) {
                data.extend(ar.iter().zip(b).map(|(&x, &y)| f(x, y)));
            }
        }
        Broadcast::Col if cols > 0 => {
            for (ar, &y) in a_s.chunks_exact(cols).zip(b) {
                data.extend(ar.iter().map(|&x| f(x, y)));
            }
        }
        _ => {}
    }
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Tanh(Var),
    Sigmoid(Var),
    MaskedSoftmax(Var),
    RowNormalize(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    RowDot(Var, Var),
    Affine { x: Var, scale: f64 },
    Sum(Var),
    Mean(Var),
    Gather { table: Var, indices: Vec<usize> },
    Dropout { x: Var, mask: Matrix },
    SmoothAbs(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Matrix,
    },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::MaskedSoftmax(_) => "masked_softmax",
            Op::RowNormalize(_) => "row_normalize",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::RowDot(..) => "row_dot",
            Op::Affine { .. } => "affine",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Gather { .. } => "gather",
            Op::Dropout { .. } => "dropout",
            Op::SmoothAbs(_) => "smooth_abs",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// Records primitives as they are evaluated and differentiates them in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Name of the primitive that produced `v`.
    pub fn op_tag(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.tag()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param => true,
            _ => self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul(a, b) | Op::Add(a, b, _) | Op::Mul(a, b, _) | Op::RowDot(a, b) => {
                vec![*a, *b]
            }
            Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::MaskedSoftmax(x)
            | Op::RowNormalize(x)
            | Op::SliceCols { x, .. }
            | Op::Affine { x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Dropout { x, .. }
            | Op::SmoothAbs(x) => vec![*x],
            Op::ConcatCols(xs) => xs.clone(),
            Op::Gather { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    /// A value that is never differentiated.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    /// A free input whose gradient is tracked (useful for checks on primitives).
    pub fn variable(&mut self, value: Matrix) -> Var {
        let v = self.push(Op::Leaf, value);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Brings a trainable parameter into the graph. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Op::Param, store.value(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// `a + b`; `b` may be a row vector, column vector or scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let bc = Broadcast::resolve("add", self.shape(a), self.shape(b))?;
        let value = self.zip_broadcast(a, b, bc, |x, y| x + y);
        Ok(self.push(Op::Add(a, b, bc), value))
    }

    /// Elementwise `a * b`; `b` may be a row vector, column vector or scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let bc = Broadcast::resolve("mul", self.shape(a), self.shape(b))?;
        let value = self.zip_broadcast(a, b, bc, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b, bc), value))
    }

    fn zip_broadcast(&self, a: Var, b: Var, bc: Broadcast, f: impl Fn(f64, f64) -> f64) -> Matrix {
        zip_broadcast(self.value(a), self.value(b).as_slice(), bc, f)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(x), value)
    }

    /// Softmax along each row over entries where `mask` is nonzero.
    ///
    /// Masked entries are excluded from the normalizer and come out as exact
    /// zeros. A row with no unmasked entry is an error.
    pub fn masked_softmax(&mut self, x: Var, mask: &Matrix) -> Result<Var, GradError> {
        let xv = self.value(x);
        if xv.shape() != mask.shape() {
            return Err(GradError::shape("masked_softmax", xv.shape(), mask.shape()));
        }
        let (rows, cols) = xv.shape();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let xr = xv.row(r);
            let mr = mask.row(r);
            let max = xr
                .iter()
                .zip(mr)
                .filter(|(_, &m)| m != 0.0)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(GradError::FullyMaskedRow { row: r });
            }
            let or = out.row_mut(r);
            let mut total = 0.0;
            for c in 0..cols {
                if mr[c] != 0.0 {
                    let e = (xr[c] - max).exp();
                    or[c] = e;
                    total += e;
                }
            }
            for v in or.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(Op::MaskedSoftmax(x), out))
    }

    /// Divides each row by its sum. Rows must have a nonzero sum.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var, GradError> {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..xv.rows() {
            let s: f64 = xv.row(r).iter().sum();
            if s == 0.0 || !s.is_finite() {
                return Err(GradError::DegenerateRow {
                    op: "row_normalize",
                    row: r,
                });
            }
            out.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
        Ok(self.push(Op::RowNormalize(x), out))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, GradError> {
        let Some(&first) = xs.first() else {
            return Err(GradError::shape("concat_cols", (0, 0), (0, 0)));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.0 != rows {
                return Err(GradError::shape("concat_cols", self.shape(first), s));
            }
            cols += s.1;
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            let orow = out.row_mut(r);
            for &x in xs {
                let xr = self.nodes[x.0].value.row(r);
                orow[off..off + xr.len()].copy_from_slice(xr);
                off += xr.len();
            }
        }
        Ok(self.push(Op::ConcatCols(xs.to_vec()), out))
    }

    /// Columns `start..start + len` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, GradError> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(GradError::shape("slice_cols", xv.shape(), (start, len)));
        }
        let mut out = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        Ok(self.push(Op::SliceCols { x, start }, out))
    }

    /// Dot product of matching rows: `rows x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(GradError::shape("row_dot", av.shape(), bv.shape()));
        }
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect::<Vec<f64>>();
        Ok(self.push(Op::RowDot(a, b), Matrix::column(&data)))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(Op::Affine { x, scale }, value)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Matrix::scalar(xv.sum() / xv.len().max(1) as f64);
        self.push(Op::Mean(x), value)
    }

    /// Row `indices[r]` of `table` becomes row `r` of the output.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var, GradError> {
        let tv = self.value(table);
        let mut out = Matrix::zeros(indices.len(), tv.cols());
        for (r, &i) in indices.iter().enumerate() {
            if i >= tv.rows() {
                return Err(GradError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    bound: tv.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(tv.row(i));
        }
        Ok(self.push(
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            out,
        ))
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales the
    /// survivors by `1 / (1 - rate)`. A rate of 0 returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var, GradError> {
        if rate == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(GradError::BadArgument {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        let (rows, cols) = self.shape(x);
        let keep = 1.0 / (1.0 - rate);
        let mask_data = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = Matrix::from_vec(rows, cols, mask_data)?;
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with an explicit, already scaled mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Matrix) -> Result<Var, GradError> {
        if mask.shape() != self.shape(x) {
            return Err(GradError::shape("dropout", self.shape(x), mask.shape()));
        }
        let xv = self.value(x);
        let data = xv
            .as_slice()
            .iter()
            .zip(mask.as_slice())
            .map(|(v, m)| v * m)
            .collect();
        let value = Matrix::from_vec(xv.rows(), xv.cols(), data)?;
        Ok(self.push(Op::Dropout { x, mask }, value))
    }

    /// Differentiable surrogate for `|x|`: `sqrt(x^2 + 0.001)`, elementwise.
    pub fn smooth_abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(smooth_abs);
        self.push(Op::SmoothAbs(x), value)
    }

    /// `sum_r weights[r] * -log softmax(logits[r])[targets[r]]`, as a `1 x 1` node.
    ///
    /// Rows with zero weight contribute nothing, which is how padded positions
    /// are dropped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var, GradError> {
        let lv = self.value(logits);
        let (rows, cols) = lv.shape();
        if targets.len() != rows || weights.len() != rows {
            return Err(GradError::shape("cross_entropy", lv.shape(), (targets.len(), weights.len())));
        }
        let mut probs = Matrix::zeros(rows, cols);
        let mut loss = 0.0;
        for r in 0..rows {
            let lr = lv.row(r);
            let max = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = lr.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + z.ln();
            for (p, v) in probs.row_mut(r).iter_mut().zip(lr) {
                *p = (v - log_z).exp();
            }
            if weights[r] != 0.0 {
                let t = targets[r];
                if t >= cols {
                    return Err(GradError::IndexOutOfRange {
                        op: "cross_entropy",
                        index: t,
                        bound: cols,
                    });
                }
                loss += weights[r] * (log_z - lr[t]);
            }
        }
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            Matrix::scalar(loss),
        ))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward_nodes(&self, root: Var) -> Result<NodeGradients, GradError> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(GradError::NonScalarRoot { shape });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(NodeGradients { grads })
    }

    /// Gradients of the scalar `root` with respect to every parameter of `store`.
    ///
    /// Parameters the root does not depend on get an all-zero gradient.
    pub fn backward(&self, root: Var, store: &ParameterStore) -> Result<Gradients, GradError> {
        let node_grads = self.backward_nodes(root)?;
        let mut out = Gradients::zeros_like(store);
        for (&pid, &v) in &self.params {
            if let Some(g) = node_grads.get(v) {
                out.get_mut(pid).add_assign(g);
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let acc = slot(grads, *a, val(*a).shape());
                    gemm(Operand::plain(g), Operand::t(val(*b)), acc, true);
                }
                if wants(*b) {
                    let acc = slot(grads, *b, val(*b).shape());
                    gemm(Operand::t(val(*a)), Operand::plain(g), acc, true);
                }
            }
            Op::Add(a, b, bc) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    let acc = slot(grads, *b, val(*b).shape());
                    reduce_into(acc, g, *bc, |_, gv| gv);
                }
            }
            Op::Mul(a, b, bc) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(grads, *a, zip_broadcast(g, bv.as_slice(), *bc, |x, y| x * y));
                }
                if wants(*b) {
                    let acc = slot(grads, *b, bv.shape());
                    let a_s = av.as_slice();
                    reduce_into(acc, g, *bc, |i, gv| gv * a_s[i]);
                }
            }
            Op::Tanh(x) => {
                let d = zip_broadcast(g, node.value.as_slice(), Broadcast::Same, |gv, y| gv * (1.0 - y * y));
                accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = zip_broadcast(g, node.value.as_slice(), Broadcast::Same, |gv, y| gv * y * (1.0 - y));
                accumulate(grads, *x, d);
            }
            Op::MaskedSoftmax(x) => {
                let y = &node.value;
                let acc = slot(grads, *x, g.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in acc.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::RowNormalize(x) => {
                let xv = val(*x);
                let y = &node.value;
                let acc = slot(grads, *x, g.shape());
                for r in 0..y.rows() {
                    let s: f64 = xv.row(r).iter().sum();
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, gv) in acc.row_mut(r).iter_mut().zip(gr) {
                        *o += (gv - dot) / s;
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let mut off = 0;
                for &x in xs {
                    let w = val(x).cols();
                    if wants(x) {
                        let acc = slot(grads, x, val(x).shape());
                        for r in 0..g.rows() {
                            for (o, gv) in acc.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += gv;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let acc = slot(grads, *x, val(*x).shape());
                for r in 0..g.rows() {
                    let dst = &mut acc.row_mut(r)[*start..*start + g.cols()];
                    for (o, gv) in dst.iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
            }
            Op::RowDot(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if !wants(this) {
                        continue;
                    }
                    let ov = val(other);
                    let acc = slot(grads, this, ov.shape());
                    for r in 0..ov.rows() {
                        let gr = g.get(r, 0);
                        for (o, v) in acc.row_mut(r).iter_mut().zip(ov.row(r)) {
                            *o += gr * v;
                        }
                    }
                }
            }
            Op::Affine { x, scale } => {
                accumulate(grads, *x, g.map(|gv| scale * gv));
            }
            Op::Sum(x) | Op::Mean(x) => {
                let shape = val(*x).shape();
                let scale = if matches!(node.op, Op::Mean(_)) {
                    1.0 / (shape.0 * shape.1).max(1) as f64
                } else {
                    1.0
                };
                let gv = g.item() * scale;
                slot(grads, *x, shape).as_mut_slice().iter_mut().for_each(|o| *o += gv);
            }
            Op::Gather { table, indices } => {
                let acc = slot(grads, *table, val(*table).shape());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, gv) in acc.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                accumulate(grads, *x, zip_broadcast(g, mask.as_slice(), Broadcast::Same, |gv, m| gv * m));
            }
            Op::SmoothAbs(x) => {
                let xs = val(*x).as_slice();
                let ys = node.value.as_slice();
                let acc = slot(grads, *x, g.shape()).as_mut_slice();
                for (i, o) in acc.iter_mut().enumerate() {
                    *o += g.as_slice()[i] * xs[i] / ys[i];
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let gv = g.item();
                let acc = slot(grads, *logits, probs.shape());
                for r in 0..probs.rows() {
                    let w = weights[r];
                    if w == 0.0 {
                        continue;
                    }
                    for (c, (o, p)) in acc.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                        let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                        *o += gv * w * (p - onehot);
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

/// Adds `delta` to the gradient of `v`, taking ownership when it is the first contribution.
fn accumulate(grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&delta),
        empty => *empty = Some(delta),
    }
}

/// Sums `f(flat_index, g)` over the broadcast axes of `g` into `acc`.
fn reduce_into(acc: &mut Matrix, g: &Matrix, bc: Broadcast, f: impl Fn(usize, f64) -> f64) {
    let cols = g.cols();
    if cols == 0 {
        return;
    }
    let a = acc.as_mut_slice();
    for (r, grow) in g.as_slice().chunks_exact(cols).enumerate() {
        let base = r * cols;
        match bc {
            Broadcast::Same => {
                for (c, &gv) in grow.iter().enumerate() {
                    a[base + c] += f(base + c, gv);
                }
            }
            Broadcast::Row => {
                for (c, &gv) in grow.iter().enumerate() {
                    a[c] += f(base + c, gv);
                }
            }
            Broadcast::Col | Broadcast::Scalar => {
                let s: f64 = grow.iter().enumerate().map(|(c, &gv)| f(base + c, gv)).sum();
                a[if bc == Broadcast::Col { r } else { 0 }] += s;
            }
        }
    }
}

/// `sqrt(x^2 + 0.001)`.
pub fn smooth_abs(x: f64) -> f64 {
    (x * x + SMOOTH_ABS_EPS).sqrt()
}

/// Per-node gradients produced by [`Graph::backward_nodes`].
#[derive(Debug)]
pub struct NodeGradients {
    grads: Vec<Option<Matrix>>,
}

impl NodeGradients {
    /// Gradient reaching `v`, or `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_rows(&[[0.0, 0.0, 0.0]]));
        let mask = Matrix::from_rows(&[[1.0, 1.0, 0.0]]);
        let y = g.masked_softmax(x, &mask).unwrap();
        assert_eq!(g.value(y).as_slice(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::zeros(2, 2));
        let mask = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(
            g.masked_softmax(x, &mask),
            Err(GradError::FullyMaskedRow { row: 1 })
        ));
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::zeros(2, 3));
        let y = g.tanh(x);
        assert_eq!(g.value(y), &Matrix::zeros(2, 3));
    }

    #[test]
    fn matmul_forward() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let b = g.constant(Matrix::column(&[1.0, 1.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &Matrix::column(&[3.0, 7.0]));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::zeros(2, 3));
        let b = g.constant(Matrix::zeros(3, 2));
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("2x3") && msg.contains("3x2"), "{msg}");
    }

    #[test]
    fn linear_gradient() {
        let mut store = ParameterStore::new();
        let w = store.insert("w", Matrix::filled(2, 2, 1.0)).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let x = g.constant(Matrix::column(&[1.0, 2.0]));
        // sum(W x) with x as a column: d/dW_rc = x_c
        let y = g.matmul(wv, x).unwrap();
        let root = g.sum(y);
        let grads = g.backward(root, &store).unwrap();
        assert_eq!(grads.get(w), &Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]));
    }

    #[test]
    fn zero_factor_gives_zero_gradient() {
        let mut store = ParameterStore::new();
        let k = store.insert("k", Matrix::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let zero = g.constant(Matrix::scalar(0.0));
        let t = g.tanh(zero);
        let kv = g.param(&store, k);
        let root = g.mul(t, kv).unwrap();
        let grads = g.backward(root, &store).unwrap();
        assert_eq!(grads.get(k).item(), 0.0);
    }

    #[test]
    fn unused_parameter_gradient_is_exactly_zero() {
        let mut store = ParameterStore::new();
        let a = store.insert("a", Matrix::scalar(2.0)).unwrap();
        let b = store.insert("b", Matrix::filled(2, 2, 5.0)).unwrap();
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let _bv = g.param(&store, b);
        let sq = g.mul(av, av).unwrap();
        let grads = g.backward(sq, &store).unwrap();
        assert_eq!(grads.get(a).item(), 4.0);
        assert_eq!(grads.get(b), &Matrix::zeros(2, 2));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Matrix::zeros(2, 1));
        assert!(matches!(g.backward_nodes(x), Err(GradError::NonScalarRoot { .. })));
    }

    #[test]
    fn smooth_abs_values() {
        assert!(close(smooth_abs(0.0), 0.031_622_776_601_683_79, 1e-15));
        assert!(close(smooth_abs(-3.0), 9.001f64.sqrt(), 1e-15));
        let mut g = Graph::new();
        let x = g.variable(Matrix::scalar(0.0));
        let y = g.smooth_abs(x);
        let grads = g.backward_nodes(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.0);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_vocab() {
        let mut g = Graph::new();
        let l = g.constant(Matrix::zeros(3, 4));
        let ce = g.cross_entropy(l, &[0, 1, 3], &[1.0, 1.0, 0.0]).unwrap();
        assert!(close(g.value(ce).item(), 2.0 * 4f64.ln(), 1e-12));
    }

    #[test]
    fn dropout_keeps_expected_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::new();
        let x = g.constant(Matrix::filled(50, 40, 1.0));
        let y = g.dropout(x, 0.5, &mut rng).unwrap();
        let vals = g.value(y).as_slice();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = g.value(y).sum() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn param_node_is_shared() {
        let mut store = ParameterStore::new();
        let a = store.insert("a", Matrix::scalar(1.5)).unwrap();
        let mut g = Graph::new();
        let v1 = g.param(&store, a);
        let v2 = g.param(&store, a);
        assert_eq!(v1, v2);
        let root = g.mul(v1, v2).unwrap();
        let grads = g.backward(root, &store).unwrap();
        assert_eq!(grads.get(a).item(), 3.0);
    }
}
