//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] owns every node created during one forward pass. Nodes are
//! appended in evaluation order, so the node index is already a topological
//! order and [`Tape::backward`] is a single reverse sweep.
//!
//! Binary element-wise ops (`add`, `sub`, `mul`) accept a right operand that is
//! either the same shape, a `1 x cols` row vector broadcast down the rows, or a
//! `1 x 1` scalar.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The operation kinds a tape can record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    ElementwiseMul,
    MatMul,
    Relu,
    Sigmoid,
    SoftmaxRowwise,
    Mean,
    Sum,
    MseLoss,
    ScalarMul(f64),
    ConcatCols,
    /// `1 x a` and `1 x b` row vectors to the `1 x (a*b)` vector of pairwise
    /// sums, `out[i*b + j] = lhs[i] + rhs[j]`.
    PairSum,
    /// `weights (1 x k)` followed by `k` equally shaped inputs; output is the
    /// weighted sum of the inputs.
    Mix,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Mean(Var),
    Sum(Var),
    Mse(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    PairSum(Var, Var),
    Mix(Var, Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// How a right operand lines up against a left operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

fn broadcast_kind(op: &'static str, lhs: &Matrix, rhs: &Matrix) -> Result<Broadcast> {
    if lhs.shape() == rhs.shape() {
        Ok(Broadcast::Same)
    } else if rhs.shape() == (1, 1) {
        Ok(Broadcast::Scalar)
    } else if rhs.rows() == 1 && rhs.cols() == lhs.cols() {
        Ok(Broadcast::Row)
    } else {
        Err(Error::Shape {
            op,
            lhs: lhs.shape(),
            rhs: rhs.shape(),
        })
    }
}

#[inline]
fn rhs_at(kind: Broadcast, rhs: &[f64], cols: usize, idx: usize) -> f64 {
    match kind {
        Broadcast::Same => rhs[idx],
        Broadcast::Row => rhs[idx % cols],
        Broadcast::Scalar => rhs[0],
    }
}

fn zip_broadcast(
    lhs: &Matrix,
    rhs: &Matrix,
    kind: Broadcast,
    f: impl Fn(f64, f64) -> f64,
) -> Matrix {
    let cols = lhs.cols();
    let r = rhs.as_slice();
    let data = lhs
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &a)| f(a, rhs_at(kind, r, cols, i)))
        .collect();
    Matrix::from_vec(lhs.rows(), lhs.cols(), data).expect("shape preserved")
}

/// Sums `g` (shaped like the left operand) down to the right operand's shape.
fn reduce_to(kind: Broadcast, g: &Matrix, rhs_shape: (usize, usize)) -> Matrix {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Matrix::scalar(g.sum()),
        Broadcast::Row => {
            let mut out = Matrix::zeros(rhs_shape.0, rhs_shape.1);
            for r in 0..g.rows() {
                for (o, &v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            out
        }
    }
}

fn add_into(slot: &mut Option<Matrix>, delta: Matrix) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                *a += d;
            }
        }
        None => *slot = Some(delta),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max-logit subtraction.
pub(crate) fn softmax_rows(x: &Matrix) -> Result<Matrix> {
    if x.cols() == 0 {
        return Err(Error::EmptySoftmaxRow);
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// A single forward pass worth of recorded operations.
#[derive(Clone, Debug, Default)]
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

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    /// Accumulated gradient of a trainable leaf; `None` for constants and
    /// interior nodes.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient, or zeros of the right shape when nothing flowed into `v`.
    pub fn grad_or_zeros(&self, v: Var) -> Matrix {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if node.requires_grad {
                node.grad = None;
            }
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        // Only leaves keep a persistent gradient; interior adjoints live in backward.
        let grad = (requires_grad && matches!(op, Op::Leaf))
            .then(|| Matrix::zeros(value.rows(), value.cols()));
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Generic entry point: evaluates `kind` on `inputs` and records it.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match kind {
            OpKind::Add => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            OpKind::Sub => arity(2).and_then(|_| self.sub(inputs[0], inputs[1])),
            OpKind::ElementwiseMul => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
            OpKind::MatMul => arity(2).and_then(|_| self.matmul(inputs[0], inputs[1])),
            OpKind::Relu => arity(1).map(|_| self.relu(inputs[0])),
            OpKind::Sigmoid => arity(1).map(|_| self.sigmoid(inputs[0])),
            OpKind::SoftmaxRowwise => arity(1).and_then(|_| self.softmax_rowwise(inputs[0])),
            OpKind::Mean => arity(1).and_then(|_| self.mean(inputs[0])),
            OpKind::Sum => arity(1).map(|_| self.sum(inputs[0])),
            OpKind::MseLoss => arity(2).and_then(|_| self.mse_loss(inputs[0], inputs[1])),
            OpKind::ScalarMul(c) => arity(1).map(|_| self.scalar_mul(inputs[0], c)),
            OpKind::ConcatCols => self.concat_cols(inputs),
            OpKind::PairSum => arity(2).and_then(|_| self.pair_sum(inputs[0], inputs[1])),
            OpKind::Mix => match inputs.split_first() {
                Some((w, xs)) => self.mix(*w, xs),
                None => Err(Error::InvalidArgument("mix needs weights".into())),
            },
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let kind = broadcast_kind("add", va, vb)?;
        let out = zip_broadcast(va, vb, kind, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let kind = broadcast_kind("sub", va, vb)?;
        let out = zip_broadcast(va, vb, kind, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let kind = broadcast_kind("elementwise_mul", va, vb)?;
        let out = zip_broadcast(va, vb, kind, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rowwise(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Mean over every element, as a `1 x 1` node.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let out = Matrix::scalar(v.sum() / v.len() as f64);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Mean(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean squared error between two equally shaped nodes.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::Shape {
                op: "mse_loss",
                lhs: p.shape(),
                rhs: t.shape(),
            });
        }
        if p.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let sse: f64 = p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let out = Matrix::scalar(sse / p.len() as f64);
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(out, Op::Mse(pred, target), rg))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_cols of nothing".into()));
        }
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Matrix::hconcat(&mats)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn pair_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != 1 || vb.rows() != 1 {
            return Err(Error::Shape {
                op: "pair_sum",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let mut data = Vec::with_capacity(va.cols() * vb.cols());
        for &x in va.as_slice() {
            data.extend(vb.as_slice().iter().map(|&y| x + y));
        }
        let out = Matrix::row_vector(data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::PairSum(a, b), rg))
    }

    /// `Σ_k weights[k] · inputs[k]`.
    pub fn mix(&mut self, weights: Var, inputs: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.rows() != 1 || w.cols() != inputs.len() || inputs.is_empty() {
            return Err(Error::Shape {
                op: "mix",
                lhs: w.shape(),
                rhs: (1, inputs.len()),
            });
        }
        let shape = self.value(inputs[0]).shape();
        if let Some(bad) = inputs.iter().find(|&&v| self.value(v).shape() != shape) {
            return Err(Error::Shape {
                op: "mix",
                lhs: shape,
                rhs: self.value(*bad).shape(),
            });
        }
        let mut out = Matrix::zeros(shape.0, shape.1);
        for (k, &x) in inputs.iter().enumerate() {
            let wk = w.as_slice()[k];
            for (o, &v) in out.as_mut_slice().iter_mut().zip(self.value(x).as_slice()) {
                *o += wk * v;
            }
        }
        let mut all = vec![weights];
        all.extend_from_slice(inputs);
        let rg = self.any_grad(&all);
        Ok(self.push(out, Op::Mix(weights, inputs.to_vec()), rg))
    }

    /// Propagates d`loss`/d(node) into every node that requires a gradient.
    ///
    /// Gradients accumulate across calls; call [`Tape::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                add_into(&mut self.nodes[i].grad, g);
            } else {
                self.pullback(i, &g, &mut adj);
            }
        }
        Ok(())
    }

    fn pullback(&self, i: usize, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if wants(a) {
                    add_into(&mut adj[a.0], g.clone());
                }
                if wants(b) {
                    let vb = self.value(*b);
                    let kind =
                        broadcast_kind("add", self.value(*a), vb).expect("checked in forward");
                    let mut gb = reduce_to(kind, g, vb.shape());
                    if sign < 0.0 {
                        gb = gb.map(|x| -x);
                    }
                    add_into(&mut adj[b.0], gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let kind = broadcast_kind("elementwise_mul", va, vb).expect("checked in forward");
                if wants(a) {
                    add_into(&mut adj[a.0], zip_broadcast(g, vb, kind, |x, y| x * y));
                }
                if wants(b) {
                    let prod = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice()
                            .iter()
                            .zip(va.as_slice())
                            .map(|(x, y)| x * y)
                            .collect(),
                    )
                    .expect("same shape");
                    add_into(&mut adj[b.0], reduce_to(kind, &prod, vb.shape()));
                }
            }
            Op::MatMul(a, b) => {
                if wants(a) {
                    let ga = g
                        .matmul_transpose_rhs(self.value(*b))
                        .expect("checked in forward");
                    add_into(&mut adj[a.0], ga);
                }
                if wants(b) {
                    let gb = self
                        .value(*a)
                        .transpose_matmul(g)
                        .expect("checked in forward");
                    add_into(&mut adj[b.0], gb);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g
                    .as_slice()
                    .iter()
                    .zip(x.as_slice())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                add_into(
                    &mut adj[a.0],
                    Matrix::from_vec(g.rows(), g.cols(), data).unwrap(),
                );
            }
            Op::Sigmoid(a) => {
                let s = &node.value;
                let data = g
                    .as_slice()
                    .iter()
                    .zip(s.as_slice())
                    .map(|(&gv, &sv)| gv * sv * (1.0 - sv))
                    .collect();
                add_into(
                    &mut adj[a.0],
                    Matrix::from_vec(g.rows(), g.cols(), data).unwrap(),
                );
            }
            Op::Softmax(a) => {
                let s = &node.value;
                let mut out = Matrix::zeros(s.rows(), s.cols());
                for r in 0..s.rows() {
                    let (sr, gr) = (s.row(r), g.row(r));
                    let inner: f64 = sr.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for ((o, &sv), &gv) in out.row_mut(r).iter_mut().zip(sr).zip(gr) {
                        *o = sv * (gv - inner);
                    }
                }
                add_into(&mut adj[a.0], out);
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let each = g.get(0, 0) / v.len() as f64;
                add_into(&mut adj[a.0], Matrix::filled(v.rows(), v.cols(), each));
            }
            Op::Sum(a) => {
                let v = self.value(*a);
                add_into(
                    &mut adj[a.0],
                    Matrix::filled(v.rows(), v.cols(), g.get(0, 0)),
                );
            }
            Op::Mse(p, t) => {
                let (vp, vt) = (self.value(*p), self.value(*t));
                let scale = 2.0 * g.get(0, 0) / vp.len() as f64;
                let dp: Vec<f64> = vp
                    .as_slice()
                    .iter()
                    .zip(vt.as_slice())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                if wants(t) {
                    let dt = dp.iter().map(|x| -x).collect();
                    add_into(
                        &mut adj[t.0],
                        Matrix::from_vec(vt.rows(), vt.cols(), dt).unwrap(),
                    );
                }
                if wants(p) {
                    add_into(
                        &mut adj[p.0],
                        Matrix::from_vec(vp.rows(), vp.cols(), dp).unwrap(),
                    );
                }
            }
            Op::Scale(a, c) => {
                add_into(&mut adj[a.0], g.map(|x| c * x));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for v in parts {
                    let cols = self.value(*v).cols();
                    if wants(v) {
                        let idx: Vec<usize> = (offset..offset + cols).collect();
                        add_into(&mut adj[v.0], g.select_cols(&idx).unwrap());
                    }
                    offset += cols;
                }
            }
            Op::PairSum(a, b) => {
                let (na, nb) = (self.value(*a).cols(), self.value(*b).cols());
                let gs = g.as_slice();
                if wants(a) {
                    let ga = (0..na)
                        .map(|i| gs[i * nb..(i + 1) * nb].iter().sum())
                        .collect();
                    add_into(&mut adj[a.0], Matrix::row_vector(ga));
                }
                if wants(b) {
                    let gb = (0..nb)
                        .map(|j| (0..na).map(|i| gs[i * nb + j]).sum())
                        .collect();
                    add_into(&mut adj[b.0], Matrix::row_vector(gb));
                }
            }
            Op::Mix(w, xs) => {
                let wv = self.value(*w).as_slice();
                if wants(w) {
                    let gw = xs
                        .iter()
                        .map(|x| {
                            self.value(*x)
                                .as_slice()
                                .iter()
                                .zip(g.as_slice())
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    add_into(&mut adj[w.0], Matrix::row_vector(gw));
                }
                for (k, x) in xs.iter().enumerate() {
                    if wants(x) {
                        add_into(&mut adj[x.0], g.map(|v| wv[k] * v));
                    }
                }
            }
        }
    }
}

/// Result of comparing autodiff gradients to central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_parameter_errors: Vec<(String, f64)>,
}

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares autodiff against central finite differences `(f(p+h) − f(p−h)) / 2h`.
///
/// `f` builds a scalar loss on a fresh tape from the parameter vars it is handed
/// (one per entry of `params`, in order).
pub fn finite_diff_check<F>(f: F, params: &[(String, Matrix)], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step h must be positive, got {h}"
        )));
    }
    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.constant(m.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.scalar_value(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite("finite_diff_check objective".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, m)| tape.param(m.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.scalar_value(loss).is_finite() {
        return Err(Error::NonFinite("finite_diff_check objective".into()));
    }
    tape.backward(loss)?;

    let mut values: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();
    let mut per_parameter_errors = Vec::with_capacity(params.len());
    let mut max_rel_error: f64 = 0.0;
    for (p, (name, _)) in params.iter().enumerate() {
        let analytic = tape.grad_or_zeros(vars[p]);
        let mut worst: f64 = 0.0;
        for idx in 0..values[p].len() {
            let orig = values[p].as_slice()[idx];
            values[p].as_mut_slice()[idx] = orig + h;
            let up = eval(&values)?;
            values[p].as_mut_slice()[idx] = orig - h;
            let down = eval(&values)?;
            values[p].as_mut_slice()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic.as_slice()[idx], numeric));
        }
        max_rel_error = max_rel_error.max(worst);
        per_parameter_errors.push((name.clone(), worst));
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_parameter_errors,
    })
}
