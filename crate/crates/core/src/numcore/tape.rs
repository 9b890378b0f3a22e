//! Define-by-run reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a 1×1 node sweeps the record in reverse and returns
//! the accumulated gradients of every node, keyed for parameters by
//! [`ParamId`]. Tapes are meant to be rebuilt for each evaluation.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use super::matrix::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::math;

/// Vector-Jacobian product of a custom fused operation.
///
/// Receives the upstream gradient and must return one gradient per input,
/// in input order (`None` for inputs that receive no gradient).
pub trait VjpRule {
    fn vjp(&self, grad_out: &Matrix, inputs: &[Rc<Matrix>]) -> Vec<Option<Matrix>>;
}

enum Op {
    Leaf(Option<ParamId>),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Sin(usize),
    Cos(usize),
    Atan2(usize, usize),
    Pow(usize, f64),
    Scale(usize, f64),
    Offset(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Broadcast(usize),
    ConcatCols(Vec<usize>),
    SelectCols(usize, Vec<usize>),
    Clamp(usize, f64, f64),
    CumsumCols(usize),
    Custom(Vec<usize>, Box<dyn VjpRule>),
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let v = self.value();
        write!(f, "Var#{}({}x{})", self.id, v.rows(), v.cols())
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
    params: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    /// Gradient of the root with respect to a parameter, if the parameter was
    /// placed on the tape. Placed-but-unreachable parameters get zeros.
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    /// Gradient with respect to any recorded node (zeros when unreachable).
    pub fn wrt(&self, v: Var<'_>) -> Matrix {
        match self.nodes.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn broadcast_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.rows(), b.rows()), dim(a.cols(), b.cols())) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(shape_err(op, a, b)),
    }
}

/// Elementwise binary map with row/column broadcasting.
fn zip_broadcast(a: &Matrix, b: &Matrix, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == shape && b.shape() == shape {
        return a.zip_map(b, f);
    }
    let (rows, cols) = shape;
    let mut out = Matrix::zeros(rows, cols);
    let ar = |r: usize| if a.rows() == 1 { 0 } else { r };
    let ac = |c: usize| if a.cols() == 1 { 0 } else { c };
    let br = |r: usize| if b.rows() == 1 { 0 } else { r };
    let bc = |c: usize| if b.cols() == 1 { 0 } else { c };
    for r in 0..rows {
        for c in 0..cols {
            out.set(r, c, f(a.get(ar(r), ac(c)), b.get(br(r), bc(c))));
        }
    }
    out
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g;
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        let rr = if shape.0 == 1 { 0 } else { r };
        for c in 0..g.cols() {
            let cc = if shape.1 == 1 { 0 } else { c };
            let v = out.get(rr, cc) + g.get(r, c);
            out.set(rr, cc, v);
        }
    }
    out
}

fn domain(op: &'static str, detail: impl Into<alloc::string::String>) -> Error {
    Error::Domain {
        op,
        detail: detail.into(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    fn push(&self, value: Matrix, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Matrix> {
        self.nodes.borrow()[id].value.clone()
    }

    /// A node that does not depend on any parameter.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf(None))
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Matrix::scalar(value))
    }

    /// Places a parameter block on the tape. Its gradient is reported under `id`.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push(store.get(id).clone(), Op::Leaf(Some(id)))
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Rc<Matrix>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Matrix> = values.iter().map(|v| &**v).collect();
        let out = Matrix::concat_cols(&refs)?;
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    /// Registers a fused operation with a hand-written backward rule.
    pub fn custom<'t>(&'t self, inputs: &[Var<'t>], value: Matrix, rule: Box<dyn VjpRule>) -> Var<'t> {
        self.push(value, Op::Custom(inputs.iter().map(|v| v.id).collect(), rule))
    }

    /// Reverse sweep from a 1×1 root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let rv = &nodes[root.id].value;
        if rv.shape() != (1, 1) {
            return Err(Error::NotScalar {
                rows: rv.rows(),
                cols: rv.cols(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[root.id] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], id: usize, g: Matrix) {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let out = &node.value;
            let val = |j: usize| -> &Matrix { &nodes[j].value };
            match &node.op {
                Op::Leaf(_) => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), val(*a).shape()));
                    acc(&mut grads, *b, reduce_to(g.clone(), val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), val(*a).shape()));
                    acc(&mut grads, *b, reduce_to(g.map(|x| -x), val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let ga = zip_broadcast(&g, vb, g.shape(), |x, y| x * y);
                    let gb = zip_broadcast(&g, va, g.shape(), |x, y| x * y);
                    acc(&mut grads, *a, reduce_to(ga, va.shape()));
                    acc(&mut grads, *b, reduce_to(gb, vb.shape()));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let ga = zip_broadcast(&g, vb, g.shape(), |x, y| x / y);
                    // d(a/b)/db = -out/b
                    let t = zip_broadcast(&g, out, g.shape(), |x, o| -x * o);
                    let gb = zip_broadcast(&t, vb, g.shape(), |x, y| x / y);
                    acc(&mut grads, *a, reduce_to(ga, va.shape()));
                    acc(&mut grads, *b, reduce_to(gb, vb.shape()));
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    matmul_nt_acc(&g, vb, &mut ga);
                    let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                    matmul_tn_acc(va, &g, &mut gb);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(out, |x, o| x * o)),
                Op::Log(a) => acc(&mut grads, *a, g.zip_map(val(*a), |x, v| x / v)),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(out, |x, o| x * (1.0 - o * o))),
                Op::Relu(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(val(*a), |x, v| if v > 0.0 { x } else { 0.0 }),
                ),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(out, |x, o| x * o * (1.0 - o))),
                Op::Softplus(a) => {
                    acc(&mut grads, *a, g.zip_map(val(*a), |x, v| x * math::sigmoid(v)))
                }
                Op::Sin(a) => acc(&mut grads, *a, g.zip_map(val(*a), |x, v| x * math::cos(v))),
                Op::Cos(a) => acc(&mut grads, *a, g.zip_map(val(*a), |x, v| -x * math::sin(v))),
                Op::Atan2(y, x) => {
                    let (vy, vx) = (val(*y), val(*x));
                    let shape = g.shape();
                    let r2 = zip_broadcast(vy, vx, shape, |a, b| a * a + b * b);
                    let xb = zip_broadcast(vx, &r2, shape, |a, r| a / r);
                    let yb = zip_broadcast(vy, &r2, shape, |a, r| -a / r);
                    acc(&mut grads, *y, reduce_to(g.zip_map(&xb, |u, w| u * w), vy.shape()));
                    acc(&mut grads, *x, reduce_to(g.zip_map(&yb, |u, w| u * w), vx.shape()));
                }
                Op::Pow(a, p) => {
                    let p = *p;
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(val(*a), |x, v| x * p * math::pow(v, p - 1.0)),
                    )
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(&mut grads, *a, g.map(|x| x * k))
                }
                Op::Offset(a) => acc(&mut grads, *a, g.clone()),
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, g.item()))
                }
                Op::Mean(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, g.item() / (r * c) as f64))
                }
                Op::SumRows(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut grads, *a, zip_broadcast(&g, &Matrix::zeros(r, c), (r, c), |x, _| x))
                }
                Op::Broadcast(a) => acc(&mut grads, *a, reduce_to(g.clone(), val(*a).shape())),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        let idx: Vec<usize> = (offset..offset + w).collect();
                        acc(&mut grads, p, g.select_cols(&idx));
                        offset += w;
                    }
                }
                Op::SelectCols(a, idx) => {
                    let va = val(*a);
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    for r in 0..g.rows() {
                        for (j, &c) in idx.iter().enumerate() {
                            let v = ga.get(r, c) + g.get(r, j);
                            ga.set(r, c, v);
                        }
                    }
                    acc(&mut grads, *a, ga)
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(val(*a), |x, v| if v >= lo && v <= hi { x } else { 0.0 }),
                    )
                }
                Op::CumsumCols(a) => {
                    // reverse cumulative sum along each row
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let mut s = 0.0;
                        for c in (0..ga.cols()).rev() {
                            s += g.get(r, c);
                            ga.set(r, c, s);
                        }
                    }
                    acc(&mut grads, *a, ga)
                }
                Op::Custom(inputs, rule) => {
                    let vals: Vec<Rc<Matrix>> = inputs.iter().map(|&j| nodes[j].value.clone()).collect();
                    for (j, gi) in inputs.iter().zip(rule.vjp(&g, &vals)) {
                        if let Some(gi) = gi {
                            acc(&mut grads, *j, gi);
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate().take(root.id + 1) {
            if let Op::Leaf(Some(pid)) = node.op {
                let g = grads[i]
                    .clone()
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                match params.get_mut(&pid) {
                    Some(existing) => Matrix::add_assign(existing, &g),
                    None => {
                        params.insert(pid, g);
                    }
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients {
            nodes: grads,
            shapes,
            params,
        })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = self.value().map(f);
        self.tape.push(out, op)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(name, &a, &b)?;
        let out = zip_broadcast(&a, &b, shape, f);
        Ok(self.tape.push(out, op))
    }

    pub fn add(self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "add", Op::Add(self.id, o.id), |a, b| a + b)
    }

    pub fn sub(self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "sub", Op::Sub(self.id, o.id), |a, b| a - b)
    }

    pub fn mul(self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "mul", Op::Mul(self.id, o.id), |a, b| a * b)
    }

    /// Elementwise division; a zero anywhere in the divisor is an error.
    pub fn div(self, o: Var<'t>) -> Result<Var<'t>> {
        if o.value().data().iter().any(|&x| x == 0.0) {
            return Err(domain("div", "division by zero"));
        }
        self.binary(o, "div", Op::Div(self.id, o.id), |a, b| a / b)
    }

    pub fn matmul(self, o: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), o.value());
        if a.cols() != b.rows() {
            return Err(shape_err("matmul", &a, &b));
        }
        let mut out = Matrix::zeros(a.rows(), b.cols());
        matmul_acc(&a, &b, &mut out);
        Ok(self.tape.push(out, Op::MatMul(self.id, o.id)))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), math::exp)
    }

    /// Natural log; non-positive entries are an error.
    pub fn log(self) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(x) = v.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(domain("log", format!("non-positive argument {x}")));
        }
        Ok(self.unary(Op::Log(self.id), math::ln))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), math::tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), math::sigmoid)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), math::softplus)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin(self.id), math::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos(self.id), math::cos)
    }

    /// `atan2(self, x)`, elementwise; undefined at the origin.
    pub fn atan2(self, x: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), x.value());
        let shape = broadcast_shape("atan2", &a, &b)?;
        let r2 = zip_broadcast(&a, &b, shape, |y, x| y * y + x * x);
        if r2.data().iter().any(|&r| r == 0.0) {
            return Err(domain("atan2", "both arguments zero"));
        }
        self.binary(x, "atan2", Op::Atan2(self.id, x.id), math::atan2)
    }

    /// Elementwise power with a constant exponent.
    pub fn pow(self, p: f64) -> Result<Var<'t>> {
        let v = self.value();
        let integral = p == math::floor(p);
        for &x in v.data() {
            if x < 0.0 && !integral {
                return Err(domain("pow", format!("negative base {x} with exponent {p}")));
            }
            if x == 0.0 && p < 1.0 && p != 0.0 {
                return Err(domain("pow", format!("zero base with exponent {p}")));
            }
        }
        Ok(self.unary(Op::Pow(self.id, p), |x| math::pow(x, p)))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, k), |x| x * k)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Adds a constant to every entry.
    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.id), |x| x + c)
    }

    /// Reduces an angle to `[-π, π)`; the gradient passes through unchanged.
    pub fn wrap_angle(self) -> Var<'t> {
        self.unary(Op::Offset(self.id), math::wrap_angle)
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Matrix::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let s = self.value().mean();
        self.tape.push(Matrix::scalar(s), Op::Mean(self.id))
    }

    /// Per-row sum: `n×c → n×1`.
    pub fn sum_rows(self) -> Var<'t> {
        let v = self.value();
        let out: Vec<f64> = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        self.tape.push(Matrix::column(&out), Op::SumRows(self.id))
    }

    pub fn broadcast_to(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let v = self.value();
        let target = Matrix::zeros(rows, cols);
        let shape = broadcast_shape("broadcast", &v, &target)?;
        if shape != (rows, cols) {
            return Err(shape_err("broadcast", &v, &target));
        }
        let out = zip_broadcast(&v, &target, shape, |a, _| a);
        Ok(self.tape.push(out, Op::Broadcast(self.id)))
    }

    pub fn select_cols(self, cols: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(&c) = cols.iter().find(|&&c| c >= v.cols()) {
            return Err(Error::Shape {
                op: "select_cols",
                lhs: v.shape(),
                rhs: (1, c + 1),
            });
        }
        let out = v.select_cols(cols);
        Ok(self.tape.push(out, Op::SelectCols(self.id, cols.to_vec())))
    }

    pub fn col(self, c: usize) -> Result<Var<'t>> {
        self.select_cols(&[c])
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Running sum along each row.
    pub fn cumsum_cols(self) -> Var<'t> {
        let mut out = (*self.value()).clone();
        for r in 0..out.rows() {
            let mut s = 0.0;
            for c in 0..out.cols() {
                s += out.get(r, c);
                out.set(r, c, s);
            }
        }
        self.tape.push(out, Op::CumsumCols(self.id))
    }

    /// Row-wise softmax, shifted by the (constant) row maximum.
    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let v = self.value();
        let maxes: Vec<f64> = (0..v.rows())
            .map(|r| v.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shift = self.tape.constant(Matrix::column(&maxes));
        let e = self.sub(shift)?.exp();
        e.div(e.sum_rows())
    }

    /// Row-wise `log Σ exp`, shifted by the (constant) row maximum.
    pub fn logsumexp_rows(self) -> Result<Var<'t>> {
        let v = self.value();
        let maxes: Vec<f64> = (0..v.rows())
            .map(|r| v.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shift = self.tape.constant(Matrix::column(&maxes));
        self.sub(shift)?.exp().sum_rows().log()?.add(shift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::PI;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn add_self_doubles_gradient() {
        let mut store = ParamStore::new();
        let p = store.insert("a", Matrix::from_rows(&[&[1.0, 2.0]]), true);
        let tape = Tape::new();
        let a = tape.param(&store, p);
        let s = a.add(a).unwrap();
        assert_eq!(*s.value(), Matrix::from_rows(&[&[2.0, 4.0]]));
        let g = tape.backward(s.sum()).unwrap();
        assert_eq!(g.get(p).unwrap(), &Matrix::from_rows(&[&[2.0, 2.0]]));
    }

    #[test]
    fn exp_log_roundtrip_has_unit_gradient() {
        let tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[&[0.5, 2.0, 7.0]]));
        let y = x.log().unwrap().exp();
        assert!(close(&y.value(), &x.value(), 1e-15));
        let g = tape.backward(y.sum()).unwrap();
        assert!(close(&g.wrt(x), &Matrix::filled(1, 3, 1.0), 1e-15));
    }

    #[test]
    fn backward_reference_cases() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Matrix::scalar(3.0), true);
        let q = store.insert("q", Matrix::from_rows(&[&[0.0, PI / 2.0]]), true);
        let unused = store.insert("u", Matrix::scalar(1.0), true);
        let tape = Tape::new();
        let pv = tape.param(&store, p);
        let qv = tape.param(&store, q);
        let _uv = tape.param(&store, unused);
        let root = pv.pow(2.0).unwrap().sum().add(qv.sin().sum()).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(p).unwrap().item(), 6.0);
        let gq = g.get(q).unwrap();
        assert!((gq.get(0, 0) - 1.0).abs() < 1e-15 && gq.get(0, 1).abs() < 1e-15);
        assert_eq!(g.get(unused).unwrap(), &Matrix::zeros(1, 1));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.constant(Matrix::zeros(2, 1));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar { rows: 2, cols: 1 })));
    }

    #[test]
    fn domain_errors() {
        let tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[&[1.0, 0.0]]));
        assert!(matches!(x.log(), Err(Error::Domain { op: "log", .. })));
        assert!(matches!(x.div(x), Err(Error::Domain { op: "div", .. })));
        assert!(matches!(x.neg().pow(0.5), Err(Error::Domain { op: "pow", .. })));
        let y = tape.constant(Matrix::zeros(3, 3));
        assert!(matches!(x.add(y), Err(Error::Shape { op: "add", .. })));
        assert!(matches!(x.matmul(x), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn broadcasting_row_and_column() {
        let tape = Tape::new();
        let m = tape.constant(Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let row = tape.constant(Matrix::from_rows(&[&[10.0, 20.0]]));
        let col = tape.constant(Matrix::column(&[1.0, 2.0, 3.0]));
        let out = m.add(row).unwrap().mul(col).unwrap();
        assert_eq!(
            *out.value(),
            Matrix::from_rows(&[&[11.0, 22.0], &[26.0, 48.0], &[45.0, 78.0]])
        );
        let g = tape.backward(out.sum()).unwrap();
        assert_eq!(g.wrt(row), Matrix::from_rows(&[&[6.0, 6.0]]));
        assert_eq!(g.wrt(col), Matrix::column(&[33.0, 37.0, 41.0]));
    }

    #[test]
    fn two_consumers_accumulate() {
        let tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[&[0.3, -1.7, 2.5]]));
        let a = x.mul(x).unwrap().sum();
        let b = x.pow(2.0).unwrap().sum();
        let ga = tape.backward(a).unwrap().wrt(x);
        let gb = tape.backward(b).unwrap().wrt(x);
        assert!(close(&ga, &gb, 1e-12));
    }
}
