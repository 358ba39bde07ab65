//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node whose
//! index is larger than the indices of its inputs, so reverse index order is a
//! valid topological order for the backward sweep. Graphs are meant to be
//! built per forward pass and dropped after [`Graph::backward`].

use std::collections::BTreeMap;

use super::{Matrix, ParameterSet};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
///
/// `backward` returns one gradient per input, each shaped like that input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad: &Matrix) -> Vec<Matrix>;
}

/// Elementwise operation kinds accepted by [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Tanh,
    Scale(f64),
}

enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Sqrt(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    PairwiseSqL2(Var),
    RowNormalize(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: BTreeMap<String, Matrix>,
}

impl Gradients {
    /// Gradient with respect to any node; `None` if the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to a named parameter leaf.
    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds every parameter gradient into the matching entry of `set`.
    ///
    /// Names not present in `set` are ignored, so one sweep can feed several
    /// disjoint sets. Gradients accumulate until [`ParameterSet::zero_grad`].
    pub fn accumulate_into(&self, set: &mut ParameterSet) {
        for (name, grad) in &self.params {
            if let Some(p) = set.get_mut(name) {
                p.grad.add_assign(grad);
            }
        }
    }
}

fn send(grads: &mut [Option<Matrix>], to: Var, contrib: Matrix) {
    match &mut grads[to.0] {
        Some(existing) => existing.add_assign(&contrib),
        slot @ None => *slot = Some(contrib),
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
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

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Trainable leaf holding a copy of `set[name]`.
    pub fn param(&mut self, set: &ParameterSet, name: &str) -> Result<Var> {
        let value = set.value(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn elementwise(&mut self, kind: Elementwise, operands: &[Var]) -> Result<Var> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if operands.len() != arity {
            return Err(Error::arg(format!(
                "{kind:?} takes {arity} operand(s), got {}",
                operands.len()
            )));
        }
        match kind {
            Elementwise::Add => self.add(operands[0], operands[1]),
            Elementwise::Sub => self.sub(operands[0], operands[1]),
            Elementwise::Mul => self.mul(operands[0], operands[1]),
            Elementwise::Relu => Ok(self.relu(operands[0])),
            Elementwise::Tanh => Ok(self.tanh(operands[0])),
            Elementwise::Scale(c) => Ok(self.scale(operands[0], c)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::dim("add_row", am.shape(), rm.shape()));
        }
        let mut value = am.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(rm.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// Derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if let Some(bad) = m.data().iter().find(|v| **v < 0.0) {
            return Err(Error::Numeric(format!("sqrt of negative value {bad}")));
        }
        let value = m.map(f64::sqrt);
        Ok(self.push(value, Op::Sqrt(a)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::arg("mean of an empty matrix"));
        }
        let value = Matrix::scalar(m.sum() / m.len() as f64);
        Ok(self.push(value, Op::Mean(a)))
    }

    /// `M x d` rows to the `M x M` matrix of squared Euclidean distances.
    ///
    /// Computed by direct differences, so the diagonal is exactly zero and the
    /// result is exactly symmetric.
    pub fn pairwise_sq_l2(&mut self, v: Var) -> Result<Var> {
        let m = self.value(v);
        if m.rows() < 2 {
            return Err(Error::arg(format!(
                "pairwise_sq_l2 needs at least 2 rows, got {}",
                m.rows()
            )));
        }
        let n = m.rows();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d: f64 = m
                    .row(i)
                    .iter()
                    .zip(m.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                out[(i, j)] = d;
                out[(j, i)] = d;
            }
        }
        Ok(self.push(out, Op::PairwiseSqL2(v)))
    }

    /// Scales every row to unit Euclidean norm. Zero rows are rejected.
    pub fn row_normalize(&mut self, v: Var) -> Result<Var> {
        let m = self.value(v);
        let mut out = m.clone();
        for i in 0..m.rows() {
            let norm = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "row {i} has norm {norm}; cannot normalize"
                )));
            }
            out.row_mut(i).iter_mut().for_each(|x| *x /= norm);
        }
        Ok(self.push(out, Op::RowNormalize(v)))
    }

    /// Records an externally defined operation whose forward value was already
    /// computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Matrix, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Sign pattern of every kinked input (relu, abs) in the graph.
    ///
    /// Two evaluations with equal patterns lie on the same smooth piece, which
    /// is what the finite-difference checker needs to know.
    pub fn kink_pattern(&self) -> Vec<i8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::Abs(a) = node.op {
                out.extend(self.value(a).data().iter().map(|&x| {
                    if x > 0.0 {
                        1
                    } else if x < 0.0 {
                        -1
                    } else {
                        0
                    }
                }));
            }
        }
        out
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::arg(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut params = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    params
                        .entry(name.clone())
                        .and_modify(|m: &mut Matrix| m.add_assign(&g))
                        .or_insert_with(|| g.clone());
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, x) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *row, gr);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                    send(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gx, y| gx * (1.0 - y * y));
                    send(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let ga = g.zip_map(self.value(*a), |gx, x| {
                        if x > 0.0 {
                            gx
                        } else if x < 0.0 {
                            -gx
                        } else {
                            0.0
                        }
                    });
                    send(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => {
                    let ga = g.zip_map(&node.value, |gx, y| if gx == 0.0 { 0.0 } else { gx * 0.5 / y });
                    send(&mut grads, *a, ga);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    send(&mut grads, *a, g.map(|x| x * c));
                }
                Op::AddScalar(a) => send(&mut grads, *a, g.clone()),
                Op::Transpose(a) => send(&mut grads, *a, g.transpose()),
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    send(&mut grads, *a, Matrix::filled(r, c, g.data()[0]));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let n = (r * c) as f64;
                    send(&mut grads, *a, Matrix::filled(r, c, g.data()[0] / n));
                }
                Op::PairwiseSqL2(v) => {
                    let x = self.value(*v);
                    let (n, d) = x.shape();
                    let mut gv = Matrix::zeros(n, d);
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let w = 2.0 * (g[(i, j)] + g[(j, i)]);
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..d {
                                gv[(i, c)] += w * (x[(i, c)] - x[(j, c)]);
                            }
                        }
                    }
                    send(&mut grads, *v, gv);
                }
                Op::RowNormalize(v) => {
                    let x = self.value(*v);
                    let y = &node.value;
                    let mut gv = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        let norm = x.row(i).iter().map(|t| t * t).sum::<f64>().sqrt();
                        let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
                        for c in 0..x.cols() {
                            gv[(i, c)] = (g[(i, c)] - y[(i, c)] * dot) / norm;
                        }
                    }
                    send(&mut grads, *v, gv);
                }
                Op::Custom(inputs, op) => {
                    let values: Vec<&Matrix> = inputs.iter().map(|v| self.value(*v)).collect();
                    let contribs = op.backward(&values, &node.value, &g);
                    debug_assert_eq!(contribs.len(), inputs.len(), "{}", op.name());
                    for (v, c) in inputs.iter().zip(contribs) {
                        debug_assert_eq!(c.shape(), self.value(*v).shape(), "{}", op.name());
                        send(&mut grads, *v, c);
                    }
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}
