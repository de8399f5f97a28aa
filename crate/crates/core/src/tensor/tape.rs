//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D matrix; vectors are `1×d` rows and scalars are `1×1`.
//! A forward computation appends nodes to a [`Tape`], each holding its value
//! and the primitive that produced it. [`Tape::backward`] then walks the tape
//! once in reverse creation order, which is a valid topological order because
//! nodes can only reference earlier nodes.
//!
//! Primitives with non-standard derivatives (straight-through estimators and
//! the like) are registered through [`CustomOp`]: the caller supplies the
//! forward value and the op supplies its own backward rule.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive that declares its own backward rule.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;

    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad: &Matrix) -> Vec<Matrix>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    ScaleSelf {
        x: Var,
        eps: Var,
    },
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Spmm(Arc<SparseMatrix>, Var),
    EdgeAggregate {
        edges: Arc<[(usize, usize)]>,
        x: Var,
        w: Var,
    },
    SumRows(Var),
    MeanRows(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
    Custom {
        op: Arc<dyn CustomOp>,
        inputs: Vec<Var>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

fn shape(m: &Matrix) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(Error::dim(format!("matmul {} by {}", shape(av), shape(bv))));
        }
        let out = av.dot(bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(Error::dim(format!("add {} and {}", shape(av), shape(bv))));
        }
        let out = av + bv;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `x + b` with the `1×q` row `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.nrows() != 1 || bv.ncols() != xv.ncols() {
            return Err(Error::dim(format!(
                "row broadcast of {} onto {}",
                shape(bv),
                shape(xv)
            )));
        }
        let out = xv + bv;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRow(x, b), rg))
    }

    /// `x + c` for a constant `c` of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Matrix) -> Result<Var> {
        let xv = self.value(x);
        if xv.dim() != c.dim() {
            return Err(Error::dim(format!(
                "add constant {} to {}",
                shape(c),
                shape(xv)
            )));
        }
        let out = xv + c;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AddConst(x), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x) * k;
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, k), rg)
    }

    /// `(1 + eps) · x` with a learnable `1×1` scalar `eps`.
    pub fn scale_self(&mut self, x: Var, eps: Var) -> Result<Var> {
        let ev = self.value(eps);
        if ev.dim() != (1, 1) {
            return Err(Error::dim(format!(
                "epsilon must be 1x1, got {}",
                shape(ev)
            )));
        }
        let k = 1.0 + ev[(0, 0)];
        let out = self.value(x) * k;
        let rg = self.rg(x) || self.rg(eps);
        Ok(self.push(out, Op::ScaleSelf { x, eps }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(Error::dim(format!("mul {} and {}", shape(av), shape(bv))));
        }
        let out = av * bv;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Sparse-times-dense product `d · x`; backward multiplies by `dᵀ`.
    pub fn spmm(&mut self, d: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = d.matmul(self.value(x).view())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Spmm(d, x), rg))
    }

    /// Weighted symmetric neighbor sum: row `i` of the output gathers
    /// `w_k · x[j]` for every edge `k = (i, j)`, in both directions.
    ///
    /// `w` is an `|E|×1` column and is differentiable, which is how edge
    /// masks receive gradients.
    pub fn edge_aggregate(&mut self, edges: Arc<[(usize, usize)]>, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.dim() != (edges.len(), 1) {
            return Err(Error::dim(format!(
                "edge weights {} for {} edges",
                shape(wv),
                edges.len()
            )));
        }
        let n = xv.nrows();
        let mut out = Array2::zeros(xv.dim());
        for (k, &(i, j)) in edges.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::dim(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            let wk = wv[(k, 0)];
            out.row_mut(i).scaled_add(wk, &xv.row(j));
            out.row_mut(j).scaled_add(wk, &xv.row(i));
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::EdgeAggregate { edges, x, w }, rg))
    }

    /// Column sums as a `1×d` row.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let out = self.value(x).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(x);
        self.push(out, Op::SumRows(x), rg)
    }

    /// Column means as a `1×d` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.nrows() == 0 {
            return Err(Error::dim("mean over zero rows"));
        }
        let out = xv.sum_axis(Axis(0)).insert_axis(Axis(0)) / xv.nrows() as f64;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MeanRows(x), rg))
    }

    /// Sum of all entries as a `1×1` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.nrows() != bv.nrows() {
            return Err(Error::dim(format!(
                "concat {} with {}",
                shape(av),
                shape(bv)
            )));
        }
        let out = ndarray::concatenate(Axis(1), &[av.view(), bv.view()])
            .map_err(|e| Error::dim(e.to_string()))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Mean over rows of `-log softmax(logits_r)[target_r]`, stabilized by
    /// max-subtraction. A single `1×c` row gives the per-sample loss.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, c) = lv.dim();
        if c < 2 {
            return Err(Error::arg(format!(
                "cross-entropy needs at least 2 classes, got {c}"
            )));
        }
        if b != targets.len() || b == 0 {
            return Err(Error::dim(format!(
                "{} logit rows for {} targets",
                b,
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::arg(format!(
                "target class {t} out of range for {c} classes"
            )));
        }
        let probs = softmax_rows(lv);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let out = Array2::from_elem((1, 1), loss / b as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Records a primitive whose forward value was computed by the caller and
    /// whose backward rule is supplied by `op`.
    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var], value: Matrix) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            value,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            rg,
        )
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let ov = self.value(output);
        if ov.dim() != (1, 1) {
            return Err(Error::dim(format!(
                "backward needs a 1x1 output, got {}",
                shape(ov)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, d: Matrix| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(a) => *a += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::AddConst(x) => acc(*x, g.clone()),
            Op::Scale(x, k) => acc(*x, g * *k),
            Op::ScaleSelf { x, eps } => {
                let k = 1.0 + self.value(*eps)[(0, 0)];
                acc(*x, g * k);
                let ge = (g * self.value(*x)).sum();
                acc(*eps, Array2::from_elem((1, 1), ge));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                });
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &s| *d *= s * (1.0 - s));
                acc(*x, d);
            }
            Op::Spmm(m, x) => {
                // Shapes were validated on the forward pass.
                acc(*x, m.t_matmul(g.view()).expect("spmm backward shape"));
            }
            Op::EdgeAggregate { edges, x, w } => {
                let xv = self.value(*x);
                if self.rg(*x) {
                    let wv = self.value(*w);
                    let mut gx = Array2::zeros(xv.dim());
                    for (k, &(i, j)) in edges.iter().enumerate() {
                        let wk = wv[(k, 0)];
                        gx.row_mut(j).scaled_add(wk, &g.row(i));
                        gx.row_mut(i).scaled_add(wk, &g.row(j));
                    }
                    acc(*x, gx);
                }
                if self.rg(*w) {
                    let mut gw = Array2::zeros((edges.len(), 1));
                    for (k, &(i, j)) in edges.iter().enumerate() {
                        gw[(k, 0)] = g.row(i).dot(&xv.row(j)) + g.row(j).dot(&xv.row(i));
                    }
                    acc(*w, gw);
                }
            }
            Op::SumRows(x) => {
                let n = self.value(*x).nrows();
                acc(
                    *x,
                    g.broadcast((n, g.ncols()))
                        .expect("row broadcast")
                        .to_owned(),
                );
            }
            Op::MeanRows(x) => {
                let n = self.value(*x).nrows();
                let d = g
                    .broadcast((n, g.ncols()))
                    .expect("row broadcast")
                    .to_owned()
                    / n as f64;
                acc(*x, d);
            }
            Op::Sum(x) => {
                let dim = self.value(*x).dim();
                acc(*x, Array2::from_elem(dim, g[(0, 0)]));
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).ncols();
                acc(*a, g.slice(ndarray::s![.., ..ca]).to_owned());
                acc(*b, g.slice(ndarray::s![.., ca..]).to_owned());
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d[(r, t)] -= 1.0;
                }
                d *= g[(0, 0)] / targets.len() as f64;
                acc(*logits, d);
            }
            Op::Custom { op, inputs } => {
                let vals: Vec<&Matrix> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                for (&v, d) in inputs.iter().zip(gs) {
                    acc(v, d);
                }
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like its value when none reached it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(tape.value(v).dim()))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}
