//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value lives on a [`Tape`] and is addressed by a copyable [`Var`]
//! handle. Operations append a node whose inputs precede it, so the node
//! order is already topological and `backward` is a single reverse sweep.
//! Scalars are 1x1 matrices.
//!
//! ```
//! use gate_core::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let a = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]], true);
//! let b = tape.leaf(array![[0.5], [-1.0]], false);
//! let y = tape.matmul(a, b).unwrap();
//! let loss = tape.mean(y).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(a)[[0, 1]], -0.5);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, Axis};

use crate::error::{GateError, Result};

/// Norm guard for row normalization and cosine similarity.
pub const NORM_EPS: f64 = 1e-8;
/// Standard-deviation floor in column standardization.
pub const STD_EPS: f64 = 1e-8;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    tape: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    /// Second operand may be a 1 x n row broadcast over the first.
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Elu(Var),
    RowL2Normalize { input: Var, norms: Array1<f64> },
    ColumnStandardize { input: Var, xhat: Array2<f64>, std: Array1<f64> },
    FrobeniusSq(Var),
    RowCosineMean { a: Var, b: Var, norms_a: Array1<f64>, norms_b: Array1<f64>, cos: Array1<f64> },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Array2<f64> },
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    requires_grad: bool,
    op: Op,
    grad: Option<Array2<f64>>,
}

/// Ordered record of operations and their saved inputs.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> GateError {
    GateError::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn add_into(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(GateError::Tape(format!("variable {v:?} is not recorded on this tape")));
        }
        Ok(())
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.id]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.id].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    /// Record an input value. Only leaves with `requires_grad` receive
    /// gradients.
    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
            grad: None,
        });
        Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value), false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.node(v).value
    }

    /// Scalar value of a 1x1 variable.
    pub fn item(&self, v: Var) -> f64 {
        self.node(v).value[[0, 0]]
    }

    /// Accumulated gradient of a leaf; zeros if it did not participate.
    pub fn grad(&self, v: Var) -> Array2<f64> {
        let n = self.node(v);
        n.grad.clone().unwrap_or_else(|| Array2::zeros(n.value.dim()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (da, db) = (self.node(a).value.dim(), self.node(b).value.dim());
        if da.1 != db.0 {
            return Err(shape_err("matmul", da, db));
        }
        let v = self.node(a).value.dot(&self.node(b).value);
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.node(a).value.t().to_owned();
        Ok(self.push(v, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (da, db) = (self.node(a).value.dim(), self.node(b).value.dim());
        let v = if da == db {
            &self.node(a).value + &self.node(b).value
        } else if db.0 == 1 && db.1 == da.1 {
            &self.node(a).value + &self.node(b).value.row(0)
        } else {
            return Err(shape_err("add", da, db));
        };
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (da, db) = (self.node(a).value.dim(), self.node(b).value.dim());
        if da != db {
            return Err(shape_err("sub", da, db));
        }
        let v = &self.node(a).value - &self.node(b).value;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let v = &self.node(a).value * c;
        Ok(self.push(v, Op::Scale(a, c), &[a]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (da, db) = (self.node(a).value.dim(), self.node(b).value.dim());
        if da != db {
            return Err(shape_err("hadamard", da, db));
        }
        let v = &self.node(a).value * &self.node(b).value;
        Ok(self.push(v, Op::Hadamard(a, b), &[a, b]))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.node(a).value.mapv(|x| if x > 0.0 { x } else { x.exp_m1() });
        Ok(self.push(v, Op::Elu(a), &[a]))
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = &self.node(a).value;
        let norms: Array1<f64> = x.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect();
        let mut v = x.clone();
        for (mut row, &n) in v.axis_iter_mut(Axis(0)).zip(norms.iter()) {
            let d = n.max(NORM_EPS);
            row.mapv_inplace(|e| e / d);
        }
        Ok(self.push(v, Op::RowL2Normalize { input: a, norms }, &[a]))
    }

    /// Column c -> (c - mean(c)) / (std(c) * sqrt(N)), population std floored
    /// at [`STD_EPS`], so each non-degenerate column has zero mean and unit
    /// squared norm.
    pub fn column_standardize(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = &self.node(a).value;
        let n = x.nrows();
        if n == 0 {
            return Err(GateError::Shape("column_standardize on empty matrix".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = x - &mean;
        let std = centered.mapv(|e| e * e).mean_axis(Axis(0)).expect("non-empty").mapv(f64::sqrt);
        let floored = std.mapv(|s| s.max(STD_EPS));
        let xhat = &centered / &floored;
        let v = &xhat / (n as f64).sqrt();
        Ok(self.push(
            v,
            Op::ColumnStandardize {
                input: a,
                xhat,
                std,
            },
            &[a],
        ))
    }

    /// Sum of squared entries, as a scalar.
    pub fn frobenius_sq(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.node(a).value.iter().map(|e| e * e).sum::<f64>();
        Ok(self.push(Array2::from_elem((1, 1), s), Op::FrobeniusSq(a), &[a]))
    }

    /// Mean over rows of the cosine similarity between matching rows.
    pub fn row_cosine_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (xa, xb) = (&self.node(a).value, &self.node(b).value);
        if xa.dim() != xb.dim() {
            return Err(shape_err("row_cosine_mean", xa.dim(), xb.dim()));
        }
        if xa.nrows() == 0 {
            return Err(GateError::Shape("row_cosine_mean on empty matrix".into()));
        }
        let sq_a: Array1<f64> = xa.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
        let sq_b: Array1<f64> = xb.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
        let floor = NORM_EPS * NORM_EPS;
        // one square root of the product, so cos(z, z) is exactly 1
        let cos: Array1<f64> = xa
            .axis_iter(Axis(0))
            .zip(xb.axis_iter(Axis(0)))
            .enumerate()
            .map(|(i, (ra, rb))| ra.dot(&rb) / (sq_a[i].max(floor) * sq_b[i].max(floor)).sqrt())
            .collect();
        let norms_a = sq_a.mapv(f64::sqrt);
        let norms_b = sq_b.mapv(f64::sqrt);
        let m = cos.mean().expect("non-empty");
        Ok(self.push(
            Array2::from_elem((1, 1), m),
            Op::RowCosineMean {
                a,
                b,
                norms_a,
                norms_b,
                cos,
            },
            &[a, b],
        ))
    }

    /// Mean negative log-softmax of the true class, max-subtracted.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let x = &self.node(logits).value;
        let (n, c) = x.dim();
        if labels.len() != n || n == 0 {
            return Err(GateError::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(GateError::Label(format!("label {bad} with {c} classes")));
        }
        let mut probs = Array2::zeros((n, c));
        let mut loss = 0.0;
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let mx = row.fold(f64::NEG_INFINITY, |m, &e| m.max(e));
            let lse = row.iter().map(|e| (e - mx).exp()).sum::<f64>().ln();
            for j in 0..c {
                probs[[i, j]] = (row[j] - mx - lse).exp();
            }
            loss -= row[labels[i]] - mx - lse;
        }
        loss /= n as f64;
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = &self.node(a).value;
        if x.is_empty() {
            return Err(GateError::Shape("mean of empty matrix".into()));
        }
        let m = x.sum() / x.len() as f64;
        Ok(self.push(Array2::from_elem((1, 1), m), Op::Mean(a), &[a]))
    }

    /// Propagate d(loss)/d(.) to every leaf that requires a gradient.
    /// Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.node(loss).value.dim() != (1, 1) {
            return Err(GateError::Rank(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).value.dim()
            )));
        }
        let mut adj: Vec<Option<Array2<f64>>> = (0..=loss.id).map(|_| None).collect();
        adj[loss.id] = Some(Array2::ones((1, 1)));
        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let contributions = self.vjp(id, &g);
            if matches!(self.nodes[id].op, Op::Leaf) {
                add_into(&mut self.nodes[id].grad, g);
                continue;
            }
            for (v, c) in contributions {
                add_into(&mut adj[v.id], c);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Vector-Jacobian products of node `id` for each input requiring a grad.
    fn vjp(&self, id: usize, g: &Array2<f64>) -> Vec<(Var, Array2<f64>)> {
        let node = &self.nodes[id];
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    out.push((*a, g.dot(&self.node(*b).value.t())));
                }
                if self.wants(*b) {
                    out.push((*b, self.node(*a).value.t().dot(g)));
                }
            }
            Op::Transpose(a) => out.push((*a, g.t().to_owned())),
            Op::Add(a, b) => {
                if self.wants(*a) {
                    out.push((*a, g.clone()));
                }
                if self.wants(*b) {
                    let db = self.node(*b).value.dim();
                    if db == g.dim() {
                        out.push((*b, g.clone()));
                    } else {
                        out.push((*b, g.sum_axis(Axis(0)).insert_axis(Axis(0))));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    out.push((*a, g.clone()));
                }
                if self.wants(*b) {
                    out.push((*b, -g));
                }
            }
            Op::Scale(a, c) => out.push((*a, g * *c)),
            Op::Hadamard(a, b) => {
                if self.wants(*a) {
                    out.push((*a, g * &self.node(*b).value));
                }
                if self.wants(*b) {
                    out.push((*b, g * &self.node(*a).value));
                }
            }
            Op::Elu(a) => {
                let x = &self.node(*a).value;
                let mut d = g.clone();
                d.zip_mut_with(x, |gi, &xi| {
                    if xi <= 0.0 {
                        *gi *= xi.exp();
                    }
                });
                out.push((*a, d));
            }
            Op::RowL2Normalize { input, norms } => {
                let y = &node.value;
                let mut d = g.clone();
                for (i, mut row) in d.axis_iter_mut(Axis(0)).enumerate() {
                    let n = norms[i];
                    if n > NORM_EPS {
                        let proj = y.row(i).dot(&g.row(i));
                        row.zip_mut_with(&y.row(i), |gi, &yi| *gi = (*gi - yi * proj) / n);
                    } else {
                        row.mapv_inplace(|gi| gi / NORM_EPS);
                    }
                }
                out.push((*input, d));
            }
            Op::ColumnStandardize { input, xhat, std } => {
                let n = g.nrows() as f64;
                let g_mean = g.mean_axis(Axis(0)).expect("non-empty");
                let gx_mean = (g * xhat).mean_axis(Axis(0)).expect("non-empty");
                let mut d = g - &g_mean;
                for (j, mut col) in d.axis_iter_mut(Axis(1)).enumerate() {
                    let s = std[j];
                    if s > STD_EPS {
                        let xh = xhat.column(j);
                        col.zip_mut_with(&xh, |di, &xi| *di -= xi * gx_mean[j]);
                        col.mapv_inplace(|di| di / (s * n.sqrt()));
                    } else {
                        col.mapv_inplace(|di| di / (STD_EPS * n.sqrt()));
                    }
                }
                out.push((*input, d));
            }
            Op::FrobeniusSq(a) => out.push((*a, &self.node(*a).value * (2.0 * g[[0, 0]]))),
            Op::RowCosineMean {
                a,
                b,
                norms_a,
                norms_b,
                cos,
            } => {
                let xa = &self.node(*a).value;
                let xb = &self.node(*b).value;
                let scale = g[[0, 0]] / xa.nrows() as f64;
                let grad_for = |x: &Array2<f64>, other: &Array2<f64>, nx: &Array1<f64>, no: &Array1<f64>| {
                    let mut d = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let (ni, nj) = (nx[i].max(NORM_EPS), no[i].max(NORM_EPS));
                        let mut row = d.row_mut(i);
                        row.assign(&other.row(i));
                        row.mapv_inplace(|e| e / (ni * nj));
                        if nx[i] > NORM_EPS {
                            let c = cos[i] / (ni * ni);
                            row.zip_mut_with(&x.row(i), |e, &xi| *e -= c * xi);
                        }
                        row.mapv_inplace(|e| e * scale);
                    }
                    d
                };
                if self.wants(*a) {
                    out.push((*a, grad_for(xa, xb, norms_a, norms_b)));
                }
                if self.wants(*b) {
                    out.push((*b, grad_for(xb, xa, norms_b, norms_a)));
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let n = probs.nrows() as f64;
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[[i, l]] -= 1.0;
                }
                d.mapv_inplace(|e| e * g[[0, 0]] / n);
                out.push((*logits, d));
            }
            Op::Mean(a) => {
                let x = &self.node(*a).value;
                out.push((*a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64)));
            }
        }
        out
    }
}
