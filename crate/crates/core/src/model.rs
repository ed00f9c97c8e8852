//! GCN encoder, linear classification head and the two training losses.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, NORM_EPS};
use crate::error::{GateError, Result};

pub const NUM_CLASSES: usize = 2;

/// Names of the learnable matrices, in [`GateModel::params`] order.
pub const PARAM_NAMES: [&str; 5] = [
    "gcn_weight",
    "linear_weight",
    "linear_bias",
    "classifier_weight",
    "classifier_bias",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 0.2 }
    }
}

/// Encoder f = standardize(elu(elu(A X Theta) W + b)) and head psi = linear.
#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    pub gcn_weight: Array2<f64>,
    pub linear_weight: Array2<f64>,
    pub linear_bias: Array2<f64>,
    pub classifier_weight: Array2<f64>,
    pub classifier_bias: Array2<f64>,
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl GateModel {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            gcn_weight: glorot(input_dim, hidden_dim, rng),
            linear_weight: glorot(hidden_dim, hidden_dim, rng),
            linear_bias: Array2::zeros((1, hidden_dim)),
            classifier_weight: glorot(hidden_dim, NUM_CLASSES, rng),
            classifier_bias: Array2::zeros((1, NUM_CLASSES)),
        }
    }

    pub fn from_params(params: Vec<Array2<f64>>) -> Result<Self> {
        let [g, lw, lb, cw, cb]: [Array2<f64>; 5] = params
            .try_into()
            .map_err(|v: Vec<_>| GateError::Shape(format!("expected 5 parameter matrices, got {}", v.len())))?;
        let h = g.ncols();
        let ok = lw.dim() == (h, h) && lb.dim() == (1, h) && cw.dim() == (h, NUM_CLASSES) && cb.dim() == (1, NUM_CLASSES);
        if !ok {
            return Err(GateError::Shape("inconsistent parameter shapes".into()));
        }
        Ok(Self {
            gcn_weight: g,
            linear_weight: lw,
            linear_bias: lb,
            classifier_weight: cw,
            classifier_bias: cb,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.gcn_weight.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gcn_weight.ncols()
    }

    pub fn params(&self) -> [&Array2<f64>; 5] {
        [
            &self.gcn_weight,
            &self.linear_weight,
            &self.linear_bias,
            &self.classifier_weight,
            &self.classifier_bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Array2<f64>; 5] {
        [
            &mut self.gcn_weight,
            &mut self.linear_weight,
            &mut self.linear_bias,
            &mut self.classifier_weight,
            &mut self.classifier_bias,
        ]
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params().iter().map(|p| p.dim()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Record all parameters as gradient-tracking leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            gcn_weight: tape.leaf(self.gcn_weight.clone(), true),
            linear_weight: tape.leaf(self.linear_weight.clone(), true),
            linear_bias: tape.leaf(self.linear_bias.clone(), true),
            classifier_weight: tape.leaf(self.classifier_weight.clone(), true),
            classifier_bias: tape.leaf(self.classifier_bias.clone(), true),
        }
    }
}

/// Parameter handles of a [`GateModel`] on one tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundModel {
    pub gcn_weight: Var,
    pub linear_weight: Var,
    pub linear_bias: Var,
    pub classifier_weight: Var,
    pub classifier_bias: Var,
}

impl BoundModel {
    pub fn vars(&self) -> [Var; 5] {
        [
            self.gcn_weight,
            self.linear_weight,
            self.linear_bias,
            self.classifier_weight,
            self.classifier_bias,
        ]
    }

    pub fn grads(&self, tape: &Tape) -> Vec<Array2<f64>> {
        self.vars().iter().map(|&v| tape.grad(v)).collect()
    }

    /// Encoder output before column standardization.
    pub fn hidden(&self, tape: &mut Tape, x: &Array2<f64>, adjacency: Option<&Array2<f64>>) -> Result<Var> {
        let d = tape.value(self.gcn_weight).nrows();
        if x.ncols() != d {
            return Err(GateError::Shape(format!("features have width {}, encoder expects {d}", x.ncols())));
        }
        let propagated = match adjacency {
            Some(a) => {
                if a.dim() != (x.nrows(), x.nrows()) {
                    return Err(GateError::Shape(format!(
                        "adjacency {:?} for {} nodes",
                        a.dim(),
                        x.nrows()
                    )));
                }
                a.dot(x)
            }
            None => x.clone(),
        };
        let ax = tape.leaf(propagated, false);
        let pre = tape.matmul(ax, self.gcn_weight)?;
        let h1 = tape.elu(pre)?;
        let lin = tape.matmul(h1, self.linear_weight)?;
        let lin = tape.add(lin, self.linear_bias)?;
        tape.elu(lin)
    }

    /// Z = column_standardize(elu(elu(A X Theta) W + b)); `None` adjacency
    /// means the identity.
    pub fn encode(&self, tape: &mut Tape, x: &Array2<f64>, adjacency: Option<&Array2<f64>>) -> Result<Var> {
        let e = self.hidden(tape, x, adjacency)?;
        tape.column_standardize(e)
    }

    /// Logits of the graph-free encoder followed by the linear head.
    pub fn classify(&self, tape: &mut Tape, x: &Array2<f64>) -> Result<Var> {
        let z = self.encode(tape, x, None)?;
        self.head(tape, z)
    }

    pub fn head(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let logits = tape.matmul(z, self.classifier_weight)?;
        tape.add(logits, self.classifier_bias)
    }
}

/// Record the two-view loss
/// -(1/N) sum_i cos(za_i, zb_i) + gamma * sum_v ||Z_v^T Z_v - I||_F^2.
pub fn cca_ssl_loss_on(tape: &mut Tape, za: Var, zb: Var, gamma: f64) -> Result<Var> {
    if tape.value(za).dim() != tape.value(zb).dim() {
        return Err(GateError::Shape(format!(
            "view embeddings {:?} vs {:?}",
            tape.value(za).dim(),
            tape.value(zb).dim()
        )));
    }
    let h = tape.value(za).ncols();
    let cos = tape.row_cosine_mean(za, zb)?;
    let eye = tape.leaf(Array2::eye(h), false);
    let mut decor = Vec::with_capacity(2);
    for z in [za, zb] {
        let zt = tape.transpose(z)?;
        let gram = tape.matmul(zt, z)?;
        let diff = tape.sub(gram, eye)?;
        decor.push(tape.frobenius_sq(diff)?);
    }
    let decor = tape.add(decor[0], decor[1])?;
    let decor = tape.scale(decor, gamma)?;
    let neg_cos = tape.scale(cos, -1.0)?;
    tape.add(neg_cos, decor)
}

pub fn cca_ssl_loss(za: &Array2<f64>, zb: &Array2<f64>, gamma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(za.clone(), false);
    let b = tape.leaf(zb.clone(), false);
    let l = cca_ssl_loss_on(&mut tape, a, b, gamma)?;
    Ok(tape.item(l))
}

/// Only the invariance part: -(1/N) sum_i cos(za_i, zb_i).
pub fn cosine_term(za: &Array2<f64>, zb: &Array2<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(za.clone(), false);
    let b = tape.leaf(zb.clone(), false);
    let c = tape.row_cosine_mean(a, b)?;
    Ok(-tape.item(c))
}

/// ||Z^T Z - I||_F^2 for one view.
pub fn decorrelation_term(z: &Array2<f64>) -> f64 {
    let gram = z.t().dot(z) - Array2::<f64>::eye(z.ncols());
    gram.iter().map(|v| v * v).sum()
}

pub fn encode(model: &GateModel, x: &Array2<f64>, adjacency: Option<&Array2<f64>>) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let z = bound.encode(&mut tape, x, adjacency)?;
    Ok(tape.value(z).clone())
}

/// Encoder output before column standardization.
pub fn hidden(model: &GateModel, x: &Array2<f64>, adjacency: Option<&Array2<f64>>) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let e = bound.hidden(&mut tape, x, adjacency)?;
    Ok(tape.value(e).clone())
}

pub fn classify(model: &GateModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let logits = bound.classify(&mut tape, x)?;
    Ok(tape.value(logits).clone())
}

pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone(), false);
    let loss = tape.softmax_cross_entropy(l, labels)?;
    Ok(tape.item(loss))
}

/// Row-wise softmax, max-subtracted.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mx = row.fold(f64::NEG_INFINITY, |m, &e| m.max(e));
        row.mapv_inplace(|e| (e - mx).exp());
        let s = row.sum();
        row.mapv_inplace(|e| e / s);
    }
    out
}

/// Plain cosine of two vectors with the same norm guard as the loss.
pub fn guarded_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let floor = NORM_EPS * NORM_EPS;
    let sa = a.iter().map(|x| x * x).sum::<f64>().max(floor);
    let sb = b.iter().map(|x| x * x).sum::<f64>().max(floor);
    dot / (sa * sb).sqrt()
}
