//! Population graph over subjects: Gaussian feature similarity, phenotype
//! agreement, kNN sparsification and symmetric normalization.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};
use crate::signal::{FeatureMatrix, Phenotype, SubjectMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// sigma = mean pairwise Euclidean distance between subjects.
    MeanPairwiseDistance,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub k: usize,
    pub sigma: SigmaMode,
    /// Numeric phenotypes match when they differ by at most this much.
    pub age_threshold: f64,
    pub phenotype_names: Vec<String>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 10,
            sigma: SigmaMode::MeanPairwiseDistance,
            age_threshold: 2.0,
            phenotype_names: vec!["sex".into(), "age".into(), "site".into()],
        }
    }
}

impl GraphConfig {
    pub fn validate(&self, n_subjects: usize) -> Result<()> {
        if self.k == 0 {
            return Err(GateError::config("graph.k", "must be >= 1"));
        }
        if self.k >= n_subjects {
            return Err(GateError::config(
                "graph.k",
                format!("k = {} must be < number of subjects {n_subjects}", self.k),
            ));
        }
        if let SigmaMode::Fixed(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(GateError::config("graph.sigma", "fixed sigma must be positive"));
            }
        }
        if !(self.age_threshold >= 0.0) {
            return Err(GateError::config("graph.age_threshold", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationGraph {
    pub features: FeatureMatrix,
    /// D^{-1/2} A D^{-1/2}.
    pub adjacency: Array2<f64>,
    /// Sparsified, symmetrized A with self-loops, before normalization.
    pub raw_adjacency: Array2<f64>,
}

impl PopulationGraph {
    pub fn n_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    /// Write an edge list CSV (i, j, weight) for i <= j and a JSON header with
    /// N, k and sigma next to it. A `(config_hash, seed)` stamp adds a
    /// leading comment line to the CSV and the same fields to the header.
    pub fn dump(&self, csv_path: &Path, k: usize, sigma: f64, stamp: Option<(&str, u64)>) -> Result<()> {
        let mut body = String::new();
        if let Some((hash, seed)) = stamp {
            body.push_str(&format!("# config_hash={hash} seed={seed}\n"));
        }
        body.push_str("i,j,weight\n");
        let n = self.n_nodes();
        for i in 0..n {
            for j in i..n {
                let w = self.raw_adjacency[[i, j]];
                if w != 0.0 {
                    body.push_str(&format!("{i},{j},{w}\n"));
                }
            }
        }
        std::fs::write(csv_path, body).map_err(|e| GateError::io(csv_path, e))?;
        let header_path = csv_path.with_extension("json");
        let mut header = serde_json::json!({ "n": n, "k": k, "sigma": sigma });
        if let Some((hash, seed)) = stamp {
            header["config_hash"] = hash.into();
            header["seed"] = seed.into();
        }
        let text = serde_json::to_string_pretty(&header).map_err(|e| GateError::Parse(e.to_string()))?;
        std::fs::write(&header_path, text).map_err(|e| GateError::io(&header_path, e))
    }
}

fn squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let sq: Vec<f64> = x.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let gram = x.dot(&x.t());
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (sq[i] + sq[j] - 2.0 * gram[[i, j]]).max(0.0);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Bandwidth resolved from the configured mode.
pub fn kernel_sigma(features: &FeatureMatrix, config: &GraphConfig) -> Result<f64> {
    match config.sigma {
        SigmaMode::Fixed(s) => Ok(s),
        SigmaMode::MeanPairwiseDistance => {
            let n = features.n_subjects();
            if n < 2 {
                return Err(GateError::Shape("need at least 2 subjects".into()));
            }
            let d = squared_distances(features.rows.view());
            let mut total = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    total += d[[i, j]].sqrt();
                }
            }
            let sigma = total / (n * (n - 1) / 2) as f64;
            if sigma <= 0.0 {
                return Err(GateError::DegenerateKernel(
                    "all subjects have identical features; mean distance is 0".into(),
                ));
            }
            Ok(sigma)
        }
    }
}

/// S[i][j] = exp(-||x_i - x_j||^2 / (2 sigma^2)).
pub fn feature_similarity(features: &FeatureMatrix, config: &GraphConfig) -> Result<Array2<f64>> {
    if features.n_subjects() < 2 {
        return Err(GateError::Shape("need at least 2 subjects".into()));
    }
    let sigma = kernel_sigma(features, config)?;
    let denom = 2.0 * sigma * sigma;
    let mut s = squared_distances(features.rows.view()).mapv(|d| (-d / denom).exp());
    s.diag_mut().fill(1.0);
    Ok(s)
}

/// Mean phenotype agreement over the configured phenotype list.
pub fn phenotype_similarity(metas: &[SubjectMeta], config: &GraphConfig) -> Result<Array2<f64>> {
    let n = metas.len();
    let names = &config.phenotype_names;
    let mut values: Vec<Vec<&Phenotype>> = Vec::with_capacity(n);
    for (i, m) in metas.iter().enumerate() {
        let mut row = Vec::with_capacity(names.len());
        for name in names {
            let v = m
                .phenotypes
                .get(name)
                .ok_or_else(|| GateError::Schema(format!("subject {i} lacks phenotype `{name}`")))?;
            row.push(v);
        }
        values.push(row);
    }
    let mut out = Array2::<f64>::eye(n);
    if names.is_empty() {
        out.fill(1.0);
        return Ok(out);
    }
    let p = names.len() as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut matches = 0usize;
            for (a, b) in values[i].iter().zip(&values[j]) {
                let hit = match (a, b) {
                    (Phenotype::Categorical(x), Phenotype::Categorical(y)) => x == y,
                    (Phenotype::Real(x), Phenotype::Real(y)) => (x - y).abs() <= config.age_threshold,
                    _ => {
                        return Err(GateError::Schema(format!(
                            "phenotype kinds differ between subjects {i} and {j}"
                        )))
                    }
                };
                matches += usize::from(hit);
            }
            let v = matches as f64 / p;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

/// W = S o S~ without the diagonal, top-k per row (ties to lower column),
/// max-symmetrized, plus identity.
pub fn build_adjacency(s: &Array2<f64>, s_pheno: &Array2<f64>, config: &GraphConfig) -> Result<Array2<f64>> {
    let n = s.nrows();
    if s.dim() != (n, n) || s_pheno.dim() != (n, n) {
        return Err(GateError::Shape(format!(
            "similarity shapes {:?} and {:?} must be equal and square",
            s.dim(),
            s_pheno.dim()
        )));
    }
    config.validate(n)?;
    let w = s * s_pheno;
    let mut kept = Array2::<f64>::zeros((n, n));
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        // stable sort keeps lower column first among equal weights
        order.sort_by(|&a, &b| w[[i, b]].total_cmp(&w[[i, a]]));
        for &j in order.iter().take(config.k) {
            kept[[i, j]] = w[[i, j]];
        }
    }
    let mut a = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[[i, j]] = kept[[i, j]].max(kept[[j, i]]);
            }
        }
    }
    Ok(a)
}

pub fn normalize_adjacency(raw: &Array2<f64>) -> Result<Array2<f64>> {
    let n = raw.nrows();
    if raw.dim() != (n, n) {
        return Err(GateError::Shape(format!("adjacency {:?} is not square", raw.dim())));
    }
    let deg = raw.sum_axis(Axis(1));
    if let Some(i) = deg.iter().position(|&d| !(d > 0.0)) {
        return Err(GateError::Normalization(format!("node {i} has zero degree")));
    }
    let inv_sqrt = deg.mapv(|d| 1.0 / d.sqrt());
    let mut out = raw.clone();
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(out)
}

/// Graph from features plus a precomputed phenotype similarity.
pub fn build_population_graph_with(
    features: FeatureMatrix,
    pheno_sim: &Array2<f64>,
    config: &GraphConfig,
) -> Result<PopulationGraph> {
    let s = feature_similarity(&features, config)?;
    let raw = build_adjacency(&s, pheno_sim, config)?;
    let adjacency = normalize_adjacency(&raw)?;
    Ok(PopulationGraph {
        features,
        adjacency,
        raw_adjacency: raw,
    })
}

pub fn build_population_graph(
    features: FeatureMatrix,
    metas: &[SubjectMeta],
    config: &GraphConfig,
) -> Result<PopulationGraph> {
    if metas.len() != features.n_subjects() {
        return Err(GateError::Shape(format!(
            "{} metas for {} feature rows",
            metas.len(),
            features.n_subjects()
        )));
    }
    let pheno = phenotype_similarity(metas, config)?;
    build_population_graph_with(features, &pheno, config)
}

/// Random drop: zero feature columns with probability `p_feature` and
/// symmetric off-diagonal edge pairs with probability `p_edge`, then
/// renormalize. Self-loops are kept.
pub fn random_drop<R: Rng + ?Sized>(
    graph: &PopulationGraph,
    p_feature: f64,
    p_edge: f64,
    rng: &mut R,
) -> Result<PopulationGraph> {
    for (name, p) in [("drop_feature_prob", p_feature), ("drop_edge_prob", p_edge)] {
        if !(0.0..1.0).contains(&p) {
            return Err(GateError::config(name, format!("{p} not in [0, 1)")));
        }
    }
    let mut features = graph.features.clone();
    for mut col in features.rows.axis_iter_mut(Axis(1)) {
        if rng.random::<f64>() < p_feature {
            col.fill(0.0);
        }
    }
    let mut raw = graph.raw_adjacency.clone();
    let n = raw.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if raw[[i, j]] != 0.0 && rng.random::<f64>() < p_edge {
                raw[[i, j]] = 0.0;
                raw[[j, i]] = 0.0;
            }
        }
    }
    let adjacency = normalize_adjacency(&raw)?;
    Ok(PopulationGraph {
        features,
        adjacency,
        raw_adjacency: raw,
    })
}
