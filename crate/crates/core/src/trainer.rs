//! Two-stage training: self-supervised pretraining on augmented view pairs,
//! then graph-free fine-tuning on labeled windows, then windowed inference.
//! Also hosts the supervised GCN baseline.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, ViewSampler};
use crate::autodiff::Tape;
use crate::error::{GateError, Result};
use crate::graph::{build_population_graph_with, phenotype_similarity, GraphConfig, PopulationGraph};
use crate::model::{cca_ssl_loss_on, softmax, GateModel};
use crate::optim::AdamWState;
use crate::signal::{cohort_timepoints, upper_len, window_features, BoldRecording, SubjectMeta, WindowSpec};

/// Which subjects feed pretraining inside a cross-validation fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainScope {
    TrainFold,
    AllSubjects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub ssl_epochs: usize,
    pub ft_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub hidden_dim: usize,
    pub label_rate: f64,
    pub seed: u64,
    pub pretrain_scope: PretrainScope,
    pub augment: AugmentConfig,
    pub graph: GraphConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ssl_epochs: 100,
            ft_epochs: 100,
            lr: 1e-3,
            weight_decay: 1e-5,
            gamma: 0.2,
            hidden_dim: 256,
            label_rate: 0.2,
            seed: 0,
            pretrain_scope: PretrainScope::TrainFold,
            augment: AugmentConfig::default(),
            graph: GraphConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.label_rate > 0.0 && self.label_rate <= 1.0) {
            return Err(GateError::config("label_rate", format!("{} not in (0, 1]", self.label_rate)));
        }
        if self.ssl_epochs == 0 {
            return Err(GateError::config("ssl_epochs", "must be >= 1"));
        }
        if self.ft_epochs == 0 {
            return Err(GateError::config("ft_epochs", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GateError::config("lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(GateError::config("weight_decay", "must be >= 0"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(GateError::config("gamma", "must be >= 0"));
        }
        if self.hidden_dim == 0 {
            return Err(GateError::config("hidden_dim", "must be >= 1"));
        }
        self.augment.validate()
    }
}

/// Per-epoch losses and timings of both stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub ssl_loss: Vec<f64>,
    pub ft_loss: Vec<f64>,
    pub ft_accuracy: Vec<f64>,
    pub ssl_seconds: f64,
    pub ft_seconds: f64,
}

impl TrainTrace {
    /// `epoch,phase,loss,accuracy` rows; accuracy is empty for the SSL phase.
    pub fn to_csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::with_capacity(self.ssl_loss.len() + self.ft_loss.len());
        for (i, l) in self.ssl_loss.iter().enumerate() {
            rows.push(format!("{},ssl,{l},", i + 1));
        }
        for (i, (l, a)) in self.ft_loss.iter().zip(&self.ft_accuracy).enumerate() {
            rows.push(format!("{},finetune,{l},{a}", i + 1));
        }
        rows
    }
}

fn apply_step(model: &mut GateModel, opt: &mut AdamWState, grads: &[Array2<f64>]) -> Result<()> {
    let mut params = model.params_mut();
    let mut refs: Vec<&mut Array2<f64>> = params.iter_mut().map(|p| &mut **p).collect();
    opt.step(&mut refs, grads)?;
    if !model.is_finite() {
        return Err(GateError::Numerical("non-finite parameter after optimizer step".into()));
    }
    Ok(())
}

/// Self-supervised stage. Reads no labels.
pub fn ssl_pretrain<R: Rng>(
    cohort: &[BoldRecording],
    mut model: GateModel,
    config: &TrainConfig,
    rng: R,
    audit: Option<Box<dyn Write + Send + '_>>,
) -> Result<(GateModel, TrainTrace)> {
    let t0 = Instant::now();
    let mut sampler = ViewSampler::new(cohort, config.augment.clone(), config.graph.clone(), rng)?;
    if let Some(a) = audit {
        sampler = sampler.with_audit(a);
    }
    let mut opt = AdamWState::new(&model.param_shapes(), config.lr, config.weight_decay);
    let mut trace = TrainTrace::default();
    for _ in 0..config.ssl_epochs {
        let pair = sampler.next_view_pair()?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let za = bound.encode(&mut tape, &pair.view_a.features.rows, Some(&pair.view_a.adjacency))?;
        let zb = bound.encode(&mut tape, &pair.view_b.features.rows, Some(&pair.view_b.adjacency))?;
        let loss = cca_ssl_loss_on(&mut tape, za, zb, config.gamma)?;
        trace.ssl_loss.push(tape.item(loss));
        tape.backward(loss)?;
        apply_step(&mut model, &mut opt, &bound.grads(&tape))?;
    }
    trace.ssl_seconds = t0.elapsed().as_secs_f64();
    Ok((model, trace))
}

/// Every sliding window of a set of subjects, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowExamples {
    pub features: Array2<f64>,
    /// Label per row; empty when the subjects are unlabeled.
    pub labels: Vec<usize>,
    /// Position of the source subject in the input slice, per row.
    pub subject: Vec<usize>,
}

pub fn window_examples(subjects: &[&BoldRecording], window: WindowSpec, with_labels: bool) -> Result<WindowExamples> {
    if subjects.is_empty() {
        return Err(GateError::config("label_rate", "no subjects to expand into windows"));
    }
    let owned: Vec<BoldRecording> = subjects.iter().map(|&r| r.clone()).collect();
    let starts = window.starts(cohort_timepoints(&owned))?;
    let n_rois = crate::signal::cohort_rois(&owned)?;
    let m = starts.len();
    let mut features = Array2::zeros((subjects.len() * m, upper_len(n_rois)));
    for (w, &start) in starts.iter().enumerate() {
        let f = window_features(&owned, start, window.length)?;
        for i in 0..subjects.len() {
            features.row_mut(i * m + w).assign(&f.rows.row(i));
        }
    }
    let subject: Vec<usize> = (0..subjects.len()).flat_map(|i| std::iter::repeat_n(i, m)).collect();
    let labels = if with_labels {
        subject
            .iter()
            .map(|&i| {
                subjects[i]
                    .meta
                    .label
                    .ok_or_else(|| GateError::Label(format!("{} is unlabeled", subjects[i].subject_id)))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(WindowExamples {
        features,
        labels,
        subject,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FineTuneMode {
    /// Update encoder and head.
    #[default]
    Full,
    /// Update only the linear head.
    FrozenEncoder,
}

fn accuracy_of(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| usize::from(row[1] > row[0]) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Full-batch cross-entropy on labeled windows with the identity graph.
pub fn fine_tune(
    mut model: GateModel,
    examples: &WindowExamples,
    config: &TrainConfig,
    mode: FineTuneMode,
) -> Result<(GateModel, TrainTrace)> {
    if examples.labels.is_empty() {
        return Err(GateError::config("label_rate", "fine-tuning needs at least one labeled window"));
    }
    let t0 = Instant::now();
    let mut opt = AdamWState::new(&model.param_shapes(), config.lr, config.weight_decay);
    let mut trace = TrainTrace::default();
    for _ in 0..config.ft_epochs {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let logits = bound.classify(&mut tape, &examples.features)?;
        let loss = tape.softmax_cross_entropy(logits, &examples.labels)?;
        trace.ft_loss.push(tape.item(loss));
        trace.ft_accuracy.push(accuracy_of(tape.value(logits), &examples.labels));
        tape.backward(loss)?;
        let mut grads = bound.grads(&tape);
        if mode == FineTuneMode::FrozenEncoder {
            for g in grads.iter_mut().take(3) {
                g.fill(0.0);
            }
            let saved = [
                model.gcn_weight.clone(),
                model.linear_weight.clone(),
                model.linear_bias.clone(),
            ];
            apply_step(&mut model, &mut opt, &grads)?;
            // weight decay must not move frozen matrices either
            let [g, w, b] = saved;
            model.gcn_weight = g;
            model.linear_weight = w;
            model.linear_bias = b;
        } else {
            apply_step(&mut model, &mut opt, &grads)?;
        }
    }
    trace.ft_seconds = t0.elapsed().as_secs_f64();
    Ok((model, trace))
}

/// Average a per-row probability matrix over the rows of each subject.
pub fn average_by_subject(probs: &Array2<f64>, subject: &[usize], n_subjects: usize) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0f64; 2]; n_subjects];
    let mut counts = vec![0usize; n_subjects];
    for (row, &s) in probs.axis_iter(Axis(0)).zip(subject) {
        sums[s][0] += row[0];
        sums[s][1] += row[1];
        counts[s] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
        .collect()
}

/// Class 1 only when strictly more probable.
pub fn predicted_class(p: &[f64; 2]) -> usize {
    usize::from(p[1] > p[0])
}

/// Per-subject class probabilities averaged over all sliding windows, graph
/// replaced by the identity. All windows of all subjects form one batch.
pub fn predict(model: &GateModel, cohort: &[BoldRecording], window: WindowSpec) -> Result<Vec<[f64; 2]>> {
    let refs: Vec<&BoldRecording> = cohort.iter().collect();
    let ex = window_examples(&refs, window, false)?;
    let logits = crate::model::classify(model, &ex.features)?;
    Ok(average_by_subject(&softmax(&logits), &ex.subject, cohort.len()))
}

/// Stratified draw of ceil(rate * N) labeled subjects, at least one per
/// class. Returns sorted (labeled, unlabeled) positions.
pub fn split_labels<R: Rng + ?Sized>(labels: &[usize], label_rate: f64, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(label_rate > 0.0 && label_rate <= 1.0) {
        return Err(GateError::config("label_rate", format!("{label_rate} not in (0, 1]")));
    }
    let n = labels.len();
    let by_class: Vec<Vec<usize>> = (0..2)
        .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(GateError::Label(format!("label {bad}")));
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(GateError::config(
            "label_rate",
            "both classes must be present to draw a stratified labeled set",
        ));
    }
    let total = (((label_rate * n as f64) - 1e-9).ceil() as usize).clamp(2, n);
    // largest-remainder allocation with a floor of one per class
    let quotas: Vec<f64> = by_class
        .iter()
        .map(|c| total as f64 * c.len() as f64 / n as f64)
        .collect();
    let mut take: Vec<usize> = quotas
        .iter()
        .zip(&by_class)
        .map(|(q, c)| (q.floor() as usize).clamp(1, c.len()))
        .collect();
    while take.iter().sum::<usize>() < total {
        let c = (0..2)
            .filter(|&c| take[c] < by_class[c].len())
            .max_by(|&a, &b| (quotas[a] - take[a] as f64).total_cmp(&(quotas[b] - take[b] as f64)).then(b.cmp(&a)))
            .expect("total <= n");
        take[c] += 1;
    }
    while take.iter().sum::<usize>() > total {
        let c = if take[0] >= take[1] { 0 } else { 1 };
        take[c] -= 1;
    }
    let mut labeled = Vec::with_capacity(total);
    for (c, members) in by_class.iter().enumerate() {
        let mut pool = members.clone();
        pool.shuffle(rng);
        labeled.extend_from_slice(&pool[..take[c]]);
    }
    labeled.sort_unstable();
    let unlabeled = (0..n).filter(|i| labeled.binary_search(i).is_err()).collect();
    Ok((labeled, unlabeled))
}

/// Population graph of every sliding window over `nodes`, in window order.
pub fn window_graphs(nodes: &[BoldRecording], config: &TrainConfig) -> Result<Vec<PopulationGraph>> {
    let window = config.augment.window;
    let starts = window.starts(cohort_timepoints(nodes))?;
    let metas: Vec<SubjectMeta> = nodes.iter().map(|r| r.meta.clone()).collect();
    config.graph.validate(nodes.len())?;
    let pheno = phenotype_similarity(&metas, &config.graph)?;
    starts
        .iter()
        .map(|&s| build_population_graph_with(window_features(nodes, s, window.length)?, &pheno, &config.graph))
        .collect()
}

/// Supervised GCN on a transductive population graph: all `nodes` are in
/// the graph, the loss only sees `labeled` rows. One sliding-window graph
/// per epoch, drawn uniformly.
pub fn train_vanilla_gcn<R: Rng>(
    nodes: &[BoldRecording],
    graphs: &[PopulationGraph],
    labeled: &[usize],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(GateModel, TrainTrace)> {
    if labeled.is_empty() {
        return Err(GateError::config("label_rate", "no labeled nodes"));
    }
    if graphs.is_empty() || graphs.iter().any(|g| g.n_nodes() != nodes.len()) {
        return Err(GateError::Shape("window graphs do not match the node set".into()));
    }
    let t0 = Instant::now();
    let labels: Vec<usize> = labeled
        .iter()
        .map(|&i| nodes[i].meta.label.ok_or_else(|| GateError::Label(format!("{} is unlabeled", nodes[i].subject_id))))
        .collect::<Result<_>>()?;
    let d = graphs[0].features.dim();
    let mut model = GateModel::new(d, config.hidden_dim, rng);
    let mut opt = AdamWState::new(&model.param_shapes(), config.lr, config.weight_decay);
    let mut trace = TrainTrace::default();
    let pick = Array2::from_shape_fn((labeled.len(), nodes.len()), |(r, c)| f64::from(u8::from(labeled[r] == c)));
    for _ in 0..config.ft_epochs {
        let g = &graphs[rng.random_range(0..graphs.len())];
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let z = bound.encode(&mut tape, &g.features.rows, Some(&g.adjacency))?;
        let logits = bound.head(&mut tape, z)?;
        let sel = tape.leaf(pick.clone(), false);
        let picked = tape.matmul(sel, logits)?;
        let loss = tape.softmax_cross_entropy(picked, &labels)?;
        trace.ft_loss.push(tape.item(loss));
        trace.ft_accuracy.push(accuracy_of(tape.value(picked), &labels));
        tape.backward(loss)?;
        apply_step(&mut model, &mut opt, &bound.grads(&tape))?;
    }
    trace.ft_seconds = t0.elapsed().as_secs_f64();
    Ok((model, trace))
}

/// Per-node class probabilities of a graph model, averaged over the window
/// graphs.
pub fn predict_transductive(model: &GateModel, graphs: &[PopulationGraph]) -> Result<Vec<[f64; 2]>> {
    let n = graphs.first().map_or(0, PopulationGraph::n_nodes);
    let mut probs = vec![[0.0f64; 2]; n];
    for g in graphs {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let z = bound.encode(&mut tape, &g.features.rows, Some(&g.adjacency))?;
        let logits = bound.head(&mut tape, z)?;
        let p = softmax(tape.value(logits));
        for (i, row) in p.axis_iter(Axis(0)).enumerate() {
            probs[i][0] += row[0] / graphs.len() as f64;
            probs[i][1] += row[1] / graphs.len() as f64;
        }
    }
    Ok(probs)
}
