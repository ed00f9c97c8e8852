//! Stratified repeated cross-validation of GATE and the supervised GCN
//! baseline, and label-rate sweeps.
//!
//! Repeat `r` runs under seed `root + r`. Inside a repeat every stochastic
//! stage of fold `f` draws from its own named stream of that seed, so one
//! fold can be replayed alone and a sweep point equals a standalone
//! cross-validation at the same rate.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};
use crate::eval::metrics::{binary_metrics, BinaryMetrics, MetricsReport};
use crate::model::GateModel;
use crate::rng::stream;
use crate::signal::{cohort_rois, upper_len, BoldRecording};
use crate::trainer::{
    fine_tune, predict, predict_transductive, predicted_class, split_labels, ssl_pretrain, train_vanilla_gcn,
    window_examples, window_graphs, FineTuneMode, PretrainScope, TrainConfig, TrainTrace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gate,
    VanillaGcn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gate => "gate",
            Method::VanillaGcn => "vanilla_gcn",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gate" => Ok(Method::Gate),
            "vanilla_gcn" => Ok(Method::VanillaGcn),
            other => Err(GateError::config("methods", format!("unknown method `{other}`"))),
        }
    }
}

/// Fold index of every subject, per repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub root_seed: u64,
    pub assignments: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Each class is shuffled and dealt round-robin, the second class
    /// continuing where the first stopped, so fold sizes and per-fold class
    /// counts differ by at most one.
    pub fn stratified(labels: &[usize], n_folds: usize, n_repeats: usize, root_seed: u64) -> Result<Self> {
        if n_folds < 2 {
            return Err(GateError::config("folds", "need at least 2 folds"));
        }
        if n_repeats == 0 {
            return Err(GateError::config("repeats", "need at least 1 repeat"));
        }
        if labels.len() < n_folds {
            return Err(GateError::config("folds", format!("{n_folds} folds for {} subjects", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(GateError::Label(format!("label {l}")));
        }
        let assignments = (0..n_repeats)
            .map(|r| {
                let mut rng = stream(repeat_seed(root_seed, r), "folds", &[]);
                let mut fold = vec![0; labels.len()];
                let mut next = 0;
                for c in 0..2 {
                    let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                    members.shuffle(&mut rng);
                    for i in members {
                        fold[i] = next % n_folds;
                        next += 1;
                    }
                }
                fold
            })
            .collect();
        Ok(Self {
            n_folds,
            root_seed,
            assignments,
        })
    }

    pub fn n_repeats(&self) -> usize {
        self.assignments.len()
    }

    /// (train, test) positions of one fold, ascending.
    pub fn split(&self, repeat: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let a = &self.assignments[repeat];
        let test = (0..a.len()).filter(|&i| a[i] == fold).collect();
        let train = (0..a.len()).filter(|&i| a[i] != fold).collect();
        (train, test)
    }
}

pub fn repeat_seed(root: u64, repeat: usize) -> u64 {
    root.wrapping_add(repeat as u64)
}

/// Outcome of one (method, rate, repeat, fold) unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub method: Method,
    pub rate: f64,
    pub repeat: usize,
    pub seed: u64,
    pub fold: usize,
    pub metrics: BinaryMetrics,
    #[serde(skip)]
    pub trace: TrainTrace,
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub method: Method,
    pub rate: f64,
    pub report: MetricsReport,
    pub folds: Vec<FoldResult>,
}

fn labels_of(cohort: &[BoldRecording]) -> Result<Vec<usize>> {
    cohort
        .iter()
        .map(|r| r.meta.label.ok_or_else(|| GateError::Label(format!("{} is unlabeled", r.subject_id))))
        .collect()
}

fn subset(cohort: &[BoldRecording], idx: &[usize]) -> Vec<BoldRecording> {
    idx.iter().map(|&i| cohort[i].clone()).collect()
}

fn rate_key(rate: f64) -> u64 {
    rate.to_bits()
}

/// Pretrained GATE encoder of one fold, before fine-tuning.
pub fn pretrain_fold(
    cohort: &[BoldRecording],
    plan: &FoldPlan,
    repeat: usize,
    fold: usize,
    config: &TrainConfig,
    audit: Option<Box<dyn Write + Send + '_>>,
) -> Result<(GateModel, TrainTrace)> {
    let seed = repeat_seed(plan.root_seed, repeat);
    let (train, _) = plan.split(repeat, fold);
    let pool = match config.pretrain_scope {
        PretrainScope::TrainFold => subset(cohort, &train),
        PretrainScope::AllSubjects => cohort.to_vec(),
    };
    let d = upper_len(cohort_rois(cohort)?);
    let init = GateModel::new(d, config.hidden_dim, &mut stream(seed, "init", &[fold as u64]));
    ssl_pretrain(&pool, init, config, stream(seed, "augment", &[fold as u64]), audit)
}

/// Cohort positions of the labeled training subjects of one fold at one rate.
pub fn labeled_subjects(cohort: &[BoldRecording], plan: &FoldPlan, repeat: usize, fold: usize, rate: f64) -> Result<Vec<usize>> {
    let labels = labels_of(cohort)?;
    let seed = repeat_seed(plan.root_seed, repeat);
    let (train, _) = plan.split(repeat, fold);
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let (lab, _) = split_labels(&train_labels, rate, &mut stream(seed, "split", &[fold as u64, rate_key(rate)]))?;
    Ok(lab.iter().map(|&k| train[k]).collect())
}

/// Train one method on one fold at one rate. GATE starts from `pretrained`,
/// which the baseline ignores.
pub fn train_fold(
    cohort: &[BoldRecording],
    plan: &FoldPlan,
    repeat: usize,
    fold: usize,
    method: Method,
    rate: f64,
    pretrained: Option<&GateModel>,
    config: &TrainConfig,
) -> Result<(GateModel, TrainTrace)> {
    let labeled = labeled_subjects(cohort, plan, repeat, fold, rate)?;
    match method {
        Method::Gate => {
            let start = pretrained
                .ok_or_else(|| GateError::Incompatible("GATE fine-tuning needs a pretrained encoder".into()))?;
            let refs: Vec<&BoldRecording> = labeled.iter().map(|&i| &cohort[i]).collect();
            let examples = window_examples(&refs, config.augment.window, true)?;
            fine_tune(start.clone(), &examples, config, FineTuneMode::Full)
        }
        Method::VanillaGcn => {
            let seed = repeat_seed(plan.root_seed, repeat);
            let mut rng = stream(seed, "vanilla", &[fold as u64, rate_key(rate)]);
            train_vanilla_gcn(cohort, &window_graphs(cohort, config)?, &labeled, config, &mut rng)
        }
    }
}

/// Test-fold metrics of a trained model. GATE predicts graph-free from
/// the test subjects' windows; the baseline reads its transductive
/// predictions for the test nodes.
pub fn score_fold(
    cohort: &[BoldRecording],
    plan: &FoldPlan,
    repeat: usize,
    fold: usize,
    method: Method,
    model: &GateModel,
    config: &TrainConfig,
) -> Result<BinaryMetrics> {
    let labels = labels_of(cohort)?;
    let (_, test) = plan.split(repeat, fold);
    let probs: Vec<[f64; 2]> = match method {
        Method::Gate => predict(model, &subset(cohort, &test), config.augment.window)?,
        Method::VanillaGcn => {
            let all = predict_transductive(model, &window_graphs(cohort, config)?)?;
            test.iter().map(|&i| all[i]).collect()
        }
    };
    let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    let predicted: Vec<usize> = probs.iter().map(predicted_class).collect();
    binary_metrics(&scores, &predicted, &test.iter().map(|&i| labels[i]).collect::<Vec<_>>())
}

/// Group per-unit results into sweep rows, rate-major then method, folds in
/// (repeat, fold) order.
pub fn collect_sweep(rates: &[f64], methods: &[Method], mut results: Vec<FoldResult>) -> Vec<SweepEntry> {
    results.sort_by_key(|r| (r.repeat, r.fold));
    let mut entries = Vec::with_capacity(rates.len() * methods.len());
    for &rate in rates {
        for &m in methods {
            let folds: Vec<FoldResult> = results.iter().filter(|fr| fr.method == m && fr.rate == rate).cloned().collect();
            let units: Vec<BinaryMetrics> = folds.iter().map(|f| f.metrics).collect();
            entries.push(SweepEntry {
                method: m,
                rate,
                report: MetricsReport::from_units(&units),
                folds,
            });
        }
    }
    entries
}

pub(crate) fn validate_rates(rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(GateError::config("rates", "empty"));
    }
    for &r in rates {
        if !(r > 0.0 && r <= 1.0) {
            return Err(GateError::config("rates", format!("{r} not in (0, 1]")));
        }
    }
    Ok(())
}

/// Every method at every rate over every (repeat, fold). GATE pretraining
/// does not depend on the rate and runs once per fold.
pub fn label_rate_sweep(
    cohort: &[BoldRecording],
    rates: &[f64],
    methods: &[Method],
    plan: &FoldPlan,
    config: &TrainConfig,
) -> Result<Vec<SweepEntry>> {
    config.validate()?;
    validate_rates(rates)?;
    labels_of(cohort)?;
    if plan.assignments.iter().any(|a| a.len() != cohort.len()) {
        return Err(GateError::Shape("fold plan does not match cohort size".into()));
    }
    let units: Vec<(usize, usize)> = (0..plan.n_repeats())
        .flat_map(|r| (0..plan.n_folds).map(move |f| (r, f)))
        .collect();
    let per_unit: Vec<Vec<FoldResult>> = units
        .par_iter()
        .map(|&(r, f)| -> Result<Vec<FoldResult>> {
            let pretrained = if methods.contains(&Method::Gate) {
                Some(pretrain_fold(cohort, plan, r, f, config, None)?)
            } else {
                None
            };
            let mut out = Vec::new();
            for &rate in rates {
                for &m in methods {
                    let (model, trace) = train_fold(cohort, plan, r, f, m, rate, pretrained.as_ref().map(|p| &p.0), config)?;
                    let metrics = score_fold(cohort, plan, r, f, m, &model, config)?;
                    let trace = match (&pretrained, m) {
                        (Some((_, ssl)), Method::Gate) => TrainTrace {
                            ssl_loss: ssl.ssl_loss.clone(),
                            ssl_seconds: ssl.ssl_seconds,
                            ..trace
                        },
                        _ => trace,
                    };
                    out.push(FoldResult {
                        method: m,
                        rate,
                        repeat: r,
                        seed: repeat_seed(plan.root_seed, r),
                        fold: f,
                        metrics,
                        trace,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(collect_sweep(rates, methods, per_unit.into_iter().flatten().collect()))
}

/// One method at `config.label_rate`.
pub fn cross_validate(
    cohort: &[BoldRecording],
    config: &TrainConfig,
    method: Method,
    plan: &FoldPlan,
) -> Result<SweepEntry> {
    let mut entries = label_rate_sweep(cohort, &[config.label_rate], &[method], plan, config)?;
    Ok(entries.remove(0))
}

/// Mean accuracy of `a` minus that of `b` at one rate.
pub fn accuracy_gap(entries: &[SweepEntry], rate: f64, a: Method, b: Method) -> Option<f64> {
    let acc = |m: Method| {
        entries
            .iter()
            .find(|e| e.method == m && e.rate == rate)
            .map(|e| e.report.accuracy.mean)
    };
    Some(acc(a)? - acc(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<usize> = (0..53).map(|i| usize::from(i % 3 == 0)).collect();
        let plan = FoldPlan::stratified(&labels, 5, 3, 9).unwrap();
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        for r in 0..3 {
            let mut seen = vec![0; labels.len()];
            for f in 0..5 {
                let (train, test) = plan.split(r, f);
                assert_eq!(train.len() + test.len(), labels.len());
                for &i in &test {
                    seen[i] += 1;
                }
                let expected = pos / 5.0;
                let got = test.iter().filter(|&&i| labels[i] == 1).count() as f64;
                assert!((got - expected).abs() <= 1.0);
                assert!((test.len() as f64 - 53.0 / 5.0).abs() <= 1.0);
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
        assert_eq!(plan, FoldPlan::stratified(&labels, 5, 3, 9).unwrap());
        assert_ne!(plan.assignments[0], plan.assignments[1]);
    }

    #[test]
    fn fifty_subjects_give_ten_per_fold() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let plan = FoldPlan::stratified(&labels, 5, 1, 0).unwrap();
        for f in 0..5 {
            assert_eq!(plan.split(0, f).1.len(), 10);
        }
    }

    #[test]
    fn plan_errors() {
        assert!(FoldPlan::stratified(&[0, 1], 1, 1, 0).is_err());
        assert!(FoldPlan::stratified(&[0, 1], 5, 1, 0).is_err());
        assert!(FoldPlan::stratified(&[0, 1, 0, 1, 1], 2, 0, 0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Gate, Method::VanillaGcn] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("dgi".parse::<Method>().is_err());
    }
}
