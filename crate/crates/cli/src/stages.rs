//! Pipeline stages on persisted artifacts. `run` is `pretrain` followed by
//! `finetune`, both going through the checkpoint files, so a staged run and a
//! single run read identical weights.
//!
//! Output layout under the output directory:
//!
//! ```text
//! config.resolved.toml
//! pretrain/r{r}_f{f}.{ckpt.json,trace.csv,audit.jsonl}
//! finetune/{method}/rate{rate}/r{r}_f{f}.{ckpt.json,trace.csv}
//! report.csv  report_tidy.csv  report.json
//! diagnostics/{gamma_ablation.csv,svd.csv,svd_summary.csv}  acceptance.csv
//! ```

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gate_core::eval::report::{singular_values_csv, sweep_csv, sweep_json, tidy_csv, trace_csv, write_text};
use gate_core::eval::{
    collect_sweep, label_rate_sweep, pretrain_fold, repeat_seed, score_fold, singular_value_profile, trailing_sum,
    train_fold, FoldPlan, FoldResult, Method, RunStamp, SweepEntry,
};
use gate_core::graph::{build_population_graph, kernel_sigma, PopulationGraph};
use gate_core::io::{read_manifest, write_manifest, Checkpoint};
use gate_core::model::{encode, GateModel};
use gate_core::rng::stream;
use gate_core::signal::{cohort_rois, upper_len, window_features, BoldRecording};
use gate_core::synth::generate_cohort;
use gate_core::trainer::{TrainConfig, TrainTrace};
use gate_core::GateError;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Rates, gamma and trailing-fraction used by the acceptance report.
const ACCEPT_RATES: [f64; 3] = [0.1, 0.2, 0.8];
const ACCEPT_GAMMA: f64 = 0.2;
const ACCEPT_SMALL_GAMMA: f64 = 0.001;
const ACCEPT_MIN_GAP: f64 = 0.05;

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub stamp: RunStamp,
    pub train: TrainConfig,
    pub cohort: Vec<BoldRecording>,
    pub plan: FoldPlan,
}

impl Experiment {
    /// Load or synthesize the cohort, plan the folds and write the resolved
    /// config snapshot.
    pub fn prepare(cfg: ExperimentConfig) -> CliResult<Self> {
        let hash = cfg.hash()?;
        let cohort = match &cfg.data.manifest {
            Some(m) => read_manifest(m)?,
            None => generate_cohort(&cfg.synth.to_core(cfg.seed))?,
        };
        cfg.graph.validate(cohort.len())?;
        let labels = cohort
            .iter()
            .map(|r| r.meta.label.ok_or_else(|| GateError::Label(format!("subject `{}` has no label", r.subject_id))))
            .collect::<Result<Vec<_>, _>>()?;
        let plan = FoldPlan::stratified(&labels, cfg.eval.folds, cfg.eval.repeats, cfg.seed)?;
        let exp = Self {
            stamp: RunStamp::new(hash, cfg.seed),
            train: cfg.train_config(),
            cohort,
            plan,
            cfg,
        };
        write_text(&exp.path("config.resolved.toml"), &exp.cfg.snapshot(&exp.stamp.config_hash)?)?;
        Ok(exp)
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.cfg.output.dir.join(rel)
    }

    fn units(&self) -> Vec<(usize, usize)> {
        (0..self.plan.n_repeats())
            .flat_map(|r| (0..self.plan.n_folds).map(move |f| (r, f)))
            .collect()
    }

    fn pretrain_path(&self, r: usize, f: usize, ext: &str) -> PathBuf {
        self.path(format!("pretrain/r{r}_f{f}.{ext}"))
    }

    fn finetune_path(&self, m: Method, rate: f64, r: usize, f: usize, ext: &str) -> PathBuf {
        self.path(format!("finetune/{}/rate{rate}/r{r}_f{f}.{ext}", m.name()))
    }

    /// Load a checkpoint written under this exact config and seed.
    pub fn load_checkpoint(&self, path: &Path) -> CliResult<GateModel> {
        if !path.exists() {
            return Err(CliError::MissingArtifact(path.display().to_string()));
        }
        let ckpt = Checkpoint::load(path, Some(&self.stamp.config_hash))?;
        if ckpt.seed != self.stamp.seed {
            return Err(GateError::Incompatible(format!(
                "{} was written with seed {}, current seed is {}",
                path.display(),
                ckpt.seed,
                self.stamp.seed
            ))
            .into());
        }
        let model = ckpt.to_model()?;
        let d = upper_len(cohort_rois(&self.cohort)?);
        if model.input_dim() != d {
            return Err(GateError::Incompatible(format!(
                "{} expects {} input features, cohort has {d}",
                path.display(),
                model.input_dim()
            ))
            .into());
        }
        Ok(model)
    }

    fn save(&self, model: &GateModel, stage: &str, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| GateError::io(dir, e))?;
        }
        Checkpoint::from_model(model, &self.stamp.config_hash, self.stamp.seed, stage).save(path)?;
        Ok(())
    }

    fn needs_pretraining(&self) -> bool {
        self.cfg.eval.methods.contains(&Method::Gate) || self.cfg.diagnostics.svd
    }

    /// Window-0 population graph of the whole cohort.
    fn first_window_graph(&self) -> CliResult<PopulationGraph> {
        let metas: Vec<_> = self.cohort.iter().map(|r| r.meta.clone()).collect();
        let features = window_features(&self.cohort, 0, self.cfg.augment.window.length)?;
        Ok(build_population_graph(features, &metas, &self.cfg.graph)?)
    }
}

/// Write the cohort as a `gate-bold-v1` manifest.
pub fn synth(exp: &Experiment) -> CliResult<PathBuf> {
    if exp.cfg.data.manifest.is_some() {
        return Err(GateError::config("data.manifest", "synth generates a cohort; remove the manifest").into());
    }
    Ok(write_manifest(&exp.path("cohort"), &exp.cohort, Some(&exp.stamp.config_hash), Some(exp.stamp.seed))?)
}

pub fn dump_graph(exp: &Experiment) -> CliResult<PathBuf> {
    let g = exp.first_window_graph()?;
    let sigma = kernel_sigma(&g.features, &exp.cfg.graph)?;
    let path = exp.path("graph/window0.csv");
    std::fs::create_dir_all(exp.path("graph")).map_err(|e| GateError::io(exp.path("graph"), e))?;
    g.dump(&path, exp.cfg.graph.k, sigma, Some((&exp.stamp.config_hash, exp.stamp.seed)))?;
    Ok(path)
}

fn audit_sink(exp: &Experiment, r: usize, f: usize) -> CliResult<Option<Box<dyn Write + Send>>> {
    if !exp.cfg.output.audit {
        return Ok(None);
    }
    let path = exp.pretrain_path(r, f, "audit.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| GateError::io(&path, e))?);
    let header = serde_json::json!({
        "config_hash": exp.stamp.config_hash,
        "seed": exp.stamp.seed,
        "repeat": r,
        "fold": f,
    });
    writeln!(w, "{header}").map_err(|e| GateError::io(&path, e))?;
    Ok(Some(Box::new(w)))
}

/// Self-supervised pretraining of every (repeat, fold).
pub fn pretrain(exp: &Experiment) -> CliResult<()> {
    let dir = exp.path("pretrain");
    std::fs::create_dir_all(&dir).map_err(|e| GateError::io(&dir, e))?;
    let trained = exp
        .units()
        .par_iter()
        .map(|&(r, f)| -> CliResult<(usize, usize, GateModel, TrainTrace)> {
            let sink = audit_sink(exp, r, f)?;
            let (model, trace) = pretrain_fold(&exp.cohort, &exp.plan, r, f, &exp.train, sink)?;
            Ok((r, f, model, trace))
        })
        .collect::<CliResult<Vec<_>>>()?;
    for (r, f, model, trace) in trained {
        exp.save(&model, "pretrained", &exp.pretrain_path(r, f, "ckpt.json"))?;
        write_text(&exp.pretrain_path(r, f, "trace.csv"), &trace_csv(&trace, &exp.stamp))?;
    }
    Ok(())
}

/// Fine-tune GATE from the pretrained checkpoints and train the baseline,
/// at every configured rate; score and report.
pub fn finetune(exp: &Experiment) -> CliResult<Vec<SweepEntry>> {
    let methods = &exp.cfg.eval.methods;
    let rates = &exp.cfg.eval.rates;
    let per_unit = exp
        .units()
        .par_iter()
        .map(|&(r, f)| -> CliResult<Vec<(FoldResult, GateModel)>> {
            let pretrained = if methods.contains(&Method::Gate) {
                Some(exp.load_checkpoint(&exp.pretrain_path(r, f, "ckpt.json"))?)
            } else {
                None
            };
            let mut out = Vec::new();
            for &rate in rates {
                for &m in methods {
                    let (model, trace) =
                        train_fold(&exp.cohort, &exp.plan, r, f, m, rate, pretrained.as_ref(), &exp.train)?;
                    let metrics = score_fold(&exp.cohort, &exp.plan, r, f, m, &model, &exp.train)?;
                    let result = FoldResult {
                        method: m,
                        rate,
                        repeat: r,
                        seed: repeat_seed(exp.plan.root_seed, r),
                        fold: f,
                        metrics,
                        trace,
                    };
                    out.push((result, model));
                }
            }
            Ok(out)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut results = Vec::new();
    for (res, model) in per_unit.into_iter().flatten() {
        let (m, rate, r, f) = (res.method, res.rate, res.repeat, res.fold);
        exp.save(&model, "finetuned", &exp.finetune_path(m, rate, r, f, "ckpt.json"))?;
        write_text(&exp.finetune_path(m, rate, r, f, "trace.csv"), &trace_csv(&res.trace, &exp.stamp))?;
        results.push(res);
    }
    let entries = collect_sweep(rates, methods, results);
    write_reports(exp, &entries)?;
    Ok(entries)
}

/// Re-score saved fine-tuned checkpoints and rewrite the reports.
pub fn evaluate(exp: &Experiment) -> CliResult<Vec<SweepEntry>> {
    let methods = &exp.cfg.eval.methods;
    let rates = &exp.cfg.eval.rates;
    let per_unit = exp
        .units()
        .par_iter()
        .map(|&(r, f)| -> CliResult<Vec<FoldResult>> {
            let mut out = Vec::new();
            for &rate in rates {
                for &m in methods {
                    let model = exp.load_checkpoint(&exp.finetune_path(m, rate, r, f, "ckpt.json"))?;
                    let metrics = score_fold(&exp.cohort, &exp.plan, r, f, m, &model, &exp.train)?;
                    out.push(FoldResult {
                        method: m,
                        rate,
                        repeat: r,
                        seed: repeat_seed(exp.plan.root_seed, r),
                        fold: f,
                        metrics,
                        trace: TrainTrace::default(),
                    });
                }
            }
            Ok(out)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let entries = collect_sweep(rates, methods, per_unit.into_iter().flatten().collect());
    write_reports(exp, &entries)?;
    Ok(entries)
}

fn write_reports(exp: &Experiment, entries: &[SweepEntry]) -> CliResult<()> {
    write_text(&exp.path("report.csv"), &sweep_csv(entries, &exp.stamp))?;
    write_text(&exp.path("report_tidy.csv"), &tidy_csv(entries, &exp.stamp))?;
    write_text(&exp.path("report.json"), &(sweep_json(entries, &exp.stamp)? + "\n"))?;
    Ok(())
}

/// Pretrain, fine-tune, then the configured diagnostics.
pub fn run(exp: &Experiment) -> CliResult<Vec<SweepEntry>> {
    if exp.cfg.output.graph_dump {
        dump_graph(exp)?;
    }
    if exp.needs_pretraining() {
        pretrain(exp)?;
    }
    let entries = finetune(exp)?;
    diagnostics(exp, &entries)?;
    Ok(entries)
}

/// Singular values of `model`'s embedding of the window-0 cohort graph.
fn embedding_spectrum(model: &GateModel, graph: &PopulationGraph) -> CliResult<Vec<f64>> {
    let z = encode(model, &graph.features.rows, Some(&graph.adjacency))?;
    Ok(singular_value_profile(&z)?)
}

pub fn svd_diag(exp: &Experiment, checkpoint: &Path, output: Option<&Path>) -> CliResult<PathBuf> {
    let model = exp.load_checkpoint(checkpoint)?;
    let sv = embedding_spectrum(&model, &exp.first_window_graph()?)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = checkpoint.file_name().and_then(|s| s.to_str()).unwrap_or("checkpoint");
            let stem = stem.strip_suffix(".ckpt.json").unwrap_or(stem);
            exp.path(format!("svd/{stem}.csv"))
        }
    };
    write_text(&path, &singular_values_csv(&sv, &exp.stamp))?;
    Ok(path)
}

struct GammaRow {
    gamma: f64,
    accuracy: f64,
}

struct SpectrumSummary {
    pretrained: f64,
    random: f64,
    /// Mean trailing sum per fine-tuned (method, rate).
    finetuned: Vec<(Method, f64, f64)>,
}

fn diagnostics(exp: &Experiment, entries: &[SweepEntry]) -> CliResult<()> {
    let d = &exp.cfg.diagnostics;
    let gammas = if d.gamma_ablation.is_empty() { Vec::new() } else { gamma_ablation(exp)? };
    let spectrum = if d.svd { Some(svd_report(exp)?) } else { None };
    if d.acceptance {
        let spectrum = spectrum.ok_or_else(|| GateError::config("diagnostics.acceptance", "needs svd = true"))?;
        acceptance_report(exp, entries, &gammas, &spectrum)?;
    }
    Ok(())
}

fn gamma_ablation(exp: &Experiment) -> CliResult<Vec<GammaRow>> {
    let rate = exp.cfg.train.label_rate;
    let mut csv = exp.stamp.comment();
    csv.push_str("gamma,rate,accuracy_mean,accuracy_std,auc_mean,auc_std\n");
    let mut rows = Vec::new();
    for &gamma in &exp.cfg.diagnostics.gamma_ablation {
        let cfg = TrainConfig { gamma, ..exp.train.clone() };
        let e = label_rate_sweep(&exp.cohort, &[rate], &[Method::Gate], &exp.plan, &cfg)?;
        let rep = &e[0].report;
        let _ = writeln!(csv, "{gamma},{rate},{},{},{},{}", rep.accuracy.mean, rep.accuracy.std, rep.auc.mean, rep.auc.std);
        rows.push(GammaRow {
            gamma,
            accuracy: rep.accuracy.mean,
        });
    }
    write_text(&exp.path("diagnostics/gamma_ablation.csv"), &csv)?;
    Ok(rows)
}

/// Spectra on the window-0 graph of the whole cohort: every pretrained fold
/// encoder, the initialization it started from, and every fine-tuned model.
fn svd_report(exp: &Experiment) -> CliResult<SpectrumSummary> {
    let graph = exp.first_window_graph()?;
    let d = upper_len(cohort_rois(&exp.cohort)?);
    let h = exp.train.hidden_dim;
    let units = exp.units();
    let mut encoders: Vec<(String, Option<(Method, f64)>)> = vec![("pretrained".into(), None), ("random".into(), None)];
    for &rate in &exp.cfg.eval.rates {
        for &m in &exp.cfg.eval.methods {
            encoders.push((format!("{}_rate{rate}", m.name()), Some((m, rate))));
        }
    }
    let spectra = units
        .par_iter()
        .map(|&(r, f)| -> CliResult<Vec<Vec<f64>>> {
            encoders
                .iter()
                .map(|(name, finetuned)| {
                    let model = match (name.as_str(), finetuned) {
                        (_, Some((m, rate))) => exp.load_checkpoint(&exp.finetune_path(*m, *rate, r, f, "ckpt.json"))?,
                        ("pretrained", None) => exp.load_checkpoint(&exp.pretrain_path(r, f, "ckpt.json"))?,
                        _ => GateModel::new(d, h, &mut stream(repeat_seed(exp.plan.root_seed, r), "init", &[f as u64])),
                    };
                    embedding_spectrum(&model, &graph)
                })
                .collect()
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut csv = exp.stamp.comment();
    csv.push_str("repeat,fold,encoder,index,singular_value\n");
    let mut tails = vec![0.0; encoders.len()];
    for (&(r, f), per_encoder) in units.iter().zip(&spectra) {
        for (k, ((name, _), sv)) in encoders.iter().zip(per_encoder).enumerate() {
            for (i, v) in sv.iter().enumerate() {
                let _ = writeln!(csv, "{r},{f},{name},{i},{v}");
            }
            tails[k] += trailing_sum(sv, h / 2) / units.len() as f64;
        }
    }
    write_text(&exp.path("diagnostics/svd.csv"), &csv)?;
    let mut summary = exp.stamp.comment();
    summary.push_str("encoder,mean_trailing_sum,trailing_count\n");
    for ((name, _), t) in encoders.iter().zip(&tails) {
        let _ = writeln!(summary, "{name},{t},{}", h / 2);
    }
    write_text(&exp.path("diagnostics/svd_summary.csv"), &summary)?;
    Ok(SpectrumSummary {
        pretrained: tails[0],
        random: tails[1],
        finetuned: encoders[2..]
            .iter()
            .zip(&tails[2..])
            .map(|((_, k), &t)| {
                let (m, rate) = k.expect("fine-tuned encoder");
                (m, rate, t)
            })
            .collect(),
    })
}

fn mean_accuracy(entries: &[SweepEntry], m: Method, rate: f64) -> CliResult<f64> {
    entries
        .iter()
        .find(|e| e.method == m && e.rate == rate)
        .map(|e| e.report.accuracy.mean)
        .ok_or_else(|| GateError::config("diagnostics.acceptance", format!("no {} result at rate {rate}", m.name())).into())
}

/// Requirements the acceptance report places on the rest of the config.
pub fn check_acceptance_config(cfg: &ExperimentConfig) -> CliResult<()> {
    let fail = |why: String| -> CliResult<()> { Err(GateError::config("diagnostics.acceptance", why).into()) };
    for r in ACCEPT_RATES {
        if !cfg.eval.rates.contains(&r) {
            return fail(format!("eval.rates must include {r}"));
        }
    }
    if !(cfg.eval.methods.contains(&Method::Gate) && cfg.eval.methods.contains(&Method::VanillaGcn)) {
        return fail("eval.methods must include gate and vanilla_gcn".into());
    }
    if cfg.train.gamma != ACCEPT_GAMMA || cfg.train.label_rate != 0.2 {
        return fail(format!("needs train.gamma = {ACCEPT_GAMMA} and train.label_rate = 0.2"));
    }
    if !cfg.diagnostics.gamma_ablation.contains(&ACCEPT_SMALL_GAMMA) {
        return fail(format!("diagnostics.gamma_ablation must include {ACCEPT_SMALL_GAMMA}"));
    }
    if !cfg.diagnostics.svd {
        return fail("needs diagnostics.svd = true".into());
    }
    Ok(())
}

fn acceptance_report(exp: &Experiment, entries: &[SweepEntry], gammas: &[GammaRow], spectrum: &SpectrumSummary) -> CliResult<()> {
    let gap = |rate| -> CliResult<f64> {
        Ok(mean_accuracy(entries, Method::Gate, rate)? - mean_accuracy(entries, Method::VanillaGcn, rate)?)
    };
    let small = gammas
        .iter()
        .find(|g| g.gamma == ACCEPT_SMALL_GAMMA)
        .ok_or_else(|| GateError::config("diagnostics.acceptance", "missing small-gamma run"))?;
    let gamma_diff = mean_accuracy(entries, Method::Gate, 0.2)? - small.accuracy;
    let gap_slope = gap(0.1)? - gap(0.8)?;
    let svd_diff = spectrum.pretrained - spectrum.random;
    let gap20 = gap(0.2)?;
    let tail_at = |m: Method| spectrum.finetuned.iter().find(|(mm, r, _)| *mm == m && *r == 0.2).map(|x| x.2);
    let finetuned_diff = tail_at(Method::Gate).zip(tail_at(Method::VanillaGcn)).map(|(g, v)| g - v).unwrap_or(f64::NAN);
    let rows = [
        ("5", "gate minus vanilla accuracy at rate 0.2", gap20, format!(">= {ACCEPT_MIN_GAP}"), gap20 >= ACCEPT_MIN_GAP),
        ("5", "gap at rate 0.1 minus gap at rate 0.8", gap_slope, ">= 0".to_string(), gap_slope >= 0.0),
        ("6", "pretrained minus random trailing singular value sum", svd_diff, "< 0".to_string(), svd_diff < 0.0),
        (
            "6-supplementary",
            "fine-tuned gate minus vanilla trailing singular value sum at rate 0.2",
            finetuned_diff,
            "< 0".to_string(),
            finetuned_diff < 0.0,
        ),
        ("7", "gate accuracy at gamma 0.2 minus gamma 0.001", gamma_diff, "> 0".to_string(), gamma_diff > 0.0),
    ];
    let mut csv = exp.stamp.comment();
    csv.push_str("criterion,check,value,threshold,pass\n");
    for (id, check, value, threshold, pass) in &rows {
        let _ = writeln!(csv, "{id},{check},{value},{threshold},{pass}");
        println!("criterion {id} {}: {check} = {value:.4} (need {threshold})", if *pass { "PASS" } else { "FAIL" });
    }
    write_text(&exp.path("acceptance.csv"), &csv)?;
    Ok(())
}
