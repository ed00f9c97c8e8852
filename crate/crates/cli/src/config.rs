//! Experiment configuration: a TOML file whose sections map onto the core
//! configuration types. Every section and key is optional; missing ones take
//! the core defaults. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use gate_core::augment::AugmentConfig;
use gate_core::eval::Method;
use gate_core::graph::GraphConfig;
use gate_core::synth::SynthConfig;
use gate_core::trainer::{PretrainScope, TrainConfig};
use gate_core::GateError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthSection,
    pub graph: GraphConfig,
    pub augment: AugmentConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub diagnostics: DiagnosticsConfig,
    /// Not part of the config hash.
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            synth: SynthSection::default(),
            graph: GraphConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `gate-bold-v1` manifest; relative to the config file. When absent the
    /// cohort is synthesized from `[synth]` under the root seed.
    pub manifest: Option<PathBuf>,
}

/// Generator settings. The cohort seed is the root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_subjects: usize,
    pub n_rois: usize,
    pub n_timepoints: usize,
    pub class_gap: f64,
    pub spurious_strength: f64,
    pub noise_std: f64,
    pub n_sources: usize,
    pub subject_jitter: f64,
    pub source_persistence: f64,
    pub n_sites: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_subjects: d.n_subjects,
            n_rois: d.n_rois,
            n_timepoints: d.n_timepoints,
            class_gap: d.class_gap,
            spurious_strength: d.spurious_strength,
            noise_std: d.noise_std,
            n_sources: d.n_sources,
            subject_jitter: d.subject_jitter,
            source_persistence: d.source_persistence,
            n_sites: d.n_sites,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_subjects: self.n_subjects,
            n_rois: self.n_rois,
            n_timepoints: self.n_timepoints,
            class_gap: self.class_gap,
            spurious_strength: self.spurious_strength,
            noise_std: self.noise_std,
            n_sources: self.n_sources,
            subject_jitter: self.subject_jitter,
            source_persistence: self.source_persistence,
            n_sites: self.n_sites,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub ssl_epochs: usize,
    pub ft_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub hidden_dim: usize,
    pub label_rate: f64,
    pub pretrain_scope: PretrainScope,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            ssl_epochs: d.ssl_epochs,
            ft_epochs: d.ft_epochs,
            lr: d.lr,
            weight_decay: d.weight_decay,
            gamma: d.gamma,
            hidden_dim: d.hidden_dim,
            label_rate: d.label_rate,
            pretrain_scope: d.pretrain_scope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Label rates to evaluate; empty means `[train.label_rate]`.
    pub rates: Vec<f64>,
    pub folds: usize,
    pub repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Gate, Method::VanillaGcn],
            rates: Vec::new(),
            folds: 5,
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Extra GATE-only cross-validations at these gamma values, at
    /// `train.label_rate`.
    pub gamma_ablation: Vec<f64>,
    /// Singular values of every pretrained fold encoder and of its random
    /// initialization.
    pub svd: bool,
    /// Score the experimental acceptance criteria from the results above.
    pub acceptance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// JSON-lines record of every augmentation draw during pretraining.
    pub audit: bool,
    /// Edge list of the window-0 population graph of the whole cohort.
    pub graph_dump: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            audit: true,
            graph_dump: false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub rates: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::ConfigSyntax {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Read, apply overrides, materialize defaults and validate. Relative
    /// manifest paths are resolved against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| GateError::io(p, e))?;
                let mut cfg = Self::from_toml(&text, &p.display().to_string())?;
                if let Some(m) = &cfg.data.manifest {
                    if m.is_relative() {
                        let base = p.parent().unwrap_or(Path::new(""));
                        cfg.data.manifest = Some(base.join(m));
                    }
                }
                cfg
            }
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.output.dir = o.clone();
        }
        if let Some(r) = &overrides.rates {
            cfg.eval.rates = r.clone();
        }
        if cfg.eval.rates.is_empty() {
            cfg.eval.rates = vec![cfg.train.label_rate];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train_config().validate()?;
        if self.data.manifest.is_none() {
            self.synth.to_core(self.seed).validate()?;
        }
        let e = &self.eval;
        if e.methods.is_empty() {
            return Err(GateError::config("eval.methods", "empty").into());
        }
        for (i, m) in e.methods.iter().enumerate() {
            if e.methods[..i].contains(m) {
                return Err(GateError::config("eval.methods", format!("`{}` listed twice", m.name())).into());
            }
        }
        for (i, &r) in e.rates.iter().enumerate() {
            if !(r > 0.0 && r <= 1.0) {
                return Err(GateError::config("eval.rates", format!("{r} not in (0, 1]")).into());
            }
            if e.rates[..i].contains(&r) {
                return Err(GateError::config("eval.rates", format!("{r} listed twice")).into());
            }
        }
        if e.folds < 2 {
            return Err(GateError::config("eval.folds", "need at least 2 folds").into());
        }
        if e.repeats == 0 {
            return Err(GateError::config("eval.repeats", "need at least 1 repeat").into());
        }
        for &g in &self.diagnostics.gamma_ablation {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(GateError::config("diagnostics.gamma_ablation", format!("{g} must be >= 0")).into());
            }
        }
        if self.diagnostics.acceptance {
            crate::stages::check_acceptance_config(self)?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            ssl_epochs: t.ssl_epochs,
            ft_epochs: t.ft_epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            gamma: t.gamma,
            hidden_dim: t.hidden_dim,
            label_rate: t.label_rate,
            seed: self.seed,
            pretrain_scope: t.pretrain_scope,
            augment: self.augment.clone(),
            graph: self.graph.clone(),
        }
    }

    /// SHA-256 over everything except the seed and the output section, plus
    /// the manifest bytes when the cohort comes from disk.
    pub fn hash(&self) -> CliResult<String> {
        #[derive(Serialize)]
        struct Hashed<'a> {
            data: &'a DataConfig,
            synth: &'a SynthSection,
            graph: &'a GraphConfig,
            augment: &'a AugmentConfig,
            train: &'a TrainSection,
            eval: &'a EvalConfig,
            diagnostics: &'a DiagnosticsConfig,
        }
        let view = Hashed {
            data: &self.data,
            synth: &self.synth,
            graph: &self.graph,
            augment: &self.augment,
            train: &self.train,
            eval: &self.eval,
            diagnostics: &self.diagnostics,
        };
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&view).map_err(|e| GateError::Parse(e.to_string()))?);
        if let Some(m) = &self.data.manifest {
            h.update(std::fs::read(m).map_err(|e| GateError::io(m, e))?);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// TOML with every default written out, preceded by the stamp comment.
    pub fn snapshot(&self, hash: &str) -> CliResult<String> {
        let body = toml::to_string(self).map_err(|e| GateError::Parse(e.to_string()))?;
        Ok(format!("# config_hash={hash} seed={}\n{body}", self.seed))
    }
}
