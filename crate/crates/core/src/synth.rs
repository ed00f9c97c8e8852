//! Seedable synthetic BOLD cohorts with class-dependent connectivity and a
//! bursty fast oscillation whose apparent connectivity depends on where and
//! how long the window is.
//!
//! Subject signal, for class `c`:
//!
//! ```text
//! x(t) = (A_c + jitter * E_i) s(t)                     slow latent sources
//!      + spurious * b_i(t) sin(w_i t + phi_i) u       fast bursty oscillation
//!      + noise * eps(t)
//! A_c  = B + (c - 1/2) * class_gap * D
//! ```
//!
//! `s` are K independent AR(1) sources with unit stationary variance, `B`,
//! `D` and the loading `u` are drawn once per cohort seed, and `E_i`, the
//! burst envelope `b_i`, frequency and phase are per subject. Short windows
//! cut away most of the slow variance but little of the fast one, so the
//! oscillation's share of apparent connectivity grows as windows shrink.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};
use crate::rng::stream;
use crate::signal::{BoldRecording, FcMatrix, Phenotype, SubjectMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_rois: usize,
    pub n_timepoints: usize,
    pub class_gap: f64,
    pub spurious_strength: f64,
    pub noise_std: f64,
    /// Number of slow latent sources.
    pub n_sources: usize,
    /// Scale of per-subject mixing perturbations.
    pub subject_jitter: f64,
    /// AR(1) coefficient of the slow sources.
    pub source_persistence: f64,
    pub n_sites: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 200,
            n_rois: 16,
            n_timepoints: 240,
            class_gap: 0.6,
            spurious_strength: 0.5,
            noise_std: 0.3,
            n_sources: 4,
            subject_jitter: 1.0,
            source_persistence: 0.9,
            n_sites: 4,
            seed: 0,
        }
    }
}

/// Longest window length the generator guarantees room for (twice over).
pub const MAX_WINDOW: usize = 50;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 || self.n_subjects % 2 != 0 {
            return Err(GateError::config("synth.n_subjects", "must be even and >= 2"));
        }
        if self.n_rois < 4 {
            return Err(GateError::config("synth.n_rois", "must be >= 4"));
        }
        if self.n_timepoints < 2 * MAX_WINDOW {
            return Err(GateError::config(
                "synth.n_timepoints",
                format!("must be >= {}", 2 * MAX_WINDOW),
            ));
        }
        if !(0.0..=1.0).contains(&self.class_gap) {
            return Err(GateError::config("synth.class_gap", "must be in [0, 1]"));
        }
        if !(self.spurious_strength >= 0.0) {
            return Err(GateError::config("synth.spurious_strength", "must be >= 0"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(GateError::config("synth.noise_std", "must be >= 0"));
        }
        if self.n_sources == 0 {
            return Err(GateError::config("synth.n_sources", "must be >= 1"));
        }
        if !(self.subject_jitter >= 0.0) {
            return Err(GateError::config("synth.subject_jitter", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.source_persistence) {
            return Err(GateError::config("synth.source_persistence", "must be in [0, 1)"));
        }
        if self.n_sites == 0 {
            return Err(GateError::config("synth.n_sites", "must be >= 1"));
        }
        Ok(())
    }
}

/// Cohort-level structure shared by every subject.
struct Population {
    base: Array2<f64>,
    direction: Array2<f64>,
    loading: Array1<f64>,
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

fn population(config: &SynthConfig) -> Population {
    let mut rng = stream(config.seed, "synth-population", &[]);
    let k = config.n_sources;
    let scale = 1.0 / (k as f64).sqrt();
    let base = normal_matrix(config.n_rois, k, scale, &mut rng);
    let direction = normal_matrix(config.n_rois, k, scale, &mut rng);
    let loading = Array1::from_shape_simple_fn(config.n_rois, || rng.sample::<f64, _>(StandardNormal));
    Population {
        base,
        direction,
        loading,
    }
}

fn class_mixing(pop: &Population, config: &SynthConfig, class: usize) -> Array2<f64> {
    let sign = class as f64 - 0.5;
    &pop.base + &(&pop.direction * (sign * config.class_gap))
}

/// Unit-variance AR(1) path.
fn ar1<R: Rng + ?Sized>(n: usize, phi: f64, rng: &mut R) -> Array1<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut out = Array1::zeros(n);
    let mut x: f64 = rng.sample(StandardNormal);
    for t in 0..n {
        out[t] = x;
        x = phi * x + innov * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

fn subject<R: Rng + ?Sized>(pop: &Population, config: &SynthConfig, index: usize, rng: &mut R) -> Result<BoldRecording> {
    let label = index % 2;
    let (r, t, k) = (config.n_rois, config.n_timepoints, config.n_sources);
    let mixing = class_mixing(pop, config, label) + normal_matrix(r, k, config.subject_jitter / (k as f64).sqrt(), rng);
    let mut sources = Array2::zeros((k, t));
    for mut row in sources.rows_mut() {
        row.assign(&ar1(t, config.source_persistence, rng));
    }
    let mut signal = mixing.dot(&sources);

    // burst envelope: |slow AR(1)| scaled so E[b^2] = 2, carrier of period 4..8
    let envelope = ar1(t, 0.9, rng).mapv(|v| std::f64::consts::SQRT_2 * v.abs());
    let period = Uniform::new(4.0, 8.0).expect("valid range").sample(rng);
    let phase = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range").sample(rng);
    let omega = std::f64::consts::TAU / period;
    for ti in 0..t {
        let burst = config.spurious_strength * envelope[ti];
        let fast = burst * (omega * ti as f64 + phase).sin();
        for ri in 0..r {
            signal[[ri, ti]] += fast * pop.loading[ri] + config.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let sex = if rng.random_bool(0.5) { "F" } else { "M" };
    let age = Uniform::new(18.0, 80.0).expect("valid range").sample(rng);
    let site = rng.random_range(0..config.n_sites);
    let meta = SubjectMeta::new(Some(label))?
        .with_phenotype("sex", Phenotype::Categorical(sex.into()))
        .with_phenotype("age", Phenotype::Real(age))
        .with_phenotype("site", Phenotype::Categorical(format!("site{site}")));
    BoldRecording::new(format!("sub-{index:04}"), signal, meta)
}

/// Balanced cohort (even indices class 0, odd class 1), deterministic per seed.
pub fn generate_cohort(config: &SynthConfig) -> Result<Vec<BoldRecording>> {
    config.validate()?;
    let pop = population(config);
    (0..config.n_subjects)
        .map(|i| {
            let mut rng = stream(config.seed, "synth-subject", &[i as u64]);
            subject(&pop, config, i, &mut rng)
        })
        .collect()
}

/// Correlation matrix of the population-level expected covariance of a class:
/// A_c A_c^T + jitter^2 I + spurious^2 u u^T + noise^2 I.
pub fn planted_fc(config: &SynthConfig, class: usize) -> Result<FcMatrix> {
    if class > 1 {
        return Err(GateError::Label(format!("class {class} not in {{0,1}}")));
    }
    config.validate()?;
    let pop = population(config);
    let a = class_mixing(&pop, config, class);
    let mut cov = a.dot(&a.t());
    let u = pop.loading.view().insert_axis(ndarray::Axis(1));
    cov = cov + u.dot(&u.t()) * config.spurious_strength.powi(2);
    let iso = config.subject_jitter.powi(2) + config.noise_std.powi(2);
    for i in 0..config.n_rois {
        cov[[i, i]] += iso;
    }
    let sd: Array1<f64> = cov.diag().mapv(f64::sqrt);
    let values = Array2::from_shape_fn(cov.dim(), |(i, j)| {
        if i == j {
            1.0
        } else {
            (cov[[i, j]] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    });
    Ok(FcMatrix {
        values,
        degenerate_rois: BTreeSet::new(),
    })
}
