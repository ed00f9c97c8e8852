//! Two-view generation: step-window (neighboring windows), multi-scale
//! (same anchor, two lengths) and optional random drop.

use std::io::Write;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};
use crate::graph::{build_population_graph_with, phenotype_similarity, random_drop, GraphConfig, PopulationGraph};
use crate::signal::{cohort_timepoints, segment_count, window_features, BoldRecording, SubjectMeta, WindowSpec};

const MAX_MA_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentMode {
    #[serde(rename = "sa")]
    StepWindow,
    #[serde(rename = "ma")]
    MultiScale,
    #[serde(rename = "sa+ma")]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    pub random_drop: bool,
    pub window: WindowSpec,
    pub ma_lengths: Vec<usize>,
    pub drop_feature_prob: f64,
    pub drop_edge_prob: f64,
    /// Draw the window pair once and reuse it every iteration.
    pub freeze_pair: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mode: AugmentMode::Both,
            random_drop: true,
            window: WindowSpec::default(),
            ma_lengths: vec![10, 20, 30, 40, 50],
            drop_feature_prob: 0.2,
            drop_edge_prob: 0.2,
            freeze_pair: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window.length == 0 || self.window.step == 0 {
            return Err(GateError::config("augment.window", "length and step must be >= 1"));
        }
        for (key, p) in [
            ("augment.drop_feature_prob", self.drop_feature_prob),
            ("augment.drop_edge_prob", self.drop_edge_prob),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(GateError::config(key, format!("{p} not in [0, 1)")));
            }
        }
        if self.ma_lengths.contains(&0) {
            return Err(GateError::config("augment.ma_lengths", "lengths must be >= 1"));
        }
        Ok(())
    }
}

/// Which concrete augmentation produced a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DrawnMode {
    #[serde(rename = "sa")]
    StepWindow,
    #[serde(rename = "ma")]
    MultiScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowDraw {
    pub start: usize,
    pub length: usize,
}

/// Window parameters of both views, without the graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewDraw {
    pub mode: DrawnMode,
    pub anchor: usize,
    pub view_a: WindowDraw,
    pub view_b: WindowDraw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(flatten)]
    pub draw: ViewDraw,
    pub random_drop: bool,
}

#[derive(Debug, Clone)]
pub struct ViewPair {
    pub view_a: PopulationGraph,
    pub view_b: PopulationGraph,
    pub provenance: Provenance,
    /// Subject ids in row order, shared by both views.
    pub subject_ids: Vec<String>,
}

/// Step-window draw: anchor m uniform in [0, M), neighbor m +/- 1 clamped.
pub fn draw_sa<R: Rng + ?Sized>(n_timepoints: usize, window: WindowSpec, rng: &mut R) -> Result<ViewDraw> {
    let m_count = segment_count(n_timepoints, window)?;
    if m_count < 2 {
        return Err(GateError::AugmentationInfeasible(format!(
            "step-window augmentation needs >= 2 windows, got {m_count}"
        )));
    }
    let m = rng.random_range(0..m_count);
    let up = rng.random_bool(0.5);
    let neighbor = if m == 0 {
        1
    } else if m == m_count - 1 {
        m_count - 2
    } else if up {
        m + 1
    } else {
        m - 1
    };
    Ok(ViewDraw {
        mode: DrawnMode::StepWindow,
        anchor: m,
        view_a: WindowDraw {
            start: m * window.step,
            length: window.length,
        },
        view_b: WindowDraw {
            start: neighbor * window.step,
            length: window.length,
        },
    })
}

/// Multi-scale draw: anchor on the step grid, two distinct lengths; draws
/// that overrun the signal are rejected and redrawn.
pub fn draw_ma<R: Rng + ?Sized>(
    n_timepoints: usize,
    window: WindowSpec,
    lengths: &[usize],
    rng: &mut R,
) -> Result<ViewDraw> {
    let mut distinct: Vec<usize> = lengths.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(GateError::AugmentationInfeasible(
            "multi-scale augmentation needs two distinct window lengths".into(),
        ));
    }
    if distinct[1] > n_timepoints {
        return Err(GateError::AugmentationInfeasible(format!(
            "no two window lengths fit in {n_timepoints} timepoints"
        )));
    }
    let m_count = segment_count(n_timepoints, window)?;
    for _ in 0..MAX_MA_RETRIES {
        let m = rng.random_range(0..m_count);
        let picked = sample(rng, distinct.len(), 2);
        let (la, lb) = (distinct[picked.index(0)], distinct[picked.index(1)]);
        let start = m * window.step;
        if start + la.max(lb) > n_timepoints {
            continue;
        }
        return Ok(ViewDraw {
            mode: DrawnMode::MultiScale,
            anchor: m,
            view_a: WindowDraw { start, length: la },
            view_b: WindowDraw { start, length: lb },
        });
    }
    Err(GateError::AugmentationInfeasible(format!(
        "no feasible multi-scale draw after {MAX_MA_RETRIES} attempts"
    )))
}

pub fn draw_pair<R: Rng + ?Sized>(n_timepoints: usize, config: &AugmentConfig, rng: &mut R) -> Result<ViewDraw> {
    match config.mode {
        AugmentMode::StepWindow => draw_sa(n_timepoints, config.window, rng),
        AugmentMode::MultiScale => draw_ma(n_timepoints, config.window, &config.ma_lengths, rng),
        AugmentMode::Both => {
            if rng.random_bool(0.5) {
                draw_sa(n_timepoints, config.window, rng)
            } else {
                draw_ma(n_timepoints, config.window, &config.ma_lengths, rng)
            }
        }
    }
}

/// Owns the augmentation RNG and the cached phenotype similarity of one
/// cohort; produces one view pair per training iteration.
pub struct ViewSampler<'c, R: Rng> {
    cohort: &'c [BoldRecording],
    config: AugmentConfig,
    graph: GraphConfig,
    pheno_sim: Array2<f64>,
    rng: R,
    frozen: Option<ViewDraw>,
    audit: Option<Box<dyn Write + Send + 'c>>,
}

impl<'c, R: Rng> ViewSampler<'c, R> {
    pub fn new(cohort: &'c [BoldRecording], config: AugmentConfig, graph: GraphConfig, rng: R) -> Result<Self> {
        config.validate()?;
        graph.validate(cohort.len())?;
        let metas: Vec<SubjectMeta> = cohort.iter().map(|r| r.meta.clone()).collect();
        let pheno_sim = phenotype_similarity(&metas, &graph)?;
        Ok(Self {
            cohort,
            config,
            graph,
            pheno_sim,
            rng,
            frozen: None,
            audit: None,
        })
    }

    /// Log the provenance of every drawn pair as one JSON line.
    pub fn with_audit(mut self, sink: Box<dyn Write + Send + 'c>) -> Self {
        self.audit = Some(sink);
        self
    }

    fn build_view(&self, w: WindowDraw) -> Result<PopulationGraph> {
        let features = window_features(self.cohort, w.start, w.length)?;
        build_population_graph_with(features, &self.pheno_sim, &self.graph)
    }

    pub fn next_draw(&mut self) -> Result<ViewDraw> {
        if let Some(d) = self.frozen {
            return Ok(d);
        }
        let t = cohort_timepoints(self.cohort);
        let d = draw_pair(t, &self.config, &mut self.rng)?;
        if self.config.freeze_pair {
            self.frozen = Some(d);
        }
        Ok(d)
    }

    pub fn next_view_pair(&mut self) -> Result<ViewPair> {
        let draw = self.next_draw()?;
        let mut view_a = self.build_view(draw.view_a)?;
        let mut view_b = self.build_view(draw.view_b)?;
        if self.config.random_drop {
            let (pf, pe) = (self.config.drop_feature_prob, self.config.drop_edge_prob);
            view_a = random_drop(&view_a, pf, pe, &mut self.rng)?;
            view_b = random_drop(&view_b, pf, pe, &mut self.rng)?;
        }
        let provenance = Provenance {
            draw,
            random_drop: self.config.random_drop,
        };
        if let Some(sink) = self.audit.as_mut() {
            let line = serde_json::to_string(&provenance).expect("provenance serializes");
            writeln!(sink, "{line}").map_err(|e| GateError::io("augmentation audit", e))?;
        }
        Ok(ViewPair {
            view_a,
            view_b,
            provenance,
            subject_ids: self.cohort.iter().map(|r| r.subject_id.clone()).collect(),
        })
    }
}

/// Step-window pair built directly on a cohort.
pub fn sample_sa_pair<R: Rng>(
    cohort: &[BoldRecording],
    config: &AugmentConfig,
    graph: &GraphConfig,
    rng: &mut R,
) -> Result<ViewPair> {
    let cfg = AugmentConfig {
        mode: AugmentMode::StepWindow,
        random_drop: false,
        ..config.clone()
    };
    ViewSampler::new(cohort, cfg, graph.clone(), rng)?.next_view_pair()
}

/// Multi-scale pair built directly on a cohort.
pub fn sample_ma_pair<R: Rng>(
    cohort: &[BoldRecording],
    config: &AugmentConfig,
    graph: &GraphConfig,
    rng: &mut R,
) -> Result<ViewPair> {
    let cfg = AugmentConfig {
        mode: AugmentMode::MultiScale,
        random_drop: false,
        ..config.clone()
    };
    ViewSampler::new(cohort, cfg, graph.clone(), rng)?.next_view_pair()
}
