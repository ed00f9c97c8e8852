//! BOLD recordings, sliding windows and Pearson functional connectivity.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};

/// A phenotype value: categorical (sex, site, ...) or real (age in years, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Phenotype {
    Real(f64),
    Categorical(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    /// Class index in {0, 1}, absent for unlabeled subjects.
    pub label: Option<usize>,
    pub phenotypes: BTreeMap<String, Phenotype>,
}

impl SubjectMeta {
    pub fn new(label: Option<usize>) -> Result<Self> {
        if let Some(l) = label {
            if l > 1 {
                return Err(GateError::Label(format!("label {l} not in {{0,1}}")));
            }
        }
        Ok(Self {
            label,
            phenotypes: BTreeMap::new(),
        })
    }

    pub fn with_phenotype(mut self, name: &str, value: Phenotype) -> Self {
        self.phenotypes.insert(name.to_string(), value);
        self
    }
}

/// One subject's ROI x time BOLD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BoldRecording {
    pub subject_id: String,
    signal: Array2<f64>,
    pub meta: SubjectMeta,
}

impl BoldRecording {
    pub fn new(subject_id: impl Into<String>, signal: Array2<f64>, meta: SubjectMeta) -> Result<Self> {
        let subject_id = subject_id.into();
        let (r, t) = signal.dim();
        if r < 2 || t < 2 {
            return Err(GateError::InvalidRecording(format!(
                "{subject_id}: need at least 2 ROIs and 2 timepoints, got {r}x{t}"
            )));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(GateError::InvalidRecording(format!(
                "{subject_id}: non-finite sample"
            )));
        }
        if let Some(l) = meta.label {
            if l > 1 {
                return Err(GateError::Label(format!("{subject_id}: label {l}")));
            }
        }
        Ok(Self {
            subject_id,
            signal,
            meta,
        })
    }

    pub fn signal(&self) -> &Array2<f64> {
        &self.signal
    }

    pub fn n_rois(&self) -> usize {
        self.signal.nrows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.signal.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub length: usize,
    pub step: usize,
}

impl WindowSpec {
    pub fn new(length: usize, step: usize) -> Result<Self> {
        if length == 0 {
            return Err(GateError::InvalidWindow("window length must be >= 1".into()));
        }
        if step == 0 {
            return Err(GateError::InvalidWindow("window step must be >= 1".into()));
        }
        Ok(Self { length, step })
    }

    /// Start offsets of every window that fits in `n_timepoints`.
    pub fn starts(&self, n_timepoints: usize) -> Result<Vec<usize>> {
        let m = segment_count(n_timepoints, *self)?;
        Ok((0..m).map(|i| i * self.step).collect())
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length: 30,
            step: 15,
        }
    }
}

/// Number of sliding windows: floor((T - L) / s) + 1.
pub fn segment_count(n_timepoints: usize, spec: WindowSpec) -> Result<usize> {
    if spec.length == 0 || spec.step == 0 {
        return Err(GateError::InvalidWindow(format!(
            "length {} and step {} must be >= 1",
            spec.length, spec.step
        )));
    }
    if n_timepoints < spec.length {
        return Err(GateError::InvalidWindow(format!(
            "window length {} exceeds {} timepoints",
            spec.length, n_timepoints
        )));
    }
    Ok((n_timepoints - spec.length) / spec.step + 1)
}

/// Copy of the column slice `[start, start + length)`.
pub fn extract_segment(rec: &BoldRecording, start: usize, length: usize) -> Result<Array2<f64>> {
    let t = rec.n_timepoints();
    match start.checked_add(length) {
        Some(end) if end <= t && length > 0 => Ok(rec.signal.slice(s![.., start..end]).to_owned()),
        _ => Err(GateError::Bounds(format!(
            "segment [{start}, {start}+{length}) outside {t} timepoints of {}",
            rec.subject_id
        ))),
    }
}

/// Pearson correlation matrix of a segment's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FcMatrix {
    pub values: Array2<f64>,
    /// ROIs whose segment had zero variance; their rows/columns are 0.
    pub degenerate_rois: BTreeSet<usize>,
}

impl FcMatrix {
    pub fn n_rois(&self) -> usize {
        self.values.nrows()
    }
}

fn is_constant(std: f64, mean: f64) -> bool {
    std <= 1e-12 * mean.abs().max(1.0)
}

pub fn pearson_fc(segment: ArrayView2<'_, f64>) -> Result<FcMatrix> {
    let (r, l) = segment.dim();
    if l < 2 {
        return Err(GateError::InvalidSegment(format!(
            "need at least 2 timepoints, got {l}"
        )));
    }
    let means = segment.mean_axis(Axis(1)).expect("non-empty segment");
    let mut centered = segment.to_owned();
    for (mut row, &m) in centered.axis_iter_mut(Axis(0)).zip(means.iter()) {
        row.mapv_inplace(|v| v - m);
    }
    let norms: Array1<f64> = centered
        .axis_iter(Axis(0))
        .map(|row| row.dot(&row).sqrt())
        .collect();
    let degenerate: BTreeSet<usize> = (0..r)
        .filter(|&i| is_constant(norms[i] / (l as f64).sqrt(), means[i]))
        .collect();

    let gram = centered.dot(&centered.t());
    let mut values = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        if degenerate.contains(&i) {
            continue;
        }
        values[[i, i]] = 1.0;
        for j in (i + 1)..r {
            if degenerate.contains(&j) {
                continue;
            }
            let c = (gram[[i, j]] / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[[i, j]] = c;
            values[[j, i]] = c;
        }
    }
    Ok(FcMatrix {
        values,
        degenerate_rois: degenerate,
    })
}

/// Length of the flattened upper triangle (diagonal included).
pub fn upper_len(n_rois: usize) -> usize {
    n_rois * (n_rois + 1) / 2
}

/// Row-major upper triangle including the diagonal: (0,0), (0,1), ..., (0,R-1), (1,1), ...
pub fn flatten_upper(fc: &FcMatrix) -> Array1<f64> {
    let r = fc.n_rois();
    let mut out = Vec::with_capacity(upper_len(r));
    for i in 0..r {
        for j in i..r {
            out.push(fc.values[[i, j]]);
        }
    }
    Array1::from(out)
}

/// Inverse of [`flatten_upper`] back to a symmetric matrix.
pub fn unflatten_upper(features: &[f64], n_rois: usize) -> Result<Array2<f64>> {
    if features.len() != upper_len(n_rois) {
        return Err(GateError::Shape(format!(
            "{} features cannot form a {n_rois}x{n_rois} upper triangle",
            features.len()
        )));
    }
    let mut m = Array2::zeros((n_rois, n_rois));
    let mut k = 0;
    for i in 0..n_rois {
        for j in i..n_rois {
            m[[i, j]] = features[k];
            m[[j, i]] = features[k];
            k += 1;
        }
    }
    Ok(m)
}

/// N subjects x R(R+1)/2 flattened FC features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Array2<f64>,
    pub n_rois: usize,
}

impl FeatureMatrix {
    pub fn new(rows: Array2<f64>, n_rois: usize) -> Result<Self> {
        if rows.ncols() != upper_len(n_rois) {
            return Err(GateError::Shape(format!(
                "feature width {} != {} for {n_rois} ROIs",
                rows.ncols(),
                upper_len(n_rois)
            )));
        }
        Ok(Self { rows, n_rois })
    }

    pub fn n_subjects(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Documented traversal order of the feature columns.
    pub fn layout(&self) -> &'static str {
        "row-major upper triangle, diagonal included: (i, j) for i in 0..R, j in i..R"
    }
}

/// Common ROI count of a cohort, or a shape error if it is mixed or empty.
pub fn cohort_rois(cohort: &[BoldRecording]) -> Result<usize> {
    let first = cohort
        .first()
        .ok_or_else(|| GateError::Shape("empty cohort".into()))?
        .n_rois();
    if let Some(bad) = cohort.iter().find(|r| r.n_rois() != first) {
        return Err(GateError::Shape(format!(
            "{} has {} ROIs, expected {first}",
            bad.subject_id,
            bad.n_rois()
        )));
    }
    Ok(first)
}

/// Shortest recording length in the cohort.
pub fn cohort_timepoints(cohort: &[BoldRecording]) -> usize {
    cohort.iter().map(BoldRecording::n_timepoints).min().unwrap_or(0)
}

/// Flattened FC of the window `[start, start + length)` for every subject.
pub fn window_features(cohort: &[BoldRecording], start: usize, length: usize) -> Result<FeatureMatrix> {
    let r = cohort_rois(cohort)?;
    let rows: Vec<Array1<f64>> = cohort
        .par_iter()
        .map(|rec| {
            let seg = extract_segment(rec, start, length)?;
            Ok(flatten_upper(&pearson_fc(seg.view())?))
        })
        .collect::<Result<_>>()?;
    let d = upper_len(r);
    let mut out = Array2::zeros((cohort.len(), d));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows.iter()) {
        dst.assign(src);
    }
    FeatureMatrix::new(out, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(signal: Array2<f64>) -> BoldRecording {
        BoldRecording::new("s", signal, SubjectMeta::default()).unwrap()
    }

    #[test]
    fn segment_count_examples() {
        let w = WindowSpec::new(30, 15).unwrap();
        assert_eq!(segment_count(120, w).unwrap(), 7);
        assert_eq!(segment_count(30, w).unwrap(), 1);
        assert!(matches!(segment_count(29, w), Err(GateError::InvalidWindow(_))));
    }

    #[test]
    fn windows_fit_inside_signal() {
        for t in 30..200 {
            let w = WindowSpec::new(30, 7).unwrap();
            let starts = w.starts(t).unwrap();
            assert!(starts.iter().all(|s| s + 30 <= t));
            assert!(starts.last().unwrap() + 7 + 30 > t);
        }
    }

    #[test]
    fn extract_segment_examples() {
        let sig = Array2::from_shape_fn((3, 120), |(i, j)| (i * 1000 + j) as f64);
        let r = rec(sig.clone());
        assert_eq!(extract_segment(&r, 0, 120).unwrap(), sig);
        let seg = extract_segment(&r, 15, 30).unwrap();
        assert_eq!(seg.ncols(), 30);
        assert_eq!(seg[[0, 0]], 15.0);
        assert_eq!(seg[[2, 29]], 2044.0);
        assert!(matches!(extract_segment(&r, 100, 30), Err(GateError::Bounds(_))));
    }

    #[test]
    fn pearson_perfect_and_anti() {
        let fc = pearson_fc(array![[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 2.0, 1.0]].view()).unwrap();
        assert!((fc.values[[0, 1]] - 1.0).abs() < 1e-15);
        assert!((fc.values[[0, 2]] + 1.0).abs() < 1e-15);
        assert!(fc.degenerate_rois.is_empty());
    }

    #[test]
    fn pearson_constant_row_is_degenerate() {
        let fc = pearson_fc(array![[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]].view()).unwrap();
        assert_eq!(fc.values[[0, 1]], 0.0);
        assert_eq!(fc.values[[1, 0]], 0.0);
        assert_eq!(fc.values[[1, 1]], 0.0);
        assert_eq!(fc.values[[0, 0]], 1.0);
        assert!(fc.degenerate_rois.contains(&1));
    }

    #[test]
    fn pearson_rejects_single_timepoint() {
        assert!(matches!(
            pearson_fc(array![[1.0], [2.0]].view()),
            Err(GateError::InvalidSegment(_))
        ));
    }

    #[test]
    fn pearson_matches_textbook_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seg = Array2::from_shape_fn((4, 20), |_| rng.random_range(-2.0..2.0));
        let fc = pearson_fc(seg.view()).unwrap();
        // cov / (sigma_x sigma_y) with explicit sample moments
        for i in 0..4 {
            for j in 0..4 {
                let x: Vec<f64> = seg.row(i).to_vec();
                let y: Vec<f64> = seg.row(j).to_vec();
                let n = x.len() as f64;
                let mx = x.iter().sum::<f64>() / n;
                let my = y.iter().sum::<f64>() / n;
                let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0);
                let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                assert!((fc.values[[i, j]] - cov / (sx * sy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flatten_examples() {
        let fc = FcMatrix {
            values: array![[1.0, 0.5], [0.5, 1.0]],
            degenerate_rois: BTreeSet::new(),
        };
        assert_eq!(flatten_upper(&fc).to_vec(), vec![1.0, 0.5, 1.0]);
        let eye = FcMatrix {
            values: Array2::eye(3),
            degenerate_rois: BTreeSet::new(),
        };
        assert_eq!(flatten_upper(&eye).to_vec(), vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(upper_len(122), 7503);
        let big = FcMatrix {
            values: Array2::eye(122),
            degenerate_rois: BTreeSet::new(),
        };
        assert_eq!(flatten_upper(&big).len(), 7503);
    }

    #[test]
    fn window_features_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng| rec(Array2::from_shape_fn((2, 40), |_| rng.random::<f64>()));
        let cohort: Vec<_> = (0..3).map(|_| mk(&mut rng)).collect();
        let f = window_features(&cohort, 0, 40).unwrap();
        assert_eq!(f.rows.dim(), (3, 3));

        let single = window_features(&cohort[..1], 5, 20).unwrap();
        let direct = flatten_upper(&pearson_fc(extract_segment(&cohort[0], 5, 20).unwrap().view()).unwrap());
        assert_eq!(single.rows.row(0).to_owned(), direct);

        let same = vec![cohort[0].clone(), cohort[0].clone()];
        let f = window_features(&same, 0, 30).unwrap();
        assert_eq!(f.rows.row(0), f.rows.row(1));
    }

    #[test]
    fn window_features_rejects_mixed_rois() {
        let a = rec(Array2::from_shape_fn((2, 10), |(i, j)| (i + j * j) as f64));
        let b = rec(Array2::from_shape_fn((3, 10), |(i, j)| (i * j + j) as f64));
        assert!(matches!(window_features(&[a, b], 0, 10), Err(GateError::Shape(_))));
    }

    #[test]
    fn recording_validation() {
        assert!(BoldRecording::new("x", Array2::zeros((1, 5)), SubjectMeta::default()).is_err());
        let mut sig = Array2::zeros((2, 5));
        sig[[0, 0]] = f64::NAN;
        assert!(BoldRecording::new("x", sig, SubjectMeta::default()).is_err());
        assert!(SubjectMeta::new(Some(2)).is_err());
    }
}
