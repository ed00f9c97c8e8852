//! On-disk formats: the `gate-bold-v1` cohort manifest (JSON plus one
//! headerless R x T CSV per subject) and the `gate-ckpt-v1` model checkpoint.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};
use crate::model::{GateModel, PARAM_NAMES};
use crate::signal::{BoldRecording, Phenotype, SubjectMeta};

pub const MANIFEST_FORMAT: &str = "gate-bold-v1";
pub const CHECKPOINT_FORMAT: &str = "gate-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubject {
    pub id: String,
    /// CSV path, relative to the manifest's directory unless absolute.
    pub signal: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default)]
    pub phenotypes: BTreeMap<String, Phenotype>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub subjects: Vec<ManifestSubject>,
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| GateError::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| GateError::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| GateError::io(path, e))
}

/// Headerless comma-separated matrix, one ROI per line.
pub fn read_signal_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| GateError::Parse(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| GateError::Parse(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| GateError::Parse(format!("{} line {}: `{f}`: {e}", path.display(), line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let t = rows.first().map_or(0, Vec::len);
    let r = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((r, t), flat).map_err(|e| GateError::Parse(format!("{}: {e}", path.display())))
}

pub fn signal_csv(signal: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in signal.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

pub fn read_manifest(path: &Path) -> Result<Vec<BoldRecording>> {
    let text = read_to_string(path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| GateError::Schema(format!("{}: {e}", path.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(GateError::Schema(format!(
            "{}: format `{}`, expected `{MANIFEST_FORMAT}`",
            path.display(),
            manifest.format
        )));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    manifest
        .subjects
        .into_iter()
        .map(|s| {
            let csv_path = if s.signal.is_absolute() { s.signal.clone() } else { base.join(&s.signal) };
            let signal = read_signal_csv(&csv_path)?;
            let mut meta = SubjectMeta::new(s.label)?;
            meta.phenotypes = s.phenotypes;
            BoldRecording::new(s.id, signal, meta)
        })
        .collect()
}

/// Write `manifest.json` plus `signals/<id>.csv` under `dir`; returns the
/// manifest path.
pub fn write_manifest(dir: &Path, cohort: &[BoldRecording], config_hash: Option<&str>, seed: Option<u64>) -> Result<PathBuf> {
    let mut subjects = Vec::with_capacity(cohort.len());
    for rec in cohort {
        let rel = PathBuf::from("signals").join(format!("{}.csv", rec.subject_id));
        write_file(&dir.join(&rel), &signal_csv(rec.signal()))?;
        subjects.push(ManifestSubject {
            id: rec.subject_id.clone(),
            signal: rel,
            label: rec.meta.label,
            phenotypes: rec.meta.phenotypes.clone(),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        config_hash: config_hash.map(str::to_string),
        seed,
        subjects,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| GateError::Parse(e.to_string()))?;
    write_file(&path, &text)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedMatrix {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    /// Free-form stage tag such as `pretrained` or `finetuned`.
    pub stage: String,
    pub params: Vec<NamedMatrix>,
}

impl Checkpoint {
    pub fn from_model(model: &GateModel, config_hash: &str, seed: u64, stage: &str) -> Self {
        let params = PARAM_NAMES
            .iter()
            .zip(model.params())
            .map(|(name, m)| NamedMatrix {
                name: (*name).to_string(),
                shape: [m.nrows(), m.ncols()],
                data: m.iter().copied().collect(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            config_hash: config_hash.into(),
            seed,
            stage: stage.into(),
            params,
        }
    }

    pub fn to_model(&self) -> Result<GateModel> {
        if self.params.len() != PARAM_NAMES.len() {
            return Err(GateError::Schema(format!("{} parameters, expected {}", self.params.len(), PARAM_NAMES.len())));
        }
        let mats = PARAM_NAMES
            .iter()
            .zip(&self.params)
            .map(|(name, p)| {
                if p.name != *name {
                    return Err(GateError::Schema(format!("parameter `{}` where `{name}` expected", p.name)));
                }
                Array2::from_shape_vec((p.shape[0], p.shape[1]), p.data.clone())
                    .map_err(|e| GateError::Schema(format!("{name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        GateModel::from_params(mats)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| GateError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json()?)
    }

    /// Load and, when `expected_hash` is given, refuse a checkpoint written
    /// under a different configuration.
    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self> {
        let text = read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| GateError::Schema(format!("{}: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(GateError::Schema(format!(
                "{}: format `{}`, expected `{CHECKPOINT_FORMAT}`",
                path.display(),
                ckpt.format
            )));
        }
        if let Some(h) = expected_hash {
            if h != ckpt.config_hash {
                return Err(GateError::Incompatible(format!(
                    "{} was written under config {}, current config is {h}",
                    path.display(),
                    ckpt.config_hash
                )));
            }
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn signal_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = array![[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 4.0, f64::MIN_POSITIVE]];
        let p = dir.path().join("s.csv");
        std::fs::write(&p, signal_csv(&m)).unwrap();
        assert_eq!(read_signal_csv(&p).unwrap(), m);
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "1,2,3\n4,5\n").unwrap();
        assert!(read_signal_csv(&p).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = SubjectMeta::new(Some(1))
            .unwrap()
            .with_phenotype("sex", Phenotype::Categorical("F".into()))
            .with_phenotype("age", Phenotype::Real(31.5));
        let rec = BoldRecording::new("s1", array![[1.0, 2.0, 3.0], [3.0, 1.0, 2.0]], meta).unwrap();
        let path = write_manifest(dir.path(), std::slice::from_ref(&rec), Some("abc"), Some(4)).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, vec![rec]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"format\": \"gate-bold-v1\""));
    }

    #[test]
    fn manifest_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"{"format":"gate-bold-v0","subjects":[]}"#).unwrap();
        assert!(matches!(read_manifest(&p), Err(GateError::Schema(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let model = GateModel::new(6, 4, &mut ChaCha8Rng::seed_from_u64(3));
        let p = dir.path().join("c.json");
        Checkpoint::from_model(&model, "h1", 9, "pretrained").save(&p).unwrap();
        let ck = Checkpoint::load(&p, Some("h1")).unwrap();
        assert_eq!(ck.seed, 9);
        assert_eq!(ck.to_model().unwrap(), model);
        assert!(matches!(Checkpoint::load(&p, Some("h2")), Err(GateError::Incompatible(_))));
    }
}
