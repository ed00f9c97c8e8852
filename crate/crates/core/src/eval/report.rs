//! Report files. Every file opens with the config hash and root seed: a
//! `# config_hash=<hex> seed=<n>` comment line for CSVs, top-level fields for
//! JSON.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{GateError, Result};
use crate::eval::cv::SweepEntry;
use crate::eval::metrics::METRIC_NAMES;
use crate::trainer::TrainTrace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunStamp {
    pub config_hash: String,
    pub seed: u64,
}

impl RunStamp {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn comment(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| GateError::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| GateError::io(path, e))
}

/// method,rate,metric,mean,std,n with a trailing `avg` row per method/rate.
pub fn sweep_csv(entries: &[SweepEntry], stamp: &RunStamp) -> String {
    let mut s = stamp.comment();
    s.push_str("method,rate,metric,mean,std,n\n");
    for e in entries {
        for name in METRIC_NAMES {
            let m = e.report.summary(name).expect("known metric");
            let _ = writeln!(s, "{},{},{name},{},{},{}", e.method.name(), e.rate, m.mean, m.std, m.values.len());
        }
        let _ = writeln!(s, "{},{},avg,{},,", e.method.name(), e.rate, e.report.avg);
    }
    s
}

/// Long format: method,rate,fold,seed,metric,value, one row per fold metric.
pub fn tidy_csv(entries: &[SweepEntry], stamp: &RunStamp) -> String {
    let mut s = stamp.comment();
    s.push_str("method,rate,fold,seed,metric,value\n");
    for e in entries {
        for f in &e.folds {
            for name in METRIC_NAMES {
                if let Some(v) = f.metrics.get(name) {
                    let _ = writeln!(s, "{},{},{},{},{name},{v}", e.method.name(), e.rate, f.fold, f.seed);
                }
            }
        }
    }
    s
}

#[derive(Serialize)]
struct SweepJson<'a> {
    format: &'static str,
    config_hash: &'a str,
    seed: u64,
    entries: &'a [SweepEntry],
}

pub fn sweep_json(entries: &[SweepEntry], stamp: &RunStamp) -> Result<String> {
    let doc = SweepJson {
        format: "gate-report-v1",
        config_hash: &stamp.config_hash,
        seed: stamp.seed,
        entries,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| GateError::Parse(e.to_string()))
}

/// epoch,phase,loss,accuracy.
pub fn trace_csv(trace: &TrainTrace, stamp: &RunStamp) -> String {
    let mut s = stamp.comment();
    s.push_str("epoch,phase,loss,accuracy\n");
    for row in trace.to_csv_rows() {
        s.push_str(&row);
        s.push('\n');
    }
    s
}

/// index,singular_value, descending.
pub fn singular_values_csv(values: &[f64], stamp: &RunStamp) -> String {
    let mut s = stamp.comment();
    s.push_str("index,singular_value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{i},{v}");
    }
    s
}
