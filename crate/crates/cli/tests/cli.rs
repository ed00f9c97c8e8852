use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gate_core::eval::report::{sweep_csv, RunStamp};
use gate_core::eval::{label_rate_sweep, FoldPlan, Method};
use gate_core::synth::{generate_cohort, SynthConfig};
use gate_core::trainer::TrainConfig;

const SMALL: &str = r#"
seed = 3

[synth]
n_subjects = 24
n_rois = 6
n_timepoints = 120

[train]
ssl_epochs = 6
ft_epochs = 6
hidden_dim = 8

[eval]
rates = [0.3, 0.6]
folds = 3
repeats = 2
"#;

fn gate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gate")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = gate(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Every file under `a` and `b` matches byte for byte, except the output
/// directory recorded in the resolved config.
fn assert_same_tree(a: &Path, b: &Path) {
    let files = files_under(a);
    assert_eq!(files, files_under(b));
    for f in &files {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        if f == Path::new("config.resolved.toml") {
            let strip = |v: Vec<u8>| {
                String::from_utf8(v).unwrap().lines().filter(|l| !l.starts_with("dir = ")).collect::<Vec<_>>().join("\n")
            };
            assert_eq!(strip(x), strip(y));
        } else {
            assert!(x == y, "{} differs", f.display());
        }
    }
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["run", "--config", &cfg, "--seed", "7", "--out", a.to_str().unwrap()]);
    ok(&["run", "--config", &cfg, "--seed", "7", "--out", b.to_str().unwrap(), "--threads", "2"]);
    assert!(files_under(&a).len() > 20);
    assert_same_tree(&a, &b);
}

#[test]
fn every_output_carries_hash_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", &format!("{SMALL}\n[output]\ngraph_dump = true\n"));
    let out = tmp.path().join("o");
    ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let first = read(&out, "report.csv").lines().next().unwrap().to_string();
    let hash = first.strip_prefix("# config_hash=").unwrap().strip_suffix(" seed=3").unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for f in files_under(&out) {
        let text = read(&out, f.to_str().unwrap());
        let ext = f.extension().unwrap().to_str().unwrap();
        match ext {
            "csv" | "toml" => assert_eq!(text.lines().next().unwrap(), first, "{}", f.display()),
            "json" | "jsonl" => {
                let head: serde_json::Value = serde_json::from_str(text.lines().next().filter(|_| ext == "jsonl").unwrap_or(&text)).unwrap();
                assert_eq!(head["config_hash"], hash.as_str(), "{}", f.display());
                assert_eq!(head["seed"], 3, "{}", f.display());
            }
            other => panic!("unexpected output kind {other}"),
        }
    }
}

#[test]
fn label_rate_out_of_range_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[train]\nlabel_rate = 1.5\n");
    let out = gate(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("label_rate"), "{err}");
    // rejected before any output is written
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unknown_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[eval]\nfolds = 3\nshuffle = true\n");
    let out = gate(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("shuffle"));
}

#[test]
fn staged_run_equals_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let (whole, staged) = (tmp.path().join("whole"), tmp.path().join("staged"));
    ok(&["run", "--config", &cfg, "--out", whole.to_str().unwrap()]);
    ok(&["pretrain", "--config", &cfg, "--out", staged.to_str().unwrap()]);
    assert!(!staged.join("report.csv").exists());
    ok(&["finetune", "--config", &cfg, "--out", staged.to_str().unwrap()]);
    assert_same_tree(&whole, &staged);
}

#[test]
fn evaluate_rescores_saved_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let out = tmp.path().join("o");
    ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let before: Vec<String> = ["report.csv", "report_tidy.csv", "report.json"].iter().map(|f| read(&out, f)).collect();
    for f in ["report.csv", "report_tidy.csv", "report.json"] {
        std::fs::remove_file(out.join(f)).unwrap();
    }
    ok(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let after: Vec<String> = ["report.csv", "report_tidy.csv", "report.json"].iter().map(|f| read(&out, f)).collect();
    assert_eq!(before, after);
}

#[test]
fn finetune_refuses_foreign_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let other = write_config(tmp.path(), "other.toml", &SMALL.replace("ssl_epochs = 6", "ssl_epochs = 7"));
    let out = tmp.path().join("o");
    ok(&["pretrain", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let res = gate(&["finetune", "--config", &other, "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("incompatible"), "{err}");
    let res = gate(&["finetune", "--config", &cfg, "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("seed"));
}

#[test]
fn finetune_without_pretraining_names_the_missing_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let res = gate(&["finetune", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("r0_f0.ckpt.json"));
}

#[test]
fn svd_diag_writes_descending_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let out = tmp.path().join("o");
    ok(&["pretrain", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let ckpt = out.join("pretrain/r1_f2.ckpt.json");
    ok(&["svd-diag", "--config", &cfg, "--out", out.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    let text = read(&out, "svd/r1_f2.csv");
    let mut lines = text.lines().skip(1);
    assert_eq!(lines.next(), Some("index,singular_value"));
    let sv: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(sv.len(), 8);
    assert!(sv.windows(2).all(|w| w[0] >= w[1]), "{sv:?}");
    assert!(sv.iter().all(|v| *v >= 0.0));
}

#[test]
fn sweep_reports_four_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let out = tmp.path().join("o");
    ok(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--rates", "0.1,0.2,0.5,0.8"]);
    let text = read(&out, "report.csv");
    let mut seen: Vec<(String, String)> = text
        .lines()
        .skip(2)
        .filter(|l| l.contains(",accuracy,"))
        .map(|l| {
            let p: Vec<&str> = l.split(',').collect();
            (p[0].to_string(), p[1].to_string())
        })
        .collect();
    seen.sort();
    let want: Vec<(String, String)> = ["gate", "vanilla_gcn"]
        .iter()
        .flat_map(|m| ["0.1", "0.2", "0.5", "0.8"].iter().map(move |r| (m.to_string(), r.to_string())))
        .collect();
    assert_eq!(seen, want);
    let resolved = read(&out, "config.resolved.toml");
    assert!(resolved.contains("rates = [0.1, 0.2, 0.5, 0.8]"), "{resolved}");
}

#[test]
fn report_matches_library_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let out = tmp.path().join("o");
    ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let cohort = generate_cohort(&SynthConfig {
        n_subjects: 24,
        n_rois: 6,
        n_timepoints: 120,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let labels: Vec<usize> = cohort.iter().map(|r| r.meta.label.unwrap()).collect();
    let plan = FoldPlan::stratified(&labels, 3, 2, 3).unwrap();
    let train = TrainConfig {
        ssl_epochs: 6,
        ft_epochs: 6,
        hidden_dim: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let entries = label_rate_sweep(&cohort, &[0.3, 0.6], &[Method::Gate, Method::VanillaGcn], &plan, &train).unwrap();
    let report = read(&out, "report.csv");
    let hash = report.lines().next().unwrap().strip_prefix("# config_hash=").unwrap().split(' ').next().unwrap();
    assert_eq!(report, sweep_csv(&entries, &RunStamp::new(hash, 3)));
}

#[test]
fn manifest_cohort_reproduces_synthetic_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let synth_out = tmp.path().join("s");
    ok(&["synth", "--config", &cfg, "--out", synth_out.to_str().unwrap()]);
    let manifest: serde_json::Value = serde_json::from_str(&read(&synth_out, "cohort/manifest.json")).unwrap();
    assert_eq!(manifest["format"], "gate-bold-v1");
    assert_eq!(manifest["subjects"].as_array().unwrap().len(), 24);

    let from_disk = SMALL.replace("[synth]\nn_subjects = 24\nn_rois = 6\nn_timepoints = 120\n", "[data]\nmanifest = \"s/cohort/manifest.json\"\n");
    let disk_cfg = write_config(tmp.path(), "disk.toml", &from_disk);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]);
    ok(&["run", "--config", &disk_cfg, "--out", b.to_str().unwrap()]);
    let body = |dir: &Path| read(dir, "report_tidy.csv").lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&a), body(&b));
    assert_ne!(read(&a, "report_tidy.csv").lines().next(), read(&b, "report_tidy.csv").lines().next());
}

#[test]
fn acceptance_config_checks_its_prerequisites() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", &format!("{SMALL}\n[diagnostics]\nacceptance = true\n"));
    let out = gate(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("diagnostics.acceptance"));
}

#[test]
fn diagnostics_cover_gamma_and_spectra() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[diagnostics]\ngamma_ablation = [0.001, 1.0]\nsvd = true\n");
    let cfg = write_config(tmp.path(), "exp.toml", &text);
    let out = tmp.path().join("o");
    ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let gamma = read(&out, "diagnostics/gamma_ablation.csv");
    let rows: Vec<&str> = gamma.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0.001,0.2,") && rows[1].starts_with("1,0.2,"));
    let summary = read(&out, "diagnostics/svd_summary.csv");
    let names: Vec<&str> = summary.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        ["pretrained", "random", "gate_rate0.3", "vanilla_gcn_rate0.3", "gate_rate0.6", "vanilla_gcn_rate0.6"]
    );
    // 6 folds x 6 encoders x 8 values
    assert_eq!(read(&out, "diagnostics/svd.csv").lines().count(), 2 + 6 * 6 * 8);
}
