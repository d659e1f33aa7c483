//! Helpers shared by integration tests.
#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use scanhd_core::eval::{write_records, EvalReport, PredictionRecord};
use scanhd_core::Param;

pub fn test_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(rel)
}

/// Run the confusion-matrix script over `records`.
pub fn oracle_metrics(records: &[PredictionRecord]) -> serde_json::Value {
    let mut buf = Vec::new();
    write_records(records, &mut buf).unwrap();
    let mut child = Command::new("python3")
        .arg(test_file("oracle/metrics.py"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .expect("python3 is required for the metric oracle");
    child.stdin.take().unwrap().write_all(&buf).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "oracle script failed");
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Field-by-field disagreements between a report and the oracle output.
pub fn oracle_mismatches(report: &EvalReport, oracle: &serde_json::Value) -> Vec<String> {
    let mut bad = Vec::new();
    let mut cmp = |what: String, ours: Option<f64>, theirs: Option<f64>| {
        if ours != theirs {
            bad.push(format!("{what}: {ours:?} vs {theirs:?}"));
        }
    };
    cmp("count".into(), Some(report.count as f64), oracle["count"].as_f64());
    for p in Param::ALL {
        let m = report.param(p);
        let o = &oracle["parameters"][p.name()];
        cmp(format!("{p} exact"), Some(m.exact), o["exact"].as_f64());
        cmp(format!("{p} win1"), m.win1, o["win1"].as_f64());
        cmp(format!("{p} macro_f1"), Some(m.macro_f1), o["macro_f1"].as_f64());
    }
    for (name, ours) in [
        ("average_exact", report.average_exact),
        ("average_win1", report.average_win1),
        ("average_macro_f1", report.average_macro_f1),
        ("system_exact", report.system_exact),
        ("system_win1_range_exact", report.system_win1_range_exact),
    ] {
        cmp(name.into(), Some(ours), oracle[name].as_f64());
    }
    bad
}
