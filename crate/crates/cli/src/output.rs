//! CSV artifacts. Column sets are fixed; floats use Rust's shortest
//! round-trip formatting so two runs can be diffed byte for byte.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smuda_core::linalg::Matrix;
use smuda_core::neural::argmax;
use smuda_core::pipeline::{AdaptationReport, BoundReport, BoundInput, Evaluation, JensenCheck};
use smuda_core::protocol::PrivacyReport;
use smuda_core::{Ensemble, ModelParams};

use crate::CliError;

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let f = File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join("|")
}

/// One row of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub index: usize,
    pub name: String,
    pub method: String,
    pub status: String,
    pub source_count: usize,
    pub target_count: usize,
    pub source_risk: Option<f64>,
    pub source_accuracy: Option<f64>,
    pub d_source: Option<f64>,
    pub d_target_initial: Option<f64>,
    pub d_target_final: Option<f64>,
    pub weight: Option<f64>,
    pub weighting: String,
    pub sampling_mode: String,
    pub high_confidence_fraction: Option<f64>,
    pub sampling_distribution: String,
    pub omitted_classes: String,
    pub adapt_steps: usize,
    pub note: String,
}

pub fn report_rows(report: &AdaptationReport) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = report
        .sources
        .iter()
        .map(|s| ReportRow {
            index: s.index,
            name: s.name.clone(),
            method: report.method.as_str().into(),
            status: "ok".into(),
            source_count: s.source_count,
            target_count: report.target_count,
            source_risk: Some(s.source_risk),
            source_accuracy: Some(s.source_accuracy),
            d_source: Some(s.d_source),
            d_target_initial: Some(s.d_target_initial),
            d_target_final: Some(s.d_target_final),
            weight: Some(s.weight),
            weighting: report.weighting.as_str().into(),
            sampling_mode: s.decision.mode.as_str().into(),
            high_confidence_fraction: Some(s.decision.high_confidence_fraction),
            sampling_distribution: join(&s.decision.distribution),
            omitted_classes: join(&s.omitted_classes),
            adapt_steps: s.trace.len(),
            note: String::new(),
        })
        .collect();
    rows.extend(report.dropped.iter().map(|d| ReportRow {
        index: d.index,
        name: d.name.clone(),
        method: report.method.as_str().into(),
        status: "dropped".into(),
        source_count: 0,
        target_count: report.target_count,
        source_risk: None,
        source_accuracy: None,
        d_source: None,
        d_target_initial: None,
        d_target_final: None,
        weight: None,
        weighting: report.weighting.as_str().into(),
        sampling_mode: String::new(),
        high_confidence_fraction: None,
        sampling_distribution: String::new(),
        omitted_classes: String::new(),
        adapt_steps: 0,
        note: d.reason.clone(),
    }));
    rows.sort_by_key(|r| r.index);
    rows
}

pub fn write_report(path: &Path, report: &AdaptationReport) -> Result<(), CliError> {
    let mut w = writer(path)?;
    for row in report_rows(report) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Bound inputs recovered from `report.csv` rows of surviving sources.
pub fn bound_inputs_from_rows(rows: &[ReportRow]) -> Result<Vec<BoundInput>, CliError> {
    rows.iter()
        .filter(|r| r.status == "ok")
        .map(|r| {
            let need = |v: Option<f64>, what: &str| v.ok_or_else(|| CliError::Runtime(format!("report row {} lacks {what}", r.index)));
            Ok(BoundInput {
                name: r.name.clone(),
                weight: need(r.weight, "weight")?,
                source_risk: need(r.source_risk, "source_risk")?,
                d_target: need(r.d_target_final, "d_target_final")?,
                d_source: need(r.d_source, "d_source")?,
                source_count: r.source_count,
                target_count: r.target_count,
            })
        })
        .collect()
}

pub fn write_trace(path: &Path, trace: &[f64]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["step", "swd"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bound(path: &Path, b: &BoundReport) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["source", "weight", "source_risk", "w_target_prototype", "w_prototype_source", "confidence", "total", "xi", "zeta", "estimator"])?;
    for s in &b.sources {
        w.write_record([
            s.name.clone(),
            s.weight.to_string(),
            s.source_risk.to_string(),
            s.w_target_prototype.to_string(),
            s.w_prototype_source.to_string(),
            s.confidence.to_string(),
            s.total.to_string(),
            b.xi.to_string(),
            b.zeta.to_string(),
            b.estimator.to_string(),
        ])?;
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    // Summary row: the weighted right-hand side, without the combined-error
    // term, which cannot be computed from data.
    w.write_record([
        "weighted_rhs".to_string(),
        "1".into(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        b.weighted_rhs.to_string(),
        b.xi.to_string(),
        b.zeta.to_string(),
        format!("target_risk={};slack={};combined_error_computable={}", opt(b.target_risk), opt(b.slack), b.combined_error_computable),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, probs: &Matrix, labels: &[usize]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut header = vec!["row".to_string(), "pred".into(), "label".into()];
    header.extend((0..probs.cols()).map(|c| format!("p{c}")));
    w.write_record(&header)?;
    for (i, row) in probs.row_iter().enumerate() {
        let mut rec = vec![i.to_string(), argmax(row).to_string(), labels.get(i).map(|l| l.to_string()).unwrap_or_default()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Target encodings under the source-only and adapted encoders.
pub fn write_embeddings(path: &Path, target: &Matrix, labels: &[usize], before: &ModelParams, after: &ModelParams) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let d = after.encoder.latent_dim();
    let mut header = vec!["stage".to_string(), "row".into(), "label".into(), "pred".into()];
    header.extend((0..d).map(|c| format!("z{c}")));
    w.write_record(&header)?;
    for (stage, model) in [("source-only", before), ("adapted", after)] {
        let z = model.encoder.encode(target)?;
        let p = model.classifier.logits(&z)?;
        for (i, row) in z.row_iter().enumerate() {
            let mut rec = vec![stage.to_string(), i.to_string(), labels.get(i).map(|l| l.to_string()).unwrap_or_default(), argmax(p.row(i)).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct Metrics<'a> {
    pub adapted: &'a Evaluation,
    pub source_only: Option<&'a Evaluation>,
    pub bound: &'a BoundReport,
}

pub fn metric_pairs(m: &Metrics<'_>) -> Vec<(String, String)> {
    let mut out = vec![
        ("accuracy".to_string(), m.adapted.accuracy.to_string()),
        ("risk".into(), m.adapted.risk.to_string()),
    ];
    out.extend(jensen_pairs(&m.adapted.jensen));
    for (i, (a, r)) in m.adapted.member_accuracy.iter().zip(&m.adapted.member_risk).enumerate() {
        out.push((format!("member{i}_accuracy"), a.to_string()));
        out.push((format!("member{i}_risk"), r.to_string()));
    }
    if let Some(so) = m.source_only {
        out.push(("source_only_accuracy".into(), so.accuracy.to_string()));
        out.push(("source_only_risk".into(), so.risk.to_string()));
    }
    out.push(("bound_rhs".into(), m.bound.weighted_rhs.to_string()));
    out.push(("bound_holds".into(), m.bound.holds().map(|h| h.to_string()).unwrap_or_default()));
    out.push(("bound_slack".into(), m.bound.slack.map(|s| s.to_string()).unwrap_or_default()));
    out
}

pub fn jensen_pairs(j: &JensenCheck) -> Vec<(String, String)> {
    vec![
        ("jensen_ensemble_risk".into(), j.ensemble_risk.to_string()),
        ("jensen_weighted_member_risk".into(), j.weighted_member_risk.to_string()),
        ("jensen_holds".into(), j.holds(1e-9).to_string()),
    ]
}

pub fn write_pairs(path: &Path, pairs: &[(String, String)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["key", "value"])?;
    for (k, v) in pairs {
        w.write_record([k, v])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push((rec.get(0).unwrap_or_default().to_string(), rec.get(1).unwrap_or_default().to_string()));
    }
    Ok(out)
}

pub fn audit_pairs(r: &PrivacyReport) -> Vec<(String, String)> {
    let mut out = vec![
        ("passed".to_string(), r.passed().to_string()),
        ("messages".into(), r.messages.to_string()),
        ("bytes_scanned".into(), r.bytes_scanned.to_string()),
        ("canaries".into(), r.canaries.to_string()),
        ("rows_checked".into(), r.rows_checked.to_string()),
        ("rows_skipped".into(), r.rows_skipped.to_string()),
        ("matches".into(), r.matches.len().to_string()),
        ("schema_violations".into(), r.schema_violations.len().to_string()),
    ];
    for m in &r.matches {
        out.push((
            "match".into(),
            format!("message {} from {} ({}) byte {}: {} row {}{}", m.entry, m.sender, m.kind, m.offset, m.dataset, m.row, if m.canary { " [canary]" } else { "" }),
        ));
    }
    for v in &r.schema_violations {
        out.push(("violation".into(), v.clone()));
    }
    out
}

pub fn save_ensemble(path: &Path, e: &Ensemble) -> Result<(), CliError> {
    std::fs::write(path, e.to_bytes()).map_err(|err| CliError::Runtime(format!("{}: {err}", path.display())))
}
