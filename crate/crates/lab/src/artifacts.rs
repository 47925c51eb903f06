//! Output files: trace dumps, descriptor tables and reports.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use mialab_core::attack::OptimizationTrace;
use mialab_core::data::DocId;
use mialab_core::eval::EvalReport;
use serde::{Deserialize, Serialize};

/// One line of a trace dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub doc_id: DocId,
    pub question: usize,
    pub variant: String,
    pub delta: f64,
    pub steps: usize,
    pub utility: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub failed: bool,
}

pub fn write_traces(w: &mut impl Write, variant: &str, docs: &[(DocId, Vec<OptimizationTrace>)]) -> anyhow::Result<()> {
    for (id, traces) in docs {
        for (i, t) in traces.iter().enumerate() {
            let line = TraceLine {
                doc_id: *id,
                question: i,
                variant: variant.into(),
                delta: t.delta,
                steps: t.steps,
                utility: t.utility(),
                initial_loss: t.initial_loss,
                final_loss: t.final_loss,
                failed: t.failed,
            };
            serde_json::to_writer(&mut *w, &line)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// One row per document of a descriptor table.
pub struct DescriptorRow<'a> {
    pub doc_id: DocId,
    pub truth: Option<bool>,
    pub features: &'a [f64],
    pub score: f64,
    pub predicted: bool,
}

pub fn write_descriptors<W: Write>(w: W, columns: &[String], rows: &[DescriptorRow<'_>]) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["doc_id".to_string(), "truth".to_string()];
    header.extend(columns.iter().cloned());
    header.extend(["score".to_string(), "predicted".to_string()]);
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.doc_id.0.to_string(), r.truth.map(|t| u8::from(t).to_string()).unwrap_or_default()];
        rec.extend(r.features.iter().map(|v| v.to_string()));
        rec.extend([r.score.to_string(), u8::from(r.predicted).to_string()]);
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Flat summary of one report, for cross-run tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub attack: String,
    pub seed: u64,
    pub config_hash: String,
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub tpr_at_1pct_fpr: f64,
    pub tpr_at_3pct_fpr: f64,
    pub train_test_gap: Option<f64>,
    pub restart_bacc_mean: Option<f64>,
    pub restart_bacc_sd: Option<f64>,
    pub restart_f1_mean: Option<f64>,
    pub restart_f1_sd: Option<f64>,
}

impl ReportRow {
    pub fn new(run: &str, r: &EvalReport) -> Self {
        ReportRow {
            run: run.into(),
            attack: r.attack.clone(),
            seed: r.seed,
            config_hash: r.config_hash.clone(),
            balanced_accuracy: r.balanced_accuracy,
            f1: r.f1,
            auc: r.auc,
            tpr_at_1pct_fpr: r.tpr_at_1.tpr,
            tpr_at_3pct_fpr: r.tpr_at_3.tpr,
            train_test_gap: r.train_test_gap,
            restart_bacc_mean: r.restart_balanced_accuracy.map(|m| m.mean),
            restart_bacc_sd: r.restart_balanced_accuracy.map(|m| m.sd),
            restart_f1_mean: r.restart_f1.map(|m| m.mean),
            restart_f1_sd: r.restart_f1.map(|m| m.sd),
        }
    }
}

pub fn write_rows<W: Write>(w: W, rows: &[ReportRow]) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> anyhow::Result<Vec<ReportRow>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    rd.deserialize().map(|r| r.map_err(Into::into)).collect()
}

pub fn write_roc<W: Write>(w: W, r: &EvalReport) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["threshold", "fpr", "tpr"])?;
    for p in &r.roc {
        out.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

/// Human-readable report block.
pub fn render_report(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "attack            {}", r.attack);
    let _ = writeln!(s, "seed              {}", r.seed);
    let _ = writeln!(s, "config            {}", r.config_hash);
    let _ = writeln!(s, "balanced accuracy {:.4}", r.balanced_accuracy);
    let _ = writeln!(s, "f1                {:.4}", r.f1);
    let _ = writeln!(s, "auc               {:.4}", r.auc);
    for t in [&r.tpr_at_1, &r.tpr_at_3] {
        let _ = writeln!(
            s,
            "tpr@{:<3}fpr        {:.4} (achieved fpr {:.4}{})",
            format!("{}%", t.target_fpr * 100.0),
            t.tpr,
            t.achieved_fpr,
            if t.coarse { ", coarse" } else { "" }
        );
    }
    let _ = writeln!(s, "train-test gap    {}", opt(r.train_test_gap));
    if let (Some(b), Some(f)) = (r.restart_balanced_accuracy, r.restart_f1) {
        let _ = writeln!(s, "restarts          bacc {:.4} ± {:.4}, f1 {:.4} ± {:.4}", b.mean, b.sd, f.mean, f.sd);
    }
    for st in &r.strata {
        let _ = writeln!(s, "member recall {:<4} {:.4} over {}", st.label, st.accuracy, st.members);
    }
    s
}

/// Aligned table of report rows.
pub fn render_table(rows: &[ReportRow]) -> String {
    let w = rows.iter().map(|r| r.attack.len()).max().unwrap_or(6).max(6);
    let rw = rows.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
    let mut s = format!(
        "{:<rw$}  {:<w$}  {:>4}  {:>6}  {:>6}  {:>6}  {:>7}  {:>7}  {:>6}\n",
        "run", "attack", "seed", "bacc", "f1", "auc", "tpr@1%", "tpr@3%", "gap"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<rw$}  {:<w$}  {:>4}  {:>6.3}  {:>6.3}  {:>6.3}  {:>7.3}  {:>7.3}  {:>6}",
            r.run,
            r.attack,
            r.seed,
            r.balanced_accuracy,
            r.f1,
            r.auc,
            r.tpr_at_1pct_fpr,
            r.tpr_at_3pct_fpr,
            r.train_test_gap.map(|g| format!("{g:.3}")).unwrap_or_else(|| "-".into()),
        );
    }
    s
}
