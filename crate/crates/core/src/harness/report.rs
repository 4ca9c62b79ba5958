//! Report rendering: per-cell CSV, family-grouped text tables, full JSON,
//! and the accuracy/AUROC rank correlation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::harness::run::{Benchmark, EvalReport};
use crate::metrics::spearman_rho;
use crate::scores::{Family, Method};

pub const CSV_HEADER: [&str; 12] = [
    "method", "backbone", "seed", "group", "fpr95_id", "fpr95_ood", "fpr99_id", "fpr99_ood",
    "auroc", "acc", "n_id", "n_ood",
];

const METRIC_HEADERS: [&str; 5] = ["FPR95-ID↓", "FPR95-OoD↓", "FPR99-ID↓", "FPR99-OoD↓", "AUROC↑"];
const NAME_WIDTH: usize = 12;
const CELL_WIDTH: usize = 10;

/// One row per (method, backbone, seed, group).
pub fn render_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| OodError::InvalidData(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &report.rows {
        let m = &r.metrics;
        w.write_record([
            r.method.id().to_string(),
            r.backbone.clone(),
            r.seed.to_string(),
            r.group.clone(),
            m.fpr95_id.to_string(),
            m.fpr95_ood.to_string(),
            m.fpr99_id.to_string(),
            m.fpr99_ood.to_string(),
            m.auroc.to_string(),
            m.acc.map(|a| a.to_string()).unwrap_or_default(),
            m.n_id.to_string(),
            m.n_ood.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| OodError::InvalidData(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| OodError::InvalidData(e.to_string()))
}

fn block_width() -> usize {
    METRIC_HEADERS.len() * CELL_WIDTH + METRIC_HEADERS.len() - 1
}

/// Text table of seed-averaged metrics at each method's best backbone for the
/// benchmark, grouped by method family.
pub fn render_table(report: &EvalReport, bench: Benchmark) -> String {
    let groups: Vec<&String> = report.groups.iter().filter(|g| bench.includes(g)).collect();
    let bw = block_width();
    let mut lines = Vec::new();
    lines.push(format!(
        "{} benchmark: best backbone per method, mean over {} seed(s)",
        bench.title(),
        report.seeds.len()
    ));
    lines.push(String::new());

    let mut head1 = format!("{:<NAME_WIDTH$}", "Method");
    let mut head2 = format!("{:<NAME_WIDTH$}", "");
    for g in &groups {
        head1.push_str(&format!(" | {g:^bw$}"));
        let cols: Vec<String> = METRIC_HEADERS.iter().map(|h| format!("{h:>CELL_WIDTH$}")).collect();
        head2.push_str(&format!(" | {}", cols.join(" ")));
    }
    head1.push_str(" | Network");
    head2.push_str(" |");
    let total = head1.chars().count();
    lines.push(head1);
    lines.push(head2);
    lines.push("-".repeat(total));

    let listed: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| report.methods.iter().any(|c| c.method == *m))
        .collect();
    for family in [Family::Distance, Family::Classification, Family::Density] {
        let members: Vec<Method> = listed.iter().copied().filter(|m| m.family() == family).collect();
        if members.is_empty() {
            continue;
        }
        lines.push(format!("{:^total$}", family.title()));
        for m in members {
            let best = report.best_for(m, bench);
            let mut line = format!("{:<NAME_WIDTH$}", m.display_name());
            for g in &groups {
                let cells: Vec<String> = match best.and_then(|b| report.aggregate(m, &b.backbone, g)) {
                    Some(s) => [s.fpr95_id, s.fpr95_ood, s.fpr99_id, s.fpr99_ood, s.auroc]
                        .iter()
                        .map(|v| format!("{:>CELL_WIDTH$.2}", v.mean))
                        .collect(),
                    None => vec![format!("{:>CELL_WIDTH$}", "-"); METRIC_HEADERS.len()],
                };
                line.push_str(&format!(" | {}", cells.join(" ")));
            }
            line.push_str(&format!(" | {}", best.map_or("-", |b| b.backbone.as_str())));
            lines.push(line);
        }
    }
    let mut out: String = lines
        .iter()
        .map(|l| l.trim_end())
        .collect::<Vec<_>>()
        .join("\n");
    out.push('\n');
    out
}

pub fn render_json(report: &EvalReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Writes `report.csv`, `report.json` and one text table per benchmark that
/// has groups. Returns the written paths.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("report.csv", render_csv(report)?)?;
    for (bench, name) in [(Benchmark::Far, "far.txt"), (Benchmark::Near, "near.txt")] {
        if report.groups.iter().any(|g| bench.includes(g)) {
            put(name, render_table(report, bench))?;
        }
    }
    put("report.json", render_json(report)?)?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCorrelation {
    pub group: String,
    /// `None` when either variable is constant across cells.
    pub rho: Option<f64>,
    pub n: usize,
}

/// Spearman ρ between seed-averaged ID accuracy and AUROC over every
/// (method, backbone) cell, per OoD group.
pub fn correlation_study(report: &EvalReport) -> Vec<GroupCorrelation> {
    report
        .groups
        .iter()
        .map(|g| {
            let pairs: Vec<(f64, f64)> = report
                .aggregates
                .iter()
                .filter(|a| &a.group == g)
                .filter_map(|a| a.summary.acc.map(|acc| (acc.mean, a.summary.auroc.mean)))
                .collect();
            let (acc, auroc): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            GroupCorrelation {
                group: g.clone(),
                rho: spearman_rho(&acc, &auroc).ok(),
                n: acc.len(),
            }
        })
        .collect()
}
