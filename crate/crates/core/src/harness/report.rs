//! Sweep outputs: per-cell and summary CSVs, a text table, JSON records and
//! one SVG trajectory plot per cell.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{write_file, ExperimentConfig, HarnessError, RunRecord};
use crate::metrics::{Entity, MetricsReport, REPORT_CSV_HEADER};
use crate::reconstruct::Method;

/// Mean scores of one scenario, entity and method over the seeds that ran.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub entity: Entity,
    pub method: String,
    pub rmse: f64,
    pub ssi: f64,
    pub esi: f64,
    pub rmse_gap: f64,
    pub cells_ok: usize,
    pub cells_failed: usize,
}

pub const SUMMARY_CSV_HEADER: &str = "scenario,entity,method,rmse_deg,ssi,esi,rmse_gap_deg,cells_ok,cells_failed";

fn ordered<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// One row per scenario, method and entity, in plan order.
pub fn summarize(records: &[RunRecord], methods: &[Method]) -> Vec<SummaryRow> {
    let scenarios = ordered(records.iter().map(|r| r.cell.scenario.clone()));
    let mut rows = Vec::new();
    for s in &scenarios {
        let cells: Vec<&RunRecord> = records.iter().filter(|r| &r.cell.scenario == s).collect();
        let failed = cells.iter().filter(|r| !r.is_ok()).count();
        for m in methods {
            for e in Entity::ALL {
                let hits: Vec<&MetricsReport> = cells
                    .iter()
                    .flat_map(|r| &r.reports)
                    .filter(|rep| rep.entity == e && rep.method == m.name())
                    .collect();
                let mean = |f: fn(&MetricsReport) -> f64| {
                    if hits.is_empty() {
                        f64::NAN
                    } else {
                        hits.iter().map(|r| f(r)).sum::<f64>() / hits.len() as f64
                    }
                };
                rows.push(SummaryRow {
                    scenario: s.clone(),
                    entity: e,
                    method: m.name().to_owned(),
                    rmse: mean(|r| r.rmse),
                    ssi: mean(|r| r.ssi),
                    esi: mean(|r| r.esi),
                    rmse_gap: mean(|r| r.rmse_gap),
                    cells_ok: hits.len(),
                    cells_failed: failed,
                });
            }
        }
    }
    rows
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.scenario, r.entity, r.method, r.rmse, r.ssi, r.esi, r.rmse_gap, r.cells_ok, r.cells_failed
        );
    }
    out
}

/// Per-cell metric rows with the seed folded into the scenario label.
pub fn report_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for r in records {
        for rep in &r.reports {
            let row = MetricsReport {
                scenario: r.cell.id(),
                ..rep.clone()
            };
            out.push_str(&row.csv_row());
            out.push('\n');
        }
    }
    out
}

/// Scenario rows by method columns, one block per entity.
pub fn summary_table(title: &str, rows: &[SummaryRow], methods: &[Method]) -> String {
    let scenarios = ordered(rows.iter().map(|r| r.scenario.clone()));
    let mut out = format!("{title}\n\n");
    for e in Entity::ALL {
        let _ = write!(out, "{:<18}", e.name());
        for m in methods {
            let _ = write!(out, "| {:^26} ", m.name());
        }
        out.push('\n');
        let _ = write!(out, "{:<18}", "");
        for _ in methods {
            let _ = write!(out, "| {:>8} {:>8} {:>8} ", "RMSE", "SSI", "ESI");
        }
        out.push('\n');
        for s in &scenarios {
            let _ = write!(out, "{s:<18}");
            for m in methods {
                match rows.iter().find(|r| &r.scenario == s && r.entity == e && r.method == m.name()) {
                    Some(r) if r.cells_ok > 0 => {
                        let _ = write!(out, "| {:>8.2} {:>8.2} {:>8.2} ", r.rmse, r.ssi, r.esi);
                    }
                    _ => {
                        let _ = write!(out, "| {:^26} ", "failed");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

/// Maps frame indices and angles into the plot box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlotScale {
    pub frames: usize,
    pub lo: f64,
    pub hi: f64,
}

impl PlotScale {
    pub fn x(&self, frame: f64) -> f64 {
        MARGIN + frame / (self.frames.max(2) - 1) as f64 * (SVG_W - 2.0 * MARGIN)
    }

    pub fn y(&self, angle: f64) -> f64 {
        SVG_H - MARGIN - (angle - self.lo) / (self.hi - self.lo) * (SVG_H - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn polyline(out: &mut String, scale: &PlotScale, series: &[f64], color: &str, width: f64) {
    let pts: Vec<String> = series
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{:.2},{:.2}", scale.x(i as f64), scale.y(*a)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{}"/>"#,
        pts.join(" ")
    );
}

/// Ground truth and every method's trajectory with the detected window
/// shaded; `None` for a failed cell.
pub fn render_svg(record: &RunRecord) -> Option<String> {
    let truth = record.trajectories.truth.as_ref()?;
    let (start, end) = record.detected?;
    let all = std::iter::once(truth).chain(record.trajectories.methods.iter().map(|(_, t)| t));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in all {
        for a in t.angles() {
            lo = lo.min(*a);
            hi = hi.max(*a);
        }
    }
    let pad = ((hi - lo) * 0.08).max(1.0);
    let scale = PlotScale {
        frames: truth.len(),
        lo: lo - pad,
        hi: hi + pad,
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(&record.cell.id()));
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{SVG_W}" height="{SVG_H}" fill="#ffffff"/>"##);
    let (x0, x1) = (scale.x(start as f64), scale.x(end as f64));
    let _ = writeln!(
        out,
        r##"<rect class="anomaly" x="{x0:.4}" y="{MARGIN}" width="{:.4}" height="{}" fill="#f2c94c" fill-opacity="0.35"/>"##,
        x1 - x0,
        SVG_H - 2.0 * MARGIN
    );
    let _ = writeln!(
        out,
        r##"<g stroke="#444444" stroke-width="1"><line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}"/></g>"##,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN
    );
    let _ = writeln!(
        out,
        r##"<g font-family="sans-serif" font-size="11" fill="#222222"><text x="{}" y="{}">frame</text><text x="6" y="{}">{:.1}</text><text x="6" y="{}">{:.1}</text></g>"##,
        SVG_W / 2.0,
        SVG_H - 14.0,
        MARGIN + 4.0,
        scale.hi,
        SVG_H - MARGIN,
        scale.lo
    );
    polyline(&mut out, &scale, truth.angles(), "#000000", 2.0);
    let mut legend = vec![("Ground truth".to_owned(), "#000000")];
    for (i, (m, t)) in record.trajectories.methods.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        polyline(&mut out, &scale, t.angles(), color, 1.4);
        legend.push((m.name().to_owned(), color));
    }
    for (i, (name, color)) in legend.iter().enumerate() {
        let y = 18.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<g font-family="sans-serif" font-size="11"><line x1="{a}" y1="{y}" x2="{b}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{c}" y="{t}">{}</text></g>"#,
            escape(name),
            a = SVG_W - MARGIN - 120.0,
            b = SVG_W - MARGIN - 100.0,
            c = SVG_W - MARGIN - 94.0,
            t = y + 4.0
        );
    }
    out.push_str("</svg>\n");
    Some(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub report_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub summary_table: PathBuf,
    pub records_json: PathBuf,
    pub plots: Vec<PathBuf>,
}

#[derive(Serialize)]
struct RecordsFile<'a> {
    config: &'a ExperimentConfig,
    records: &'a [RunRecord],
}

/// Writes the sweep outputs under `<out_dir>/<experiment>/`.
pub fn emit_report(
    records: &mut [RunRecord],
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ReportFiles, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    let base = out_dir.join(cfg.kind.name());
    let mut plots = Vec::new();
    for r in records.iter_mut() {
        if let Some(svg) = render_svg(r) {
            let p = r.dir(out_dir).join("plot.svg");
            write_file(&p, svg)?;
            r.artifacts.push(p.clone());
            plots.push(p);
        }
    }
    let rows = summarize(records, &cfg.methods);
    let files = ReportFiles {
        report_csv: base.join("report.csv"),
        summary_csv: base.join("summary.csv"),
        summary_table: base.join("summary_table.txt"),
        records_json: base.join("records.json"),
        plots,
    };
    write_file(&files.report_csv, report_csv(records))?;
    write_file(&files.summary_csv, summary_csv(&rows))?;
    let title = format!("{} ({}, mean over {} seeds)", cfg.kind.title(), cfg.kind.short(), cfg.seeds.len());
    write_file(&files.summary_table, summary_table(&title, &rows, &cfg.methods))?;
    let json = serde_json::to_string_pretty(&RecordsFile { config: cfg, records })?;
    write_file(&files.records_json, json)?;
    Ok(files)
}
