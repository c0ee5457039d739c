//! Writing experiment results as JSON, CSV and SVG line plots.
//!
//! JSON and CSV are always written. Each CSV starts with `#` comment lines
//! echoing the settings and seeds, followed by a header row and data rows.
//! Wall-clock timings go to a separate file so reports stay byte-identical
//! across reruns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{AblationResult, AblationSettings, SimilarityStudy, TransferResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" | "svg-plot" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// A result that can be rendered by [`emit_report`].
pub trait Report: Serialize + DeserializeOwned {
    /// Compact JSON of the settings that produced the result.
    fn config_echo(&self) -> Result<String>;
    /// Human-readable list of every seed involved.
    fn seed_echo(&self) -> String;
    fn csv_records(&self) -> (Vec<String>, Vec<Vec<String>>);
    fn svg(&self) -> String;
}

/// Writes `<stem>.json` and `<stem>.csv`, plus `<stem>.svg` when `formats`
/// asks for it. Returns the paths written.
pub fn emit_report<R: Report>(
    report: &R,
    dir: &Path,
    stem: &str,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut written = Vec::new();

    let json = dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    write_file(&json, text.as_bytes())?;
    written.push(json);

    let csv = dir.join(format!("{stem}.csv"));
    write_file(&csv, &render_csv(report)?)?;
    written.push(csv);

    if formats.contains(&ReportFormat::Svg) {
        let svg = dir.join(format!("{stem}.svg"));
        write_file(&svg, report.svg().as_bytes())?;
        written.push(svg);
    }
    Ok(written)
}

pub fn read_json_report<R: Report>(path: &Path) -> Result<R> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `<stem>.timings.csv` with one row per trained model.
pub fn write_timings(dir: &Path, stem: &str, wall_clock_secs: &[f64]) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.timings.csv"));
    let mut out = String::from("row,wall_clock_secs\n");
    for (i, s) in wall_clock_secs.iter().enumerate() {
        writeln!(out, "{i},{s:.3}").expect("writing to a String");
    }
    write_file(&path, out.as_bytes())?;
    Ok(path)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn render_csv<R: Report>(report: &R) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(format!("# config: {}\n", report.config_echo()?).as_bytes());
    out.extend_from_slice(format!("# seeds: {}\n", report.seed_echo()).as_bytes());
    let (header, rows) = report.csv_records();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Serialization(format!("flushing csv: {e}")))
}

fn ablation_seeds(s: &AblationSettings) -> String {
    format!(
        "partition={} train={} markov={}",
        s.partition_seed, s.train.seed, s.markov.seed
    )
}

const METRIC_COLUMNS: [&str; 9] = [
    "fraction",
    "n_train_sessions",
    "top_k_accuracy",
    "catalog_coverage",
    "novelty",
    "k",
    "n_events",
    "novelty_excluded",
    "final_train_loss",
];

fn metric_cells(r: &AblationResult) -> Vec<Vec<String>> {
    r.rows
        .iter()
        .map(|row| {
            let m = &row.metrics;
            vec![
                row.fraction.to_string(),
                row.n_train_sessions.to_string(),
                m.top_k_accuracy.to_string(),
                m.catalog_coverage.to_string(),
                m.novelty.to_string(),
                m.k.to_string(),
                m.n_events.to_string(),
                m.novelty_excluded.to_string(),
                row.loss_trace
                    .last()
                    .map(f64::to_string)
                    .unwrap_or_default(),
                row.validation_hash.clone(),
            ]
        })
        .collect()
}

fn metric_header() -> Vec<String> {
    METRIC_COLUMNS
        .iter()
        .chain(&["validation_hash"])
        .map(|s| s.to_string())
        .collect()
}

fn points(
    r: &AblationResult,
    metric: impl Fn(&crate::metrics::MetricsReport) -> f64,
) -> Vec<(f64, f64)> {
    r.rows
        .iter()
        .map(|row| (row.fraction.value(), metric(&row.metrics)))
        .collect()
}

impl Report for AblationResult {
    fn config_echo(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.settings)?)
    }

    fn seed_echo(&self) -> String {
        ablation_seeds(&self.settings)
    }

    fn csv_records(&self) -> (Vec<String>, Vec<Vec<String>>) {
        (metric_header(), metric_cells(self))
    }

    fn svg(&self) -> String {
        let k = self.settings.k;
        let title = format!(
            "{} trained on {}, validated on {}",
            self.settings.model, self.train_market, self.eval_market
        );
        let panels = [
            (
                format!("top-{k} accuracy"),
                points(self, |m| m.top_k_accuracy),
            ),
            (
                "catalog coverage".to_string(),
                points(self, |m| m.catalog_coverage),
            ),
            ("novelty".to_string(), points(self, |m| m.novelty)),
        ];
        let panels: Vec<Panel> = panels
            .into_iter()
            .map(|(name, pts)| Panel {
                y_label: name.clone(),
                series: vec![(name, pts)],
            })
            .collect();
        render_svg(&title, &self.config_echo().unwrap_or_default(), &panels)
    }
}

impl Report for TransferResult {
    fn config_echo(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.baseline.settings)?)
    }

    fn seed_echo(&self) -> String {
        ablation_seeds(&self.baseline.settings)
    }

    fn csv_records(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["curve".to_string(), "train_market".to_string()];
        header.extend(metric_header());
        let mut rows = Vec::new();
        let curves = std::iter::once(("baseline", &self.baseline))
            .chain(self.sources.iter().map(|s| ("source", s)));
        for (kind, r) in curves {
            for cells in metric_cells(r) {
                let mut row = vec![kind.to_string(), r.train_market.clone()];
                row.extend(cells);
                rows.push(row);
            }
        }
        (header, rows)
    }

    fn svg(&self) -> String {
        let k = self.baseline.settings.k;
        let mut series = vec![(
            format!("{} (baseline)", self.baseline.train_market),
            points(&self.baseline, |m| m.top_k_accuracy),
        )];
        for s in &self.sources {
            series.push((s.train_market.clone(), points(s, |m| m.top_k_accuracy)));
        }
        let panel = Panel {
            y_label: format!("top-{k} accuracy on {}", self.target),
            series,
        };
        render_svg(
            &format!("transfer to {}", self.target),
            &self.config_echo().unwrap_or_default(),
            &[panel],
        )
    }
}

impl Report for SimilarityStudy {
    fn config_echo(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.settings)?)
    }

    fn seed_echo(&self) -> String {
        format!(
            "partition={} centroid={} train={}",
            self.settings.partition_seed, self.settings.centroid_seed, self.settings.train.seed
        )
    }

    fn csv_records(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let ids = &self.matrix.market_ids;
        let mut header = vec!["market".to_string()];
        header.extend(ids.iter().cloned());
        let rows = ids
            .iter()
            .zip(&self.matrix.values)
            .map(|(id, vals)| {
                let mut row = vec![id.clone()];
                row.extend(vals.iter().map(f64::to_string));
                row
            })
            .collect();
        (header, rows)
    }

    fn svg(&self) -> String {
        render_heatmap(
            &self.matrix.market_ids,
            &self.matrix.values,
            &self.config_echo().unwrap_or_default(),
        )
    }
}

struct Panel {
    y_label: String,
    series: Vec<(String, Vec<(f64, f64)>)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];
const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_open(out: &mut String, width: f64, height: f64, title: &str, desc: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, "<desc>{}</desc>", escape(desc));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

fn render_svg(title: &str, config: &str, panels: &[Panel]) -> String {
    let width = panels.len() as f64 * (PANEL_W + MARGIN) + MARGIN;
    let height = PANEL_H + 2.5 * MARGIN;
    let mut out = String::new();
    svg_open(&mut out, width, height, title, config);
    for (i, panel) in panels.iter().enumerate() {
        let x0 = MARGIN + i as f64 * (PANEL_W + MARGIN);
        draw_panel(&mut out, x0, 1.5 * MARGIN, panel);
    }
    out.push_str("</svg>\n");
    out
}

fn draw_panel(out: &mut String, x0: f64, y0: f64, panel: &Panel) {
    let ys = panel
        .series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(_, y)| y));
    let (mut lo, mut hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
        (lo.min(y), hi.max(y))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |x: f64| x0 + x * PANEL_W;
    let sy = |y: f64| y0 + PANEL_H - (y - lo) / (hi - lo) * PANEL_H;

    let _ = writeln!(
        out,
        r##"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
    );
    for t in 0..=5 {
        let v = lo + (hi - lo) * t as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            x0 - 4.0,
            sy(v) + 4.0
        );
    }
    for t in 0..=10 {
        let x = t as f64 / 10.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{x:.1}</text>"#,
            sx(x),
            y0 + PANEL_H + 14.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">training fraction</text>"#,
        x0 + PANEL_W / 2.0,
        y0 + PANEL_H + 30.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        x0 + PANEL_W / 2.0,
        y0 - 6.0,
        escape(&panel.y_label)
    );
    for (i, (name, pts)) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            coords.join(" "),
            escape(name)
        );
        if panel.series.len() > 1 {
            let ly = y0 + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
                x0 + 8.0,
                escape(name)
            );
        }
    }
}

fn render_heatmap(ids: &[String], values: &[Vec<f64>], config: &str) -> String {
    let cell = 48.0;
    let left = 120.0;
    let top = 110.0;
    let n = ids.len() as f64;
    let mut out = String::new();
    svg_open(
        &mut out,
        left + n * cell + 20.0,
        top + n * cell + 20.0,
        "market similarity",
        config,
    );
    for (i, id) in ids.iter().enumerate() {
        let c = top + (i as f64 + 0.5) * cell + 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{c:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            escape(id)
        );
        let cx = left + (i as f64 + 0.5) * cell;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{}" text-anchor="start" transform="rotate(-60 {cx:.1} {})">{}</text>"#,
            top - 6.0,
            top - 6.0,
            escape(id)
        );
    }
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            // white at -1, dark blue at 1
            let t = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
            let shade = |full: f64| (255.0 - t * (255.0 - full)).round() as u8;
            let (x, y) = (left + j as f64 * cell, top + i as f64 * cell);
            let _ = writeln!(
                out,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="#{:02x}{:02x}{:02x}" stroke="white"/>"##,
                shade(8.0),
                shade(48.0),
                shade(107.0)
            );
            let ink = if t > 0.6 { "white" } else { "black" };
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{ink}">{v:.3}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{AblationRow, Fraction};
    use crate::metrics::MetricsReport;

    fn sample_result(n_rows: usize) -> AblationResult {
        AblationResult {
            train_market: "a".into(),
            eval_market: "a".into(),
            settings: AblationSettings::default(),
            dataset_hash: "d".into(),
            rows: Fraction::all()
                .into_iter()
                .take(n_rows)
                .map(|f| AblationRow {
                    fraction: f,
                    n_train_sessions: 10 * f.tenths(),
                    metrics: MetricsReport {
                        top_k_accuracy: 0.1 + f.value() / 3.0,
                        catalog_coverage: 0.5 - f.value() / 7.0,
                        novelty: 2.0 + f.value(),
                        k: 4,
                        n_events: 100,
                        novelty_excluded: 0,
                    },
                    validation_hash: "v".into(),
                    loss_trace: vec![3.0, 2.5],
                })
                .collect(),
        }
    }

    #[test]
    fn csv_has_echo_header_and_rows() {
        let r = sample_result(10);
        let bytes = render_csv(&r).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config: {"));
        assert!(lines[1].starts_with("# seeds: partition=0"));
        let data: Vec<&str> = lines
            .iter()
            .filter(|l| !l.starts_with('#'))
            .copied()
            .collect();
        assert_eq!(data.len(), 11);
        assert!(data[0].starts_with("fraction,n_train_sessions,top_k_accuracy"));
        assert!(data[1].starts_with("0.1,10,"));
    }

    #[test]
    fn svg_one_polyline_per_metric() {
        let svg = sample_result(10).svg();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("<desc>{&quot;model&quot;:&quot;lstm-ce&quot;"));
    }

    #[test]
    fn escape_markup() {
        assert_eq!(escape(r#"<a & "b">"#), "&lt;a &amp; &quot;b&quot;&gt;");
    }
}
