//! Plot data: predicted-vs-actual scatter, metric histograms and a static
//! SVG scatter with a `y = x` reference line.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{EvalError, EvalReport, PredictionRow};
use crate::dataset::fmt_num;

pub const SCATTER_CSV_HEADER: &str = "cell_id,actual_days,predicted_days,model";
pub const HIST_CSV_HEADER: &str = "model,metric,value";
pub const TRIALS_CSV_HEADER: &str = "model,repeat,fold,rmse_days,mape_percent";

const SVG_SIZE: f64 = 480.0;
const SVG_MARGIN: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

fn preamble_lines(preamble: &[String]) -> String {
    preamble.iter().map(|l| format!("# {l}\n")).collect()
}

pub fn write_trials_csv<W: Write>(mut out: W, report: &EvalReport, preamble: &[String]) -> std::io::Result<()> {
    out.write_all(preamble_lines(preamble).as_bytes())?;
    writeln!(out, "{TRIALS_CSV_HEADER}")?;
    for t in &report.per_trial {
        writeln!(out, "{},{},{},{},{}", t.model, t.repeat, t.fold, fmt_num(t.rmse_days), fmt_num(t.mape_percent))?;
    }
    Ok(())
}

/// Screen coordinates of a (actual, predicted) pair. Both axes share one
/// scale, so the reference line runs corner to corner.
pub fn svg_point(actual: f64, predicted: f64, lo: f64, hi: f64) -> (f64, f64) {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let w = SVG_SIZE - 2.0 * SVG_MARGIN;
    (SVG_MARGIN + (actual - lo) / span * w, SVG_MARGIN + w - (predicted - lo) / span * w)
}

fn scatter_svg(predictions: &[PredictionRow], preamble: &[String]) -> String {
    let (lo, hi) = predictions
        .iter()
        .flat_map(|p| [p.actual_days, p.predicted_days])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let mut models: Vec<&str> = Vec::new();
    for p in predictions {
        if !models.contains(&p.model.as_str()) {
            models.push(&p.model);
        }
    }
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#);
    for line in preamble {
        let _ = writeln!(svg, "<!-- {} -->", line.replace("--", "- -"));
    }
    let (x0, y0) = svg_point(lo, lo, lo, hi);
    let (x1, y1) = svg_point(hi, hi, lo, hi);
    let _ = writeln!(svg, r#"<rect x="{SVG_MARGIN}" y="{SVG_MARGIN}" width="{w}" height="{w}" fill="none" stroke="black"/>"#, w = SVG_SIZE - 2.0 * SVG_MARGIN);
    let _ = writeln!(svg, r##"<line class="identity" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="#888888" stroke-dasharray="4 4"/>"##);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">actual (days)</text>"#, SVG_SIZE / 2.0, SVG_SIZE - 10.0);
    let _ = writeln!(svg, r#"<text x="12" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 12 {})">predicted (days)</text>"#, SVG_SIZE / 2.0, SVG_SIZE / 2.0);
    let _ = writeln!(svg, r#"<text x="{SVG_MARGIN}" y="{}" font-size="10">{}</text>"#, SVG_SIZE - SVG_MARGIN + 14.0, fmt_num(lo));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#, SVG_SIZE - SVG_MARGIN, SVG_SIZE - SVG_MARGIN + 14.0, fmt_num(hi));
    for (m, model) in models.iter().enumerate() {
        let color = PALETTE[m % PALETTE.len()];
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" fill="{color}">{model}</text>"#, SVG_MARGIN + 6.0, SVG_MARGIN + 14.0 * (m + 1) as f64);
        for p in predictions.iter().filter(|p| p.model == *model) {
            let (cx, cy) = svg_point(p.actual_days, p.predicted_days, lo, hi);
            let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `scatter.csv`, `hist.csv` and `scatter.svg` into `out_dir`.
/// `preamble` lines are written as comments at the top of each file.
pub fn emit_plot_data(report: &EvalReport, out_dir: &Path, preamble: &[String]) -> Result<(), EvalError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut scatter = preamble_lines(preamble);
    scatter.push_str(SCATTER_CSV_HEADER);
    scatter.push('\n');
    for p in &report.predictions {
        let _ = writeln!(scatter, "{},{},{},{}", p.cell_id, fmt_num(p.actual_days), fmt_num(p.predicted_days), p.model);
    }
    let path = out_dir.join("scatter.csv");
    fs::write(&path, scatter).map_err(io_err(&path))?;

    let mut hist = preamble_lines(preamble);
    hist.push_str(HIST_CSV_HEADER);
    hist.push('\n');
    for t in &report.per_trial {
        let _ = writeln!(hist, "{},rmse_days,{}", t.model, fmt_num(t.rmse_days));
        let _ = writeln!(hist, "{},mape_percent,{}", t.model, fmt_num(t.mape_percent));
    }
    let path = out_dir.join("hist.csv");
    fs::write(&path, hist).map_err(io_err(&path))?;

    let path = out_dir.join("scatter.svg");
    fs::write(&path, scatter_svg(&report.predictions, preamble)).map_err(io_err(&path))?;
    Ok(())
}
