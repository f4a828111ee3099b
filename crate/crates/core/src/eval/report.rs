use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DiversityReport, EntryPrediction, EvalResult, MatrixCell, MatrixReport, Variant};
use crate::error::{Error, Result};
use crate::metrics::mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "svg" | "plots" => Ok(ReportFormat::Svg),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    OneMinusJsd,
    Emd,
    Accuracy,
}

impl Metric {
    pub fn title(self) -> &'static str {
        match self {
            Metric::OneMinusJsd => "1-JSD (higher is better)",
            Metric::Emd => "EMD (lower is better)",
            Metric::Accuracy => "Argmax accuracy (higher is better)",
        }
    }

    pub fn of(self, r: &EvalResult) -> f64 {
        match self {
            Metric::OneMinusJsd => r.mean_one_minus_jsd,
            Metric::Emd => r.mean_emd,
            Metric::Accuracy => r.accuracy,
        }
    }
}

/// Everything one report directory is built from.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub title: String,
    pub results: Vec<EvalResult>,
    /// Cells that could not be evaluated.
    pub unavailable: Vec<MatrixCell>,
    pub predictions: Vec<EntryPrediction>,
    pub diversity: Vec<DiversityReport>,
    pub run_metadata: serde_json::Value,
}

impl ReportBundle {
    pub fn from_matrix(title: impl Into<String>, matrix: MatrixReport, run_metadata: serde_json::Value) -> Self {
        let results = matrix.results();
        let unavailable = matrix.cells.into_iter().filter(|c| c.result.is_none()).collect();
        Self {
            title: title.into(),
            results,
            unavailable,
            predictions: matrix.predictions,
            diversity: Vec::new(),
            run_metadata,
        }
    }
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

/// Rows × subsets grid of one metric, with an unweighted-mean Avg. column.
pub fn markdown_grid(results: &[EvalResult], unavailable: &[MatrixCell], metric: Metric) -> String {
    let labels: Vec<String> = results.iter().map(EvalResult::row_label).collect();
    let rows = first_seen(labels.iter().map(String::as_str).chain(unavailable.iter().map(|c| c.row.as_str())));
    let subsets = first_seen(results.iter().map(|r| r.subset.as_str()).chain(unavailable.iter().map(|c| c.subset.as_str())));
    let mut out = String::new();
    let _ = writeln!(out, "| | {} | Avg. |", subsets.join(" | "));
    let _ = writeln!(out, "|---|{}---|", "---|".repeat(subsets.len()));
    for row in &rows {
        let values: Vec<Option<f64>> = subsets
            .iter()
            .map(|s| results.iter().find(|r| &r.row_label() == row && &r.subset == s).map(|r| metric.of(r)))
            .collect();
        let cells: Vec<String> =
            values.iter().map(|v| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))).collect();
        let avg = values.iter().copied().collect::<Option<Vec<f64>>>().and_then(|v| mean(&v));
        let avg = avg.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(out, "| {row} | {} | {avg} |", cells.join(" | "));
    }
    out
}

fn markdown_report(bundle: &ReportBundle) -> String {
    let mut out = format!("# {}\n\n", bundle.title);
    out.push_str("Avg. is the unweighted mean over the subset columns. [ctrl] rows are scored against the original country's distribution.\n\n");
    for metric in [Metric::OneMinusJsd, Metric::Emd, Metric::Accuracy] {
        let _ = writeln!(out, "## {}\n", metric.title());
        out.push_str(&markdown_grid(&bundle.results, &bundle.unavailable, metric));
        out.push('\n');
    }
    let failing: Vec<&EvalResult> = bundle.results.iter().filter(|r| r.failures > 0).collect();
    if !failing.is_empty() {
        out.push_str("## Failed entries\n\n| Row | Subset | Scored | Failed | Failure rate |\n|---|---|---|---|---|\n");
        for r in failing {
            let rate = r.failures as f64 / (r.failures + r.entry_count) as f64;
            let _ = writeln!(out, "| {} | {} | {} | {} | {rate:.3} |", r.row_label(), r.subset, r.entry_count, r.failures);
        }
        out.push('\n');
    }
    if !bundle.unavailable.is_empty() {
        out.push_str("## Unavailable cells\n\n");
        for c in &bundle.unavailable {
            let _ = writeln!(out, "- {} / {}: {}", c.row, c.subset, c.note.as_deref().unwrap_or("unavailable"));
        }
        out.push('\n');
    }
    if !bundle.diversity.is_empty() {
        out.push_str("## Cross-country diversity (mean pairwise 1-JSD, lower is more diverse)\n\n");
        out.push_str("| Predictor | Questions | Human | Model | Skipped |\n|---|---|---|---|---|\n");
        for d in &bundle.diversity {
            let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                d.predictor_id,
                d.questions.len(),
                f(d.human_mean),
                f(d.model_mean),
                d.skipped.len()
            );
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    predictor_id: String,
    subset: String,
    variant: Variant,
    mean_one_minus_jsd: f64,
    mean_emd: f64,
    accuracy: f64,
    entry_count: usize,
    failures: usize,
    run_metadata: String,
}

pub fn write_results_csv<W: Write>(out: W, results: &[EvalResult]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in results {
        writer.serialize(CsvRow {
            predictor_id: r.predictor_id.clone(),
            subset: r.subset.clone(),
            variant: r.variant,
            mean_one_minus_jsd: r.mean_one_minus_jsd,
            mean_emd: r.mean_emd,
            accuracy: r.accuracy,
            entry_count: r.entry_count,
            failures: r.failures,
            run_metadata: serde_json::to_string(&r.run_metadata)?,
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<EvalResult>> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(EvalResult {
                predictor_id: row.predictor_id,
                subset: row.subset,
                variant: row.variant,
                mean_one_minus_jsd: row.mean_one_minus_jsd,
                mean_emd: row.mean_emd,
                accuracy: row.accuracy,
                entry_count: row.entry_count,
                failures: row.failures,
                run_metadata: serde_json::from_str::<BTreeMap<String, String>>(&row.run_metadata)?,
            })
        })
        .collect()
}

pub fn write_predictions_jsonl<W: Write>(mut out: W, predictions: &[EntryPrediction]) -> Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions_jsonl<R: BufRead>(input: R) -> Result<Vec<EntryPrediction>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars of argmax accuracy per subset, one bar per row.
fn accuracy_svg(results: &[EvalResult]) -> String {
    let labels: Vec<String> = results.iter().map(EvalResult::row_label).collect();
    let rows = first_seen(labels.iter().map(String::as_str));
    let subsets = first_seen(results.iter().map(|r| r.subset.as_str()));
    let (left, top, plot_h, bar_w, gap) = (50.0, 30.0, 240.0, 14.0, 24.0);
    let group_w = bar_w * rows.len() as f64 + gap;
    let width = left + group_w * subsets.len() as f64 + 160.0;
    let height = top + plot_h + 60.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(svg, "<text x=\"{left}\" y=\"18\">Argmax accuracy</text>");
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(svg, "<line x1=\"{left}\" x2=\"{:.1}\" y1=\"{y:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>", width - 160.0);
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>", left - 6.0, y + 4.0);
    }
    for (si, subset) in subsets.iter().enumerate() {
        let x0 = left + gap / 2.0 + group_w * si as f64;
        for (ri, row) in rows.iter().enumerate() {
            if let Some(r) = results.iter().find(|r| &r.row_label() == row && &r.subset == subset) {
                let h = plot_h * r.accuracy.clamp(0.0, 1.0);
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar_w}\" height=\"{h:.1}\" fill=\"{}\"/>",
                    x0 + bar_w * ri as f64,
                    top + plot_h - h,
                    PALETTE[ri % PALETTE.len()]
                );
            }
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x0 + bar_w * rows.len() as f64 / 2.0,
            top + plot_h + 16.0,
            escape(subset)
        );
    }
    let legend_x = width - 150.0;
    for (ri, row) in rows.iter().enumerate() {
        let y = top + 16.0 * ri as f64;
        let _ = writeln!(svg, "<rect x=\"{legend_x:.1}\" y=\"{y:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>", PALETTE[ri % PALETTE.len()]);
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>", legend_x + 14.0, y + 9.0, escape(row));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Human and model diversity per question (sorted by the human value) with
/// the gap between them shaded.
fn diversity_svg(report: &DiversityReport) -> String {
    let mut qs = report.questions.clone();
    qs.sort_by(|a, b| a.human.total_cmp(&b.human).then_with(|| a.question.cmp(&b.question)));
    let (left, top, plot_w, plot_h) = (50.0, 30.0, 480.0, 240.0);
    let n = qs.len().max(2) as f64 - 1.0;
    let x = |i: usize| left + plot_w * i as f64 / n;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let human: Vec<String> = qs.iter().enumerate().map(|(i, q)| format!("{:.1},{:.1}", x(i), y(q.human))).collect();
    let model: Vec<String> = qs.iter().enumerate().map(|(i, q)| format!("{:.1},{:.1}", x(i), y(q.model))).collect();
    let mut band = human.clone();
    band.extend(model.iter().rev().cloned());
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        left + plot_w + 120.0,
        top + plot_h + 40.0
    );
    let _ = writeln!(svg, "<text x=\"{left}\" y=\"18\">Cross-country 1-JSD per question: {}</text>", escape(&report.predictor_id));
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>", left - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(svg, "<polygon points=\"{}\" fill=\"#4c72b0\" fill-opacity=\"0.2\"/>", band.join(" "));
    let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"#333\"/>", human.join(" "));
    let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"#4c72b0\"/>", model.join(" "));
    let lx = left + plot_w + 10.0;
    let _ = writeln!(svg, "<text x=\"{lx:.1}\" y=\"{:.1}\" fill=\"#333\">human</text>", top + 10.0);
    let _ = writeln!(svg, "<text x=\"{lx:.1}\" y=\"{:.1}\" fill=\"#4c72b0\">model</text>", top + 26.0);
    svg.push_str("</svg>\n");
    svg
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Writes the report directory: predictions.jsonl and run_metadata.json
/// always, then one artifact set per requested format.
pub fn emit_report(bundle: &ReportBundle, formats: &[ReportFormat], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if bundle.results.is_empty() {
        return Err(Error::Eval("nothing to report: no results".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes)?;
        written.push(path);
        Ok(())
    };

    let mut predictions = Vec::new();
    write_predictions_jsonl(&mut predictions, &bundle.predictions)?;
    write("predictions.jsonl", &predictions)?;
    write("run_metadata.json", serde_json::to_string_pretty(&bundle.run_metadata)?.as_bytes())?;

    for format in formats {
        match format {
            ReportFormat::Markdown => write("report.md", markdown_report(bundle).as_bytes())?,
            ReportFormat::Csv => {
                let mut buf = Vec::new();
                write_results_csv(&mut buf, &bundle.results)?;
                write("results.csv", &buf)?;
            }
            ReportFormat::Svg => {
                write("accuracy.svg", accuracy_svg(&bundle.results).as_bytes())?;
                for d in &bundle.diversity {
                    write(&format!("diversity_{}.svg", sanitize(&d.predictor_id)), diversity_svg(d).as_bytes())?;
                }
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(pred: &str, subset: &str, variant: Variant, v: f64) -> EvalResult {
        EvalResult {
            predictor_id: pred.into(),
            subset: subset.into(),
            variant,
            mean_one_minus_jsd: v,
            mean_emd: 1.0 - v,
            accuracy: v / 2.0,
            entry_count: 3,
            failures: 0,
            run_metadata: BTreeMap::from([("seed".into(), "7".into())]),
        }
    }

    #[test]
    fn grid_has_avg_column() {
        let rs = vec![
            result("ZS", "C1-Q3", Variant::Normal, 0.5),
            result("ZS", "C2-Q1", Variant::Normal, 0.7),
            result("ZS", "C1-Q3", Variant::Ctrl, 0.4),
        ];
        let grid = markdown_grid(&rs, &[], Metric::OneMinusJsd);
        assert!(grid.contains("| ZS | 0.500 | 0.700 | 0.600 |"));
        assert!(grid.contains("| ZS [ctrl] | 0.400 | n/a | n/a |"));
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("pdf".parse::<ReportFormat>(), Err(Error::UnknownFormat(_))));
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
    }

    #[test]
    fn csv_round_trip() {
        let rs = vec![result("FT", "C3-Q3", Variant::Shuffled, 0.1 + 0.2), result("KNN", "valid", Variant::Normal, 1.0 / 3.0)];
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rs).unwrap();
        assert_eq!(read_results_csv(buf.as_slice()).unwrap(), rs);
    }
}
