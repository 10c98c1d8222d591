use std::fmt::Write;

use super::analyze::AnalysisSummary;
use super::plot::{escape, heatmap, histogram_chart, line_chart, Series};
use super::predict::{read_prediction, PredictionSummary};
use super::{io_err, read_json, write_if_changed, PipelineError, RunConfig, StageSummary};
use crate::stability::InstabilityReport;
use crate::stats::LabeledMatrix;

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "n/a".into())
}

fn table(out: &mut String, caption: &str, header: &[&str], rows: Vec<Vec<String>>) {
    let _ = writeln!(out, "<table>\n<caption>{}</caption>", escape(caption));
    out.push_str("<tr>");
    for h in header {
        let _ = write!(out, "<th>{}</th>", escape(h));
    }
    out.push_str("</tr>\n");
    for row in rows {
        out.push_str("<tr>");
        for c in row {
            let _ = write!(out, "<td>{}</td>", escape(&c));
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>\n");
}

fn instability(out: &mut String, caption: &str, r: &InstabilityReport) {
    let rows = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.group.clone(),
                row.kind.clone(),
                row.samples.to_string(),
                pct(row.instability),
                pct(row.avg_instability),
            ]
        })
        .collect();
    table(out, caption, &[r.grouping.as_str(), "perturbation", "samples", "instability", "avg. instability"], rows);
}

fn matrix(out: &mut String, caption: &str, m: &LabeledMatrix) {
    let mut header = vec![""];
    header.extend(m.labels.iter().map(String::as_str));
    let rows = m
        .labels
        .iter()
        .zip(&m.values)
        .map(|(l, vals)| std::iter::once(l.clone()).chain(vals.iter().map(|v| opt(*v, 3))).collect())
        .collect();
    table(out, caption, &header, rows);
}

fn hist_series(h: &std::collections::BTreeMap<String, Vec<(f64, usize)>>) -> Vec<Series> {
    h.iter()
        .map(|(name, bins)| Series {
            name: name.clone(),
            points: bins.iter().map(|&(x, c)| (x, c as f64)).collect(),
        })
        .collect()
}

/// Render the analysis and prediction summaries into `report/`: an HTML
/// page, SVG figures and copies of the CSV tables.
pub fn cmd_report(cfg: &RunConfig) -> Result<StageSummary, PipelineError> {
    let analyze_dir = cfg.stage_dir("analyze");
    let a: AnalysisSummary = read_json(&analyze_dir.join("summary.json"), "analyze")?;
    let prediction: Option<PredictionSummary> = match read_prediction(cfg) {
        Ok(p) => Some(p),
        Err(PipelineError::MissingInput { .. }) if cfg.proxies.is_empty() => None,
        Err(e) => return Err(e),
    };
    let comment = a.meta.inline();
    let dir = cfg.stage_dir("report");
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut figures: Vec<(&str, &str)> = Vec::new();

    files.push((
        "fig2_entropy_visual.svg".into(),
        histogram_chart("Visual answer entropy", "entropy (bits)", a.histogram_width, &hist_series(&a.entropy_visual), &comment).into_bytes(),
    ));
    figures.push(("fig2_entropy_visual.svg", "Distribution of visual answer entropy per model"));
    files.push((
        "fig3_entropy_text.svg".into(),
        histogram_chart("Phrasing answer entropy", "entropy (bits)", a.histogram_width, &hist_series(&a.entropy_text), &comment).into_bytes(),
    ));
    figures.push(("fig3_entropy_text.svg", "Distribution of phrasing answer entropy per model"));

    if let Some(d) = &a.divergence {
        let mut series = Vec::new();
        for (name, curve) in [("visual", &d.visual), ("text", &d.text)] {
            if let Some(c) = curve {
                series.push(Series {
                    name: format!("{name} stable"),
                    points: c.layers.iter().map(|l| (l.layer as f64, l.mean_stable)).collect(),
                });
                series.push(Series {
                    name: format!("{name} flipped"),
                    points: c.layers.iter().map(|l| (l.layer as f64, l.mean_flipped)).collect(),
                });
            }
        }
        if !series.is_empty() {
            files.push((
                "fig5_divergence.svg".into(),
                line_chart("Hidden-state divergence by layer", "layer", "normalized L2 distance", &series, &comment).into_bytes(),
            ));
            figures.push(("fig5_divergence.svg", "Distance from the original input's hidden states, answer-preserving vs answer-changing variants"));
        }
    }
    if !a.rotation_sweep.is_empty() {
        let mut groups: Vec<String> = a.rotation_sweep.iter().map(|p| p.group.clone()).collect();
        groups.dedup();
        let series: Vec<Series> = groups
            .iter()
            .map(|g| Series {
                name: g.clone(),
                points: a
                    .rotation_sweep
                    .iter()
                    .filter(|p| &p.group == g)
                    .map(|p| (f64::from(p.angle), p.fraction_changed))
                    .collect(),
            })
            .collect();
        files.push((
            "fig6_rotation_sweep.svg".into(),
            line_chart("Answer change by rotation angle", "angle (degrees)", "fraction changed", &series, &comment).into_bytes(),
        ));
        figures.push(("fig6_rotation_sweep.svg", "Rotation sweep for rotation-variant and rotation-invariant questions"));
    }
    if let Some(p) = &prediction {
        let series: Vec<Series> = std::iter::once(&p.baseline.classifier)
            .chain(p.baseline.confidence.iter())
            .map(|s| Series {
                name: s.source.clone(),
                points: s.curve.points.iter().map(|pt| (pt.recall, pt.precision)).collect(),
            })
            .collect();
        files.push((
            "fig7_pr_curves.svg".into(),
            line_chart("Correctness prediction", "recall", "precision", &series, &comment).into_bytes(),
        ));
        figures.push(("fig7_pr_curves.svg", "Precision and recall of the stability classifier against target confidence"));
    }
    if let Some(m) = &a.matthews {
        files.push((
            "table5_matthews.svg".into(),
            heatmap("Visual stability agreement (MCC)", &m.labels, &m.values, &comment).into_bytes(),
        ));
        figures.push(("table5_matthews.svg", "Matthews correlation of visual stability flags between models"));
    }

    let mut html = String::new();
    let _ = writeln!(
        html,
        "<!DOCTYPE html>\n<!-- {} -->\n<html><head><meta charset=\"utf-8\"><title>Answer stability report</title>\n<style>body{{font-family:sans-serif;max-width:960px;margin:auto}}table{{border-collapse:collapse;margin:1em 0}}td,th{{border:1px solid #ccc;padding:2px 8px;text-align:right}}caption{{font-weight:bold;text-align:left}}</style></head><body>",
        escape(&comment)
    );
    let _ = writeln!(html, "<h1>Answer stability report</h1>\n<p>Target model: <b>{}</b>. Models: {}.</p>", escape(&a.target), escape(&a.endpoints.join(", ")));
    html.push_str("<h2>Instability</h2>\n");
    instability(&mut html, "Visual perturbations", &a.visual_instability);
    instability(&mut html, "Textual perturbations", &a.text_instability);
    instability(&mut html, "Target model by dataset", &a.dataset_instability);
    instability(&mut html, "Target model by category", &a.category_instability);
    table(
        &mut html,
        "Overlay text bias on the target model",
        &["gold", "overlay", "samples", "original accuracy", "overlay accuracy"],
        a.overlay_bias
            .iter()
            .map(|r| vec![r.gold.clone(), r.phrase.clone(), r.samples.to_string(), pct(r.original_accuracy), pct(r.overlay_accuracy)])
            .collect(),
    );
    html.push_str("<h2>Stability and correctness</h2>\n");
    table(
        &mut html,
        "Accuracy conditioned on stability",
        &["model", "condition", "accuracy", "share of samples"],
        a.conditioned
            .iter()
            .flat_map(|(e, rows)| {
                rows.iter()
                    .map(move |r| vec![e.clone(), r.condition.clone(), r.accuracy.map_or("n/a".into(), pct), pct(r.prevalence)])
            })
            .collect(),
    );
    if let Some(m) = &a.matthews {
        matrix(&mut html, "Matthews correlation of visual stability", m);
    }
    if let Some(m) = &a.pearson {
        matrix(&mut html, "Pearson correlation on the target model", m);
    }
    if let Some(mi) = &a.mutual_information {
        table(
            &mut html,
            "Mutual information between visual and textual entropy",
            &["I(X;Y)", "I(X;Y|confidence)", "ratio", "bins"],
            vec![vec![format!("{:.4}", mi.i_raw), format!("{:.4}", mi.i_conditional), opt(mi.ratio, 3), mi.bins.to_string()]],
        );
    }
    if let Some(p) = &prediction {
        html.push_str("<h2>Correctness prediction</h2>\n");
        let _ = writeln!(
            html,
            "<p>Trained on {} samples from proxies {}; evaluated on {} held-out samples ({} correct).</p>",
            p.train_samples,
            escape(&p.proxies.join(", ")),
            p.test_samples,
            p.test_positives
        );
        let rows = std::iter::once(&p.baseline.classifier)
            .chain(p.baseline.confidence.iter())
            .map(|s| {
                let mut row = vec![s.source.clone(), format!("{:.3}", s.average_precision), opt(s.roc_auc, 3)];
                row.extend(s.recall_at.iter().map(|(_, r)| opt(*r, 3)));
                row
            })
            .collect();
        table(&mut html, "Average precision and recall at precision", &["source", "AP", "ROC AUC", "R@0.80", "R@0.85", "R@0.90", "R@0.92"], rows);
        for n in &p.baseline.notes {
            let _ = writeln!(html, "<p class=\"note\">{}</p>", escape(n));
        }
    }
    html.push_str("<h2>Figures</h2>\n");
    for (file, caption) in &figures {
        let _ = writeln!(html, "<figure><img src=\"{file}\" alt=\"{0}\"><figcaption>{0}</figcaption></figure>", escape(caption));
    }
    if !a.notes.is_empty() {
        html.push_str("<h2>Notes</h2>\n<ul>\n");
        for n in &a.notes {
            let _ = writeln!(html, "<li>{}</li>", escape(n));
        }
        html.push_str("</ul>\n");
    }
    html.push_str("<h2>Data</h2>\n<ul>\n");

    let mut data: Vec<(String, std::path::PathBuf)> = Vec::new();
    for stage in ["analyze", "predict"] {
        let src = cfg.stage_dir(stage);
        let Ok(entries) = std::fs::read_dir(&src) else { continue };
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        for n in names {
            data.push((format!("data/{n}"), src.join(&n)));
        }
    }
    for (rel, src) in &data {
        let bytes = std::fs::read(src).map_err(io_err(src))?;
        let _ = writeln!(html, "<li><a href=\"{rel}\">{}</a></li>", escape(rel));
        files.push((rel.clone(), bytes));
    }
    html.push_str("</ul>\n</body></html>\n");
    files.push(("index.html".into(), html.into_bytes()));

    let mut written = 0;
    for (name, bytes) in &files {
        written += usize::from(write_if_changed(&dir.join(name), bytes)?);
    }
    Ok(StageSummary {
        stage: "report".into(),
        files_written: written,
        details: serde_json::json!({
            "index": dir.join("index.html"),
            "figures": figures.iter().map(|f| f.0).collect::<Vec<_>>(),
        }),
    })
}
