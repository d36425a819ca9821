//! `report`: SVG plots and a markdown summary from run outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tkg_core::eval::CSV_HEADER;

use crate::commands::ReportFile;
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::plot::{bars, grouped_bars, line_chart, Series};
use crate::ReportArgs;

#[derive(Debug, Default)]
struct Inputs {
    curves: Vec<(PathBuf, Vec<CurveRow>, bool)>,
    metrics: Vec<(PathBuf, MetricRow)>,
    reports: Vec<(PathBuf, ReportFile)>,
    manifests: Vec<(PathBuf, RunManifest)>,
}

#[derive(Debug, Deserialize)]
struct CurveRow {
    epoch: f64,
    total_loss: f64,
    entity_loss: f64,
    relation_loss: f64,
    static_loss: Option<f64>,
    valid_mrr: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct MetricRow {
    task: String,
    split: String,
    mode: String,
    filtered: bool,
    queries: usize,
    mrr: f64,
    hits1: f64,
    hits3: f64,
    hits10: f64,
}

impl MetricRow {
    fn label(&self) -> String {
        let f = if self.filtered { "/filtered" } else { "" };
        format!("{}/{}/{}{f}", self.task, self.split, self.mode)
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .flatten()
            .map(|e| e.path())
            .collect();
        entries.sort();
        for p in entries {
            collect_files(&p, out)?;
        }
    } else if path.is_file() {
        out.push(path.to_path_buf());
    } else {
        return Err(CliError::Usage(format!(
            "input {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn classify(path: &Path, inputs: &mut Inputs) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    match ext {
        "csv" => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let header = text.lines().next().unwrap_or("").trim_end_matches('\r');
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            if header == CSV_HEADER {
                for row in rdr.deserialize() {
                    inputs.metrics.push((path.to_path_buf(), row?));
                }
            } else if header.starts_with("epoch,") {
                let rows = rdr
                    .deserialize()
                    .collect::<std::result::Result<Vec<CurveRow>, _>>()?;
                inputs
                    .curves
                    .push((path.to_path_buf(), rows, header.contains("static_loss")));
            } else {
                log::warn!("skipping {}: unrecognized CSV header", path.display());
            }
        }
        "json" if name == MANIFEST_FILE => inputs
            .manifests
            .push((path.to_path_buf(), RunManifest::load(path)?)),
        "json" if name.starts_with("report_") => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let r: ReportFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            inputs.reports.push((path.to_path_buf(), r));
        }
        _ => {}
    }
    Ok(())
}

/// `name.svg`, or `name_<i>.svg` when there are several.
fn numbered(name: &str, i: usize, total: usize) -> String {
    if total == 1 {
        format!("{name}.svg")
    } else {
        format!("{name}_{}.svg", i + 1)
    }
}

fn curve_series(rows: &[CurveRow], with_static: bool) -> Vec<Series> {
    let pick = |name: &str, f: &dyn Fn(&CurveRow) -> Option<f64>| Series {
        name: name.into(),
        points: rows.iter().filter_map(|r| f(r).map(|v| (r.epoch, v))).collect(),
    };
    let mut s = vec![
        pick("total loss", &|r| Some(r.total_loss)),
        pick("entity loss", &|r| Some(r.entity_loss)),
        pick("relation loss", &|r| Some(r.relation_loss)),
    ];
    if with_static {
        s.push(pick("static loss", &|r| r.static_loss));
    }
    s.push(pick("valid MRR", &|r| r.valid_mrr));
    s.retain(|x| !x.points.is_empty());
    s
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut files = Vec::new();
    for p in &args.inputs {
        collect_files(p, &mut files)?;
    }
    let out_canon = args.out.canonicalize().ok();
    let mut inputs = Inputs::default();
    for f in &files {
        if out_canon.is_some() && f.parent().and_then(|p| p.canonicalize().ok()) == out_canon {
            continue;
        }
        classify(f, &mut inputs)?;
    }
    if inputs.curves.is_empty() && inputs.metrics.is_empty() {
        return Err(CliError::Usage(
            "no training-curve or metrics CSV among the inputs".into(),
        ));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut written = Vec::new();
    let mut md = String::from("# Run report\n");

    let n = inputs.curves.len();
    if n > 0 {
        md.push_str("\n## Training curves\n\n| source | epochs | final total loss | best valid MRR | plot |\n|---|---|---|---|---|\n");
    }
    for (i, (path, rows, with_static)) in inputs.curves.iter().enumerate() {
        let file = numbered("training_curve", i, n);
        let series = curve_series(rows, *with_static);
        if !series.is_empty() {
            line_chart(&args.out.join(&file), "Training curve", "epoch", "value", &series)?;
            written.push(file.clone());
        }
        let best = rows
            .iter()
            .filter_map(|r| r.valid_mrr)
            .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} |",
            path.display(),
            rows.len(),
            rows.last()
                .map(|r| format!("{:.4}", r.total_loss))
                .unwrap_or_else(|| "-".into()),
            best.map(|b| format!("{b:.4}")).unwrap_or_else(|| "-".into()),
            if series.is_empty() {
                "-".into()
            } else {
                format!("[{file}]({file})")
            }
        );
    }

    if !inputs.metrics.is_empty() {
        let rows: Vec<&MetricRow> = inputs.metrics.iter().map(|(_, r)| r).collect();
        let labels: Vec<String> = rows.iter().map(|r| r.label()).collect();
        let values: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![r.mrr, r.hits1, r.hits3, r.hits10])
            .collect();
        grouped_bars(
            &args.out.join("metrics.svg"),
            "Ranking metrics",
            "score",
            &labels,
            &["MRR", "Hits@1", "Hits@3", "Hits@10"],
            &values,
        )?;
        written.push("metrics.svg".into());
        md.push_str("\n## Metrics\n\n| source | task | split | mode | queries | MRR | H@1 | H@3 | H@10 |\n|---|---|---|---|---|---|---|---|---|\n");
        for (path, r) in &inputs.metrics {
            let mode = if r.filtered {
                format!("{} (filtered)", r.mode)
            } else {
                r.mode.clone()
            };
            let _ = writeln!(
                md,
                "| {} | {} | {} | {mode} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                path.display(),
                r.task,
                r.split,
                r.queries,
                r.mrr,
                r.hits1,
                r.hits3,
                r.hits10
            );
        }
        md.push_str("\n![metrics](metrics.svg)\n");
    }

    if !inputs.reports.is_empty() {
        let series: Vec<Series> = inputs
            .reports
            .iter()
            .map(|(_, f)| Series {
                name: format!("{}/{}/{}", f.report.task, f.report.split, f.report.mode),
                points: f
                    .report
                    .per_timestamp
                    .iter()
                    .map(|t| (t.index as f64, t.metrics.mrr))
                    .collect(),
            })
            .filter(|s| !s.points.is_empty())
            .collect();
        if !series.is_empty() {
            line_chart(
                &args.out.join("per_timestamp_mrr.svg"),
                "MRR per timestamp",
                "snapshot index",
                "MRR",
                &series,
            )?;
            written.push("per_timestamp_mrr.svg".into());
            md.push_str("\n## Per-timestamp MRR\n\n![per-timestamp MRR](per_timestamp_mrr.svg)\n");
        }
    }

    let timed: Vec<&(PathBuf, RunManifest)> = inputs
        .manifests
        .iter()
        .filter(|(_, m)| !m.timings.is_empty())
        .collect();
    if !timed.is_empty() {
        md.push_str("\n## Phase timings (seconds)\n\n| manifest | run | command | phases | plot |\n|---|---|---|---|---|\n");
    }
    for (i, (path, m)) in timed.iter().enumerate() {
        let file = numbered("timings", i, timed.len());
        let labels: Vec<String> = m.timings.iter().map(|t| t.phase.clone()).collect();
        let secs: Vec<f64> = m.timings.iter().map(|t| t.seconds).collect();
        bars(
            &args.out.join(&file),
            &format!("{} phase timings", m.command),
            "seconds",
            &labels,
            &secs,
        )?;
        written.push(file.clone());
        let phases: Vec<String> = m
            .timings
            .iter()
            .map(|t| format!("{} {:.3}", t.phase, t.seconds))
            .collect();
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | [{file}]({file}) |",
            path.display(),
            m.run_id,
            m.command,
            phases.join(", ")
        );
    }

    let summary = args.out.join("summary.md");
    std::fs::write(&summary, md).map_err(|e| CliError::io(&summary, e))?;
    written.push("summary.md".into());
    for w in &written {
        println!("{}", args.out.join(w).display());
    }
    Ok(())
}
