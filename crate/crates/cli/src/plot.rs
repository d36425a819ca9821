//! SVG charts for run reports.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, Result};

const SIZE: (u32, u32) = (800, 480);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn color(i: usize) -> RGBColor {
    PALETTE[i % PALETTE.len()]
}

fn draw_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("cannot draw {}: {e}", path.display()))
}

/// Pads a value range so flat series still get a visible axis.
fn padded(lo: f64, hi: f64) -> std::ops::Range<f64> {
    if !(lo.is_finite() && hi.is_finite()) {
        return 0.0..1.0;
    }
    let span = hi - lo;
    let pad = if span > 0.0 {
        span * 0.05
    } else {
        lo.abs().max(1.0) * 0.05
    };
    (lo - pad)..(hi + pad)
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series]) -> Result<()> {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(p.0), b.max(p.0))
    });
    let (y0, y1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(p.1), b.max(p.1))
    });
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(padded(x0, x1), padded(y0.min(0.0), y1))
        .map_err(|e| draw_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(|e| draw_err(path, e))?;
    for (i, s) in series.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), c.stroke_width(2)))
            .map_err(|e| draw_err(path, e))?
            .label(s.name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], c.stroke_width(2)));
        chart
            .draw_series(s.points.iter().map(|&p| Circle::new(p, 2, c.filled())))
            .map_err(|e| draw_err(path, e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| draw_err(path, e))?;
    root.present().map_err(|e| draw_err(path, e))
}

/// Bars grouped by `groups`; `values[g][s]` is the height of series `s`
/// in group `g`.
pub fn grouped_bars(
    path: &Path,
    title: &str,
    y_desc: &str,
    groups: &[String],
    series: &[&str],
    values: &[Vec<f64>],
) -> Result<()> {
    let top = values.iter().flatten().copied().fold(0.0f64, f64::max);
    let n = groups.len();
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..n as f64, 0.0..(top * 1.1).max(1e-9))
        .map_err(|e| draw_err(path, e))?;
    let label = |x: &f64| {
        let g = x.floor() as usize;
        if (x - g as f64 - 0.5).abs() < 1e-9 && g < n {
            groups[g].clone()
        } else {
            String::new()
        }
    };
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(2 * n + 1)
        .x_label_formatter(&label)
        .y_desc(y_desc)
        .draw()
        .map_err(|e| draw_err(path, e))?;
    let width = 0.8 / series.len().max(1) as f64;
    for (si, name) in series.iter().enumerate() {
        let c = color(si);
        chart
            .draw_series(values.iter().enumerate().map(|(g, row)| {
                let x = g as f64 + 0.1 + si as f64 * width;
                Rectangle::new([(x, 0.0), (x + width * 0.9, row[si])], c.filled())
            }))
            .map_err(|e| draw_err(path, e))?
            .label(*name)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], c.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| draw_err(path, e))?;
    root.present().map_err(|e| draw_err(path, e))
}

pub fn bars(path: &Path, title: &str, y_desc: &str, labels: &[String], values: &[f64]) -> Result<()> {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    grouped_bars(path, title, y_desc, labels, &[y_desc], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_writes_svg_with_axis_description() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.svg");
        let s = Series {
            name: "loss".into(),
            points: vec![(1.0, 0.7), (2.0, 0.5), (3.0, 0.4)],
        };
        line_chart(&path, "curve", "epoch", "value", &[s]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("epoch"));
        assert!(text.contains("loss"));
    }

    #[test]
    fn single_point_and_flat_series_draw() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.svg");
        let s = Series {
            name: "flat".into(),
            points: vec![(1.0, 0.5)],
        };
        line_chart(&path, "one", "epoch", "v", &[s]).unwrap();
    }

    #[test]
    fn grouped_bars_label_each_group() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.svg");
        let groups = vec!["entity/test/gt".to_string(), "relation/test/gt".to_string()];
        grouped_bars(
            &path,
            "metrics",
            "score",
            &groups,
            &["MRR", "Hits@1"],
            &[vec![0.5, 0.4], vec![0.3, 0.2]],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("entity/test/gt") && text.contains("relation/test/gt"));
        assert!(text.matches("<rect").count() >= 5);
    }
}
