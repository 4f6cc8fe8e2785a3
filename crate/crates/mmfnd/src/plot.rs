//! Grouped bar charts for evaluation reports.
//!
//! Rendering uses an in-process font (DejaVu Sans, loaded from the
//! usual system locations). When no font file is found the charts are
//! still produced, just without captions or tick labels.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use plotters::prelude::*;
use plotters::style::register_font;

use crate::error::{Error, Result};
use crate::eval::EvaluationReport;

const FONT_CANDIDATES: [&str; 3] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
];

fn fonts_available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        for path in FONT_CANDIDATES {
            if let Ok(bytes) = std::fs::read(path) {
                let leaked: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if register_font("sans-serif", FontStyle::Normal, leaked).is_ok() {
                    return true;
                }
            }
        }
        log::warn!("no usable font found; rendering charts without text");
        false
    })
}

const BAR_COLORS: [RGBColor; 3] = [
    RGBColor(66, 133, 244),
    RGBColor(219, 68, 55),
    RGBColor(244, 180, 0),
];
const METRIC_NAMES: [&str; 3] = ["precision", "recall", "f1"];

fn chart_err(e: impl std::fmt::Display) -> Error {
    Error::Report(format!("chart rendering: {e}"))
}

fn render_class_chart(
    report: &EvaluationReport,
    class: &str,
    path: &Path,
) -> Result<()> {
    let with_text = fonts_available();
    let n = report.rows.len();
    if n == 0 {
        return Err(Error::Report("report has no rows to plot".into()));
    }
    let values: Vec<[f64; 3]> = report
        .rows
        .iter()
        .map(|r| {
            let m = if class == "fake" { &r.report.fake } else { &r.report.real };
            [m.precision, m.recall, m.f1]
        })
        .collect();

    let root = BitMapBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_err)?;

    let mut builder = ChartBuilder::on(&root);
    builder
        .margin(20)
        .x_label_area_size(if with_text { 70 } else { 10 })
        .y_label_area_size(if with_text { 50 } else { 10 });
    if with_text {
        builder.caption(
            format!("{} suite: {class} class", report.suite),
            ("sans-serif", 26),
        );
    }
    let mut chart = builder
        .build_cartesian_2d(-0.5f64..n as f64 - 0.5, 0f64..1.05f64)
        .map_err(chart_err)?;

    let labels: Vec<String> = report.rows.iter().map(|r| r.label.clone()).collect();
    let formatter = |x: &f64| {
        let i = x.round() as i64;
        if (x - i as f64).abs() < 1e-9 && (0..n as i64).contains(&i) {
            labels[i as usize].clone()
        } else {
            String::new()
        }
    };
    let mut mesh = chart.configure_mesh();
    mesh.disable_x_mesh().x_labels(n);
    if with_text {
        mesh.x_label_formatter(&formatter);
    } else {
        mesh.disable_axes();
    }
    mesh.draw().map_err(chart_err)?;

    let width = 0.22;
    for (k, color) in BAR_COLORS.iter().enumerate() {
        let series = values.iter().enumerate().map(|(i, vals)| {
            let x0 = i as f64 - 0.36 + k as f64 * (width + 0.03);
            Rectangle::new([(x0, 0.0), (x0 + width, vals[k])], color.filled())
        });
        let annotated = chart.draw_series(series).map_err(chart_err)?;
        if with_text {
            annotated
                .label(METRIC_NAMES[k])
                .legend(move |(x, y)| {
                    Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled())
                });
        }
    }
    if with_text {
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.9))
            .draw()
            .map_err(chart_err)?;
    }
    root.present().map_err(chart_err)
}

/// Render the two per-class charts for a report and return the paths
/// written: `<suite>_fake.png` and `<suite>_real.png` under `out_dir`.
pub fn render_report_charts(report: &EvaluationReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let slug: String = report
        .suite
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let mut written = Vec::new();
    for class in ["fake", "real"] {
        let path = out_dir.join(format!("{slug}_{class}.png"));
        render_class_chart(report, class, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{ClassMetrics, LabeledReport, MetricsReport};
    use crate::train::TrainConfig;

    fn sample_report(rows: usize) -> EvaluationReport {
        let mut report = EvaluationReport::new("modality", TrainConfig::default());
        for i in 0..rows {
            let v = 0.5 + 0.4 * (i as f64 / rows.max(1) as f64);
            let m = ClassMetrics { precision: v, recall: v - 0.1, f1: v - 0.05 };
            report.rows.push(LabeledReport {
                label: format!("row {i}"),
                report: MetricsReport { accuracy: v, fake: m, real: m, support: 10 },
            });
        }
        report
    }

    #[test]
    fn renders_two_png_files() {
        let dir = tempfile::tempdir().unwrap();
        let written = render_report_charts(&sample_report(3), dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        for p in &written {
            let bytes = std::fs::read(p).unwrap();
            assert_eq!(&bytes[1..4], b"PNG", "{}", p.display());
            assert!(bytes.len() > 1000);
        }
        assert!(written[0].file_name().unwrap().to_str().unwrap().contains("fake"));
        assert!(written[1].file_name().unwrap().to_str().unwrap().contains("real"));
    }

    #[test]
    fn empty_report_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_report_charts(&sample_report(0), dir.path()).is_err());
    }

    #[test]
    fn group_count_follows_rows() {
        // a 6-row suite renders without panicking and the two files differ
        let dir = tempfile::tempdir().unwrap();
        let written = render_report_charts(&sample_report(6), dir.path()).unwrap();
        assert!(std::fs::read(&written[0]).unwrap().len() > 1000);
    }
}
