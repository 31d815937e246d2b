use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lapform_geometry::{GeometryReport, TrajectoryPoint};
use lapform_model::EpochMetrics;

use crate::analysis::AnalysisArtifacts;
use crate::config::Format;
use crate::error::{HarnessError, HarnessResult};

/// Distinguishable scatter colors; classes wrap around past ten.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub fn class_color(class: usize) -> &'static str {
    PALETTE[class % PALETTE.len()]
}

fn write_file(path: &Path, contents: &str) -> HarnessResult<()> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub fn write_report_json(path: &Path, report: &GeometryReport) -> HarnessResult<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| HarnessError::Data(format!("report serialization: {e}")))?;
    text.push('\n');
    write_file(path, &text)
}

pub fn read_report_json(path: &Path) -> HarnessResult<GeometryReport> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        offset: 0,
        detail: format!("report parse: {e}"),
    })
}

fn layer_csv(name: &str, values: &[f64]) -> String {
    let mut out = format!("layer,{name}\n");
    for (layer, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{layer},{v}");
    }
    out
}

fn projection_csv(points: &[(f64, f64)], labels: &[usize]) -> String {
    let mut out = String::from("x,y,class\n");
    for ((x, y), label) in points.iter().zip(labels) {
        let _ = writeln!(out, "{x},{y},{label}");
    }
    out
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,lr,step_loss,train_loss,train_acc,test_loss,test_acc\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.epoch,
            m.lr,
            m.step_loss,
            m.train_loss,
            m.train_acc,
            opt_cell(m.test_loss),
            opt_cell(m.test_acc),
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> HarnessResult<()> {
    write_file(path, &metrics_csv(metrics))
}

pub fn write_trajectory_csv(path: &Path, points: &[TrajectoryPoint]) -> HarnessResult<()> {
    let mut out = String::from("step,row_spread,cossim\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.step, p.row_spread, p.cossim);
    }
    write_file(path, &out)
}

/// A self-contained square scatter plot. Optionally draws a triangle through
/// three marker points (the simplex frame).
fn svg_scatter(points: &[(f64, f64)], labels: &[usize], triangle: Option<&[[f64; 2]; 3]>) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 24.0;

    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut scan = |x: f64, y: f64| {
        lo.0 = lo.0.min(x);
        lo.1 = lo.1.min(y);
        hi.0 = hi.0.max(x);
        hi.1 = hi.1.max(y);
    };
    for &(x, y) in points {
        scan(x, y);
    }
    if let Some(tri) = triangle {
        for v in tri {
            scan(v[0], v[1]);
        }
    }
    if !lo.0.is_finite() {
        lo = (-1.0, -1.0);
        hi = (1.0, 1.0);
    }
    let span_x = (hi.0 - lo.0).max(1e-12);
    let span_y = (hi.1 - lo.1).max(1e-12);
    let span = span_x.max(span_y) * 1.05;
    let cx = (lo.0 + hi.0) / 2.0;
    let cy = (lo.1 + hi.1) / 2.0;
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |x: f64| (x - cx) * scale + SIZE / 2.0;
    let py = |y: f64| SIZE / 2.0 - (y - cy) * scale;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" \
         viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>\n\
         <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#cccccc\"/>\n",
        SIZE - 2.0 * MARGIN,
        SIZE - 2.0 * MARGIN,
    );
    if let Some(tri) = triangle {
        let _ = writeln!(
            svg,
            "<polygon points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\" fill=\"none\" \
             stroke=\"#888888\" stroke-dasharray=\"4 3\"/>",
            px(tri[0][0]),
            py(tri[0][1]),
            px(tri[1][0]),
            py(tri[1][1]),
            px(tri[2][0]),
            py(tri[2][1]),
        );
    }
    for (&(x, y), &label) in points.iter().zip(labels) {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.7\"/>",
            px(x),
            py(y),
            class_color(label),
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn legend_text(artifacts: &AnalysisArtifacts) -> String {
    let mut out = String::from("scatter legend: one point per token, colored by sequence class\n\n");
    let mut seen: Vec<usize> = artifacts.pca_classes.clone();
    if let Some(simplex) = &artifacts.simplex {
        for c in simplex.classes {
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
    }
    seen.sort_unstable();
    for class in &seen {
        let _ = writeln!(out, "class {class}: {}", class_color(*class));
    }
    let _ = writeln!(
        out,
        "\nprincipal scatter classes: {}",
        join(&artifacts.pca_classes)
    );
    if let Some(simplex) = &artifacts.simplex {
        let _ = writeln!(
            out,
            "simplex scatter classes: {}",
            join(&simplex.classes.to_vec())
        );
        let _ = writeln!(
            out,
            "simplex frame vertices: ({}, {}) ({}, {}) ({}, {})",
            simplex.vertices[0][0],
            simplex.vertices[0][1],
            simplex.vertices[1][0],
            simplex.vertices[1][1],
            simplex.vertices[2][0],
            simplex.vertices[2][1],
        );
        if simplex.resampled {
            out.push_str("simplex classes were resampled once (first triple degenerate)\n");
        }
    } else {
        out.push_str("simplex scatter: skipped (needs at least 3 classes and 3 dimensions)\n");
    }
    out
}

fn join(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn pca_points(artifacts: &AnalysisArtifacts) -> Vec<(f64, f64)> {
    (0..artifacts.pca.coords.rows())
        .map(|r| {
            let row = artifacts.pca.coords.row(r);
            (row[0], row[1])
        })
        .collect()
}

/// Writes the geometry outputs for one finished run in the requested
/// formats and returns the files created.
pub fn emit_run(
    dir: &Path,
    formats: &[Format],
    artifacts: &AnalysisArtifacts,
) -> HarnessResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    let emit = |name: &str, contents: &str, written: &mut Vec<PathBuf>| -> HarnessResult<()> {
        let path = dir.join(name);
        write_file(&path, contents)?;
        written.push(path);
        Ok(())
    };

    if formats.contains(&Format::Json) {
        let path = dir.join("report.json");
        write_report_json(&path, &artifacts.report)?;
        written.push(path);
    }
    if formats.contains(&Format::Csv) {
        emit(
            "cossim.csv",
            &layer_csv("cossim", &artifacts.report.cossim),
            &mut written,
        )?;
        emit(
            "snr.csv",
            &layer_csv("snr", &artifacts.report.snr),
            &mut written,
        )?;
        emit(
            "pca.csv",
            &projection_csv(&pca_points(artifacts), &artifacts.pca_labels),
            &mut written,
        )?;
        if let Some(simplex) = &artifacts.simplex {
            let points: Vec<(f64, f64)> = simplex.points.iter().map(|p| (p[0], p[1])).collect();
            emit(
                "simplex.csv",
                &projection_csv(&points, &simplex.point_labels),
                &mut written,
            )?;
        }
    }
    if formats.contains(&Format::Svg) {
        emit(
            "pca.svg",
            &svg_scatter(&pca_points(artifacts), &artifacts.pca_labels, None),
            &mut written,
        )?;
        if let Some(simplex) = &artifacts.simplex {
            let points: Vec<(f64, f64)> = simplex.points.iter().map(|p| (p[0], p[1])).collect();
            emit(
                "simplex.svg",
                &svg_scatter(&points, &simplex.point_labels, Some(&simplex.vertices)),
                &mut written,
            )?;
        }
    }
    if formats.contains(&Format::Csv) || formats.contains(&Format::Svg) {
        emit("legend.txt", &legend_text(artifacts), &mut written)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::analyze_run;
    use crate::config::{AnalysisSpec, MeasureSplit};
    use crate::dataset::{gen_synthetic, SyntheticSpec};
    use lapform_model::{AssignmentSpec, InputBatch, InputSpec, ModelConfig, ParamSet};

    fn artifacts() -> AnalysisArtifacts {
        let spec = SyntheticSpec {
            classes: 4,
            per_class: 3,
            test_per_class: 2,
            seq_len: 3,
            dim: 8,
            ..SyntheticSpec::default()
        };
        let data = gen_synthetic(&spec, MeasureSplit::Train).unwrap();
        let cfg = ModelConfig {
            depth: 2,
            heads: 2,
            dim: 8,
            head_dim: None,
            mlp_ratio: 2,
            num_classes: 4,
            input: InputSpec::SyntheticTokens { seq_len: 3 },
            drop_path_p: 0.0,
            qk_norm: false,
            head_assignment: AssignmentSpec::Uniform { laplacian_heads: 1 },
        };
        let params = ParamSet::init(&cfg, 5).unwrap();
        analyze_run(
            &cfg,
            &params,
            &InputBatch::Tokens(data.tokens),
            &data.labels,
            4,
            &AnalysisSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn json_only_emits_exactly_one_file() {
        let dir = tempfile::tempdir().unwrap();
        let art = artifacts();
        let written = emit_run(dir.path(), &[Format::Json], &art).unwrap();
        assert_eq!(written.len(), 1);
        assert!(written[0].ends_with("report.json"));
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn report_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let art = artifacts();
        let path = dir.path().join("report.json");
        write_report_json(&path, &art.report).unwrap();
        let back = read_report_json(&path).unwrap();
        assert_eq!(back.cossim, art.report.cossim);
        assert_eq!(back.snr, art.report.snr);
        assert_eq!(back.anova.total, art.report.anova.total);
        assert_eq!(back.nc.self_duality, art.report.nc.self_duality);
        assert_eq!(back.ntc.within_seq_var, art.report.ntc.within_seq_var);
    }

    #[test]
    fn csvs_parse_back_to_the_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        let art = artifacts();
        emit_run(dir.path(), &[Format::Csv], &art).unwrap();

        let cossim = fs::read_to_string(dir.path().join("cossim.csv")).unwrap();
        let mut lines = cossim.lines();
        assert_eq!(lines.next(), Some("layer,cossim"));
        let parsed: Vec<f64> = lines
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(parsed, art.report.cossim);

        let pca = fs::read_to_string(dir.path().join("pca.csv")).unwrap();
        let mut rows = pca.lines();
        assert_eq!(rows.next(), Some("x,y,class"));
        let rows: Vec<&str> = rows.collect();
        assert_eq!(rows.len(), art.pca_labels.len());
        for (i, row) in rows.iter().enumerate() {
            let mut cells = row.split(',');
            let x: f64 = cells.next().unwrap().parse().unwrap();
            let y: f64 = cells.next().unwrap().parse().unwrap();
            let class: usize = cells.next().unwrap().parse().unwrap();
            assert_eq!(x, art.pca.coords.row(i)[0]);
            assert_eq!(y, art.pca.coords.row(i)[1]);
            assert_eq!(class, art.pca_labels[i]);
        }
    }

    #[test]
    fn svg_point_count_matches_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let art = artifacts();
        emit_run(dir.path(), &[Format::Svg], &art).unwrap();
        let svg = fs::read_to_string(dir.path().join("pca.svg")).unwrap();
        let circles = svg.matches("<circle").count();
        assert_eq!(circles, art.pca_labels.len());
        // Self-contained: the only URL is the xmlns declaration.
        assert_eq!(svg.matches("http").count(), 1);
    }

    #[test]
    fn legend_documents_every_plotted_class() {
        let dir = tempfile::tempdir().unwrap();
        let art = artifacts();
        emit_run(dir.path(), &[Format::Csv, Format::Svg], &art).unwrap();
        let legend = fs::read_to_string(dir.path().join("legend.txt")).unwrap();
        for class in &art.pca_classes {
            assert!(legend.contains(&format!("class {class}: {}", class_color(*class))));
        }
        assert!(legend.contains("simplex frame vertices"));
    }

    #[test]
    fn metrics_csv_leaves_missing_eval_cells_empty() {
        let metrics = vec![
            EpochMetrics {
                epoch: 0,
                step_loss: 1.5,
                train_loss: 1.25,
                train_acc: 0.5,
                test_loss: None,
                test_acc: None,
                lr: 0.001,
            },
            EpochMetrics {
                epoch: 1,
                step_loss: 1.0,
                train_loss: 0.75,
                train_acc: 0.625,
                test_loss: Some(0.875),
                test_acc: Some(0.5625),
                lr: 0.0005,
            },
        ];
        let csv = metrics_csv(&metrics);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "epoch,lr,step_loss,train_loss,train_acc,test_loss,test_acc"
        );
        assert_eq!(lines[1], "0,0.001,1.5,1.25,0.5,,");
        assert_eq!(lines[2], "1,0.0005,1,0.75,0.625,0.875,0.5625");
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        let points = vec![
            TrajectoryPoint {
                step: 0,
                row_spread: 2.0,
                cossim: 0.25,
            },
            TrajectoryPoint {
                step: 1,
                row_spread: 1.0,
                cossim: 0.5,
            },
        ];
        write_trajectory_csv(&path, &points).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,row_spread,cossim\n0,2,0.25\n1,1,0.5\n");
    }

    #[test]
    fn svg_triangle_drawn_for_simplex() {
        let dir = tempfile::tempdir().unwrap();
        let art = artifacts();
        assert!(art.simplex.is_some());
        emit_run(dir.path(), &[Format::Svg], &art).unwrap();
        let svg = fs::read_to_string(dir.path().join("simplex.svg")).unwrap();
        assert!(svg.contains("<polygon"));
    }
}
