//! Self-contained SVG line charts for run reports (no external plotting
//! dependency; CSVs carry the same data for external tools).

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::harness::RunReport;
use crate::reference::ReferencePath;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

fn nice_ticks(min: f64, max: f64, target: usize) -> Vec<f64> {
    let range = (max - min).abs().max(1e-12);
    let raw = range / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let first = (min / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = first;
    while t <= max + 0.5 * step {
        ticks.push(t);
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.01 {
        format!("{v:.1e}")
    } else if a < 1.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.6}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// Renders series as polylines with axes, ticks and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (800.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 55.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymax = ymin + 1.0;
        ymin -= 1.0;
    }
    let ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| mt + ph - (y - ymin) / (ymax - ymin) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    ));

    for t in nice_ticks(xmin, xmax, 6) {
        let x = sx(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{mt}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            mt + ph
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            mt + ph + 16.0,
            fmt_tick(t)
        ));
    }
    for t in nice_ticks(ymin, ymax, 6) {
        let y = sy(t);
        svg.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n",
            ml + pw
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            ml - 6.0,
            y + 4.0,
            fmt_tick(t)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" \
         stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">{x_label}</text>\n",
        ml + pw / 2.0,
        h - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{y_label}</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for &(x, y) in &s.points {
            points.push_str(&format!("{:.2},{:.2} ", sx(x), sy(y)));
        }
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
             points=\"{}\"/>\n",
            points.trim_end()
        ));
        let ly = mt + 16.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            ml + pw - 150.0,
            ml + pw - 120.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            ml + pw - 114.0,
            ly + 4.0,
            s.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn reference_series(path: &ReferencePath) -> Series {
    Series::new(
        "reference",
        path.points().iter().map(|p| (p.x, p.y)).collect(),
    )
}

/// Vehicle trajectory against the reference centerline.
pub fn trajectory_chart(path: &ReferencePath, reports: &[&RunReport]) -> String {
    let mut series = vec![reference_series(path)];
    for r in reports {
        series.push(Series::new(
            r.controller.clone(),
            r.records.iter().map(|rec| (rec.x, rec.y)).collect(),
        ));
    }
    line_chart("trajectory", "x [m]", "y [m]", &series)
}

/// Signed lateral error against distance along the path.
pub fn error_chart(reports: &[&RunReport]) -> String {
    let series: Vec<Series> = reports
        .iter()
        .map(|r| {
            Series::new(
                r.controller.clone(),
                r.records.iter().map(|rec| (rec.x_ref, rec.lat_err)).collect(),
            )
        })
        .collect();
    line_chart("tracking error", "station [m]", "lateral error [m]", &series)
}

/// Per-step solver wall-clock time.
pub fn solve_time_chart(reports: &[&RunReport]) -> String {
    let series: Vec<Series> = reports
        .iter()
        .map(|r| {
            Series::new(
                r.controller.clone(),
                r.records
                    .iter()
                    .map(|rec| (rec.step as f64, rec.solve_ms))
                    .collect(),
            )
        })
        .collect();
    line_chart("computation time", "step", "solve time [ms]", &series)
}

/// Writes the per-controller charts (`<scenario>_<controller>_<plot>.svg`)
/// and, with more than one report, comparison overlays.
pub fn write_report_charts(
    out_dir: &Path,
    scenario: &str,
    path: &ReferencePath,
    reports: &[RunReport],
) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let mut write = |name: String, content: String| -> Result<()> {
        let file = out_dir.join(name);
        fs::write(&file, content)?;
        written.push(file);
        Ok(())
    };
    for r in reports {
        write(
            format!("{scenario}_{}_trajectory.svg", r.controller),
            trajectory_chart(path, &[r]),
        )?;
        write(
            format!("{scenario}_{}_error.svg", r.controller),
            error_chart(&[r]),
        )?;
        write(
            format!("{scenario}_{}_solve_time.svg", r.controller),
            solve_time_chart(&[r]),
        )?;
    }
    if reports.len() > 1 {
        let refs: Vec<&RunReport> = reports.iter().collect();
        write(
            format!("{scenario}_comparison_trajectory.svg"),
            trajectory_chart(path, &refs),
        )?;
        write(
            format!("{scenario}_comparison_error.svg"),
            error_chart(&refs),
        )?;
        write(
            format!("{scenario}_comparison_solve_time.svg"),
            solve_time_chart(&refs),
        )?;
    }
    Ok(written)
}
