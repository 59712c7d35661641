//! CSV, JSON and SVG emission.
//!
//! Every file is written to a sibling temp file and renamed into place.
//! Floats are printed with 17 significant digits so CSV round-trips are exact.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::DiagnosticsRecord;
use crate::integrator::Trajectory;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `t,xi_1,…,xi_k`, one row per sample.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t");
    for i in 1..=traj.truncation {
        let _ = write!(out, ",xi_{i}");
    }
    out.push('\n');
    for s in &traj.samples {
        out.push_str(&fmt_f64(s.time()));
        for v in s.values() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// `t,M0,M1,M<m>…,tail_fraction,rhs_sup,outflow,G:<name>…`.
pub fn diagnostics_csv(records: &[DiagnosticsRecord], outflow: &[f64]) -> String {
    let mut out = String::from("t,M0,M1");
    if let Some(first) = records.first() {
        for (m, _) in &first.moments {
            let _ = write!(out, ",M{m}");
        }
        out.push_str(",tail_fraction,rhs_sup,outflow");
        for (name, _) in &first.g_moments {
            let _ = write!(out, ",G:{name}");
        }
    } else {
        out.push_str(",tail_fraction,rhs_sup,outflow");
    }
    out.push('\n');
    for (n, r) in records.iter().enumerate() {
        let mut row = vec![fmt_f64(r.time), fmt_f64(r.moment_0), fmt_f64(r.moment_1)];
        row.extend(r.moments.iter().map(|(_, v)| fmt_f64(*v)));
        row.push(fmt_f64(r.tail_mass_fraction));
        row.push(fmt_f64(r.rhs_sup));
        row.push(fmt_f64(outflow.get(n).copied().unwrap_or(f64::NAN)));
        row.extend(r.g_moments.iter().map(|(_, v)| fmt_f64(*v)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a trajectory CSV back into `(times, rows)`.
pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<f64>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines();
    lines.next().ok_or("empty file")?;
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let vals: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| format!("line {}: {e}", n + 2))?;
        let (t, rest) = vals.split_first().ok_or_else(|| format!("line {}: empty row", n + 2))?;
        times.push(*t);
        rows.push(rest.to_vec());
    }
    Ok((times, rows))
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    Linear,
    Log,
}

/// Minimal line plot: axes, min/max tick labels and one polyline per series.
/// Non-positive values are dropped on log axes.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], x_scale: AxisScale, y_scale: AxisScale) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

    let tx = |v: f64, s: AxisScale| if s == AxisScale::Log { v.log10() } else { v };
    let keep = |v: f64, s: AxisScale| v.is_finite() && (s == AxisScale::Linear || v > 0.0);
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| keep(*x, x_scale) && keep(*y, y_scale))
                .map(|&(x, y)| (tx(x, x_scale), tx(y, y_scale)))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);
    let label = |v: f64, s: AxisScale| {
        if s == AxisScale::Log {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3e}")
        }
    };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="black" points="{L},{T} {L},{} {},{}"/>"#,
        H - B,
        W - R,
        H - B
    );
    let _ = writeln!(svg, r#"<text x="{L}" y="{}" font-size="11">{}</text>"#, H - B + 16.0, label(x0, x_scale));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#, W - R, H - B + 16.0, label(x1, x_scale));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#, L - 4.0, H - B, label(y0, y_scale));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#, L - 4.0, T + 10.0, label(y1, y_scale));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#, (L + W - R) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0,
        escape(y_label)
    );
    for (n, (s, p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[n % COLORS.len()];
        let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            L + 10.0,
            T + 16.0 + 16.0 * n as f64,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// M0 and M1 against time.
pub fn moments_plot(traj: &Trajectory) -> String {
    let m0 = Series {
        label: "M0".into(),
        points: traj.diagnostics.iter().map(|d| (d.time, d.moment_0)).collect(),
    };
    let m1 = Series {
        label: "M1".into(),
        points: traj.diagnostics.iter().map(|d| (d.time, d.moment_1)).collect(),
    };
    svg_plot(
        &format!("{} (k = {})", traj.kernel, traj.truncation),
        "t",
        "moment",
        &[m0, m1],
        AxisScale::Linear,
        AxisScale::Linear,
    )
}
