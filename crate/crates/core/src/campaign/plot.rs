//! Hand-written SVG charts. No plotting dependency: the charts are a few
//! hundred rectangles and circles.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{AbsDevRow, CampaignCsvRow, CampaignError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    RmsePred,
    RmseData,
}

impl Metric {
    fn value(self, row: &CampaignCsvRow) -> f64 {
        match self {
            Metric::RmsePred => row.rmse_pred,
            Metric::RmseData => row.rmse_data,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::RmsePred => "RMSE of SOC estimate (faulted vs fault-free)",
            Metric::RmseData => "RMSE of normalized input (corrupted vs original)",
        }
    }
}

fn region_color(region: &str) -> &'static str {
    match region {
        "exponent" => "#d62728",
        "significand" => "#1f77b4",
        _ => "#7f7f7f",
    }
}

fn channel_offset(channel: &str) -> f64 {
    match channel {
        "V" => -0.25,
        "T" => 0.25,
        _ => 0.0,
    }
}

fn marker(svg: &mut String, channel: &str, x: f64, y: f64, color: &str, hollow: bool) {
    let fill = if hollow { "none" } else { color };
    let _ = match channel {
        "I" => writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="5" height="5" fill="{fill}" stroke="{color}"/>"#,
            x - 2.5,
            y - 2.5
        ),
        "T" => writeln!(
            svg,
            r#"<path d="M{:.1} {:.1}L{:.1} {:.1}L{:.1} {:.1}Z" fill="{fill}" stroke="{color}"/>"#,
            x,
            y - 3.0,
            x - 3.0,
            y + 2.5,
            x + 3.0,
            y + 2.5
        ),
        _ => writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.8" fill="{fill}" stroke="{color}"/>"#),
    };
}

/// Per-bit scatter of one metric on a log axis, one panel per fault mode.
/// Zeros sit on the bottom edge as hollow markers, infinities on the top
/// edge.
pub fn render_bit_scatter(rows: &[CampaignCsvRow], metric: Metric) -> String {
    let mut modes: Vec<&str> = Vec::new();
    for r in rows {
        if !modes.contains(&r.mode.as_str()) {
            modes.push(&r.mode);
        }
    }
    let finite: Vec<f64> = rows
        .iter()
        .map(|r| metric.value(r))
        .filter(|v| v.is_finite() && *v > 0.0)
        .collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(0.0, f64::max);
    let (lo_exp, hi_exp) = if finite.is_empty() {
        (-1, 0)
    } else {
        let l = lo.log10().floor() as i32;
        let h = (hi.log10().ceil() as i32).max(l + 1);
        (l, h)
    };

    let (width, panel_h, left, right, top) = (960.0, 300.0, 70.0, 20.0, 40.0);
    let plot_w = width - left - right;
    let inner_h = panel_h - 60.0;
    let height = top + panel_h * modes.len().max(1) as f64 + 30.0;
    let x_of = |bit: f64| left + (bit - 0.5) / 64.0 * plot_w;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} by bit position</text>"#,
        width / 2.0,
        metric.label()
    );

    for (p, mode) in modes.iter().enumerate() {
        let y0 = top + p as f64 * panel_h;
        let y_bottom = y0 + inner_h;
        let y_of = |v: f64| {
            if v.is_infinite() || v.is_nan() {
                y0
            } else if v <= 0.0 {
                y_bottom
            } else {
                let t = (v.log10() - lo_exp as f64) / (hi_exp - lo_exp) as f64;
                y_bottom - t.clamp(0.0, 1.0) * inner_h
            }
        };
        let _ = writeln!(
            svg,
            r##"<rect x="{left}" y="{y0}" width="{plot_w}" height="{inner_h}" fill="none" stroke="#333"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-weight="bold">{mode}</text>"#, left + 6.0, y0 + 14.0);
        // exponent region shading
        let _ = writeln!(
            svg,
            r##"<rect x="{:.1}" y="{y0}" width="{:.1}" height="{inner_h}" fill="#d62728" fill-opacity="0.06"/>"##,
            x_of(1.5),
            x_of(12.5) - x_of(1.5)
        );
        let step = ((hi_exp - lo_exp) as f64 / 8.0).ceil().max(1.0) as i32;
        let mut e = lo_exp;
        while e <= hi_exp {
            let y = y_of(10f64.powi(e));
            let _ = writeln!(
                svg,
                r##"<line x1="{left}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{e}</text>"##,
                left + plot_w,
                left - 4.0,
                y + 4.0
            );
            e += step;
        }
        for bit in (1..=64).filter(|b| b % 4 == 0 || *b == 1) {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{bit}</text>"#,
                x_of(bit as f64),
                y_bottom + 14.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">bit (1 = sign, 2-12 exponent, 13-64 significand)</text>"#,
            left + plot_w / 2.0,
            y_bottom + 30.0
        );
        for r in rows.iter().filter(|r| r.mode == *mode) {
            let v = metric.value(r);
            let x = x_of(r.bit as f64 + channel_offset(&r.channel));
            marker(&mut svg, &r.channel, x, y_of(v), region_color(&r.region), v == 0.0);
        }
    }

    let ly = height - 14.0;
    let legend = [
        ("V", "voltage", "#333"),
        ("I", "current", "#333"),
        ("T", "temperature", "#333"),
        ("V", "exponent bit", "#d62728"),
        ("V", "significand bit", "#1f77b4"),
    ];
    for (k, (ch, text, color)) in legend.iter().enumerate() {
        let x = left + 10.0 + k as f64 * 130.0;
        marker(&mut svg, ch, x, ly - 4.0, color, false);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly}">{text}</text>"#, x + 8.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{ly}">hollow = 0, top edge = inf</text>"#,
        left + 10.0 + 5.0 * 130.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn heat_color(t: f64) -> String {
    // white -> yellow -> red -> dark red
    let stops = [(255.0, 255.0, 204.0), (254.0, 178.0, 76.0), (227.0, 26.0, 28.0), (103.0, 0.0, 13.0)];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    let f = t - i as f64;
    let lerp = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (stops[i], stops[i + 1]);
    format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

/// Maximum absolute deviation per fault and 1 % SOC bin. Faults that never
/// change the estimate are omitted.
pub fn render_absdev_heatmap(rows: &[AbsDevRow]) -> String {
    let mut faults: Vec<(&str, [Option<f64>; 100])> = Vec::new();
    for r in rows {
        if faults.last().map(|f| f.0) != Some(r.fault.as_str()) {
            faults.push((&r.fault, [None; 100]));
        }
        let bin = ((r.soc_truth * 100.0).floor().max(0.0) as usize).min(99);
        let cell = &mut faults.last_mut().expect("pushed above").1[bin];
        *cell = Some(cell.map_or(r.abs_dev, |c: f64| c.max(r.abs_dev)));
    }
    faults.retain(|(_, bins)| bins.iter().flatten().any(|&d| d > 0.0));

    let (lo_exp, hi_exp) = (-8.0, 0.0);
    let (left, top, cell_w, cell_h) = (90.0, 40.0, 8.0, 9.0);
    let width = left + 100.0 * cell_w + 120.0;
    let height = top + faults.len().max(1) as f64 * cell_h + 50.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="8">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">Max |SOC deviation| per fault and 1% SOC bin</text>"#,
        width / 2.0
    );
    if faults.is_empty() {
        let _ = writeln!(svg, r#"<text x="{left}" y="{}">no fault changed the estimate</text>"#, top + 10.0);
    }
    for (k, (name, bins)) in faults.iter().enumerate() {
        let y = top + k as f64 * cell_h;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{name}</text>"#,
            left - 4.0,
            y + cell_h - 2.0
        );
        for (b, cell) in bins.iter().enumerate() {
            let Some(d) = cell else { continue };
            let t = if d.is_nan() || *d == f64::INFINITY {
                1.0
            } else if *d <= 0.0 {
                0.0
            } else {
                (d.log10() - lo_exp) / (hi_exp - lo_exp)
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{y:.1}" width="{cell_w}" height="{cell_h}" fill="{}"/>"#,
                left + b as f64 * cell_w,
                heat_color(t)
            );
        }
    }
    let axis_y = top + faults.len().max(1) as f64 * cell_h + 12.0;
    for pct in (0..=100).step_by(10) {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{axis_y:.1}" text-anchor="middle">{pct}%</text>"#,
            left + pct as f64 * cell_w
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">true SOC</text>"#,
        left + 50.0 * cell_w,
        axis_y + 16.0
    );
    let lx = left + 100.0 * cell_w + 20.0;
    for i in 0..=8 {
        let e = lo_exp + (hi_exp - lo_exp) * i as f64 / 8.0;
        let y = top + (8 - i) as f64 * 14.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{y}" width="14" height="14" fill="{}"/><text x="{}" y="{}">1e{e}</text>"#,
            heat_color(i as f64 / 8.0),
            lx + 18.0,
            y + 10.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the three standard charts into `dir`.
pub fn render_plots(rows: &[CampaignCsvRow], absdev: &[AbsDevRow], dir: &Path) -> Result<Vec<PathBuf>, CampaignError> {
    let outputs = [
        ("rmse_by_bit.svg", render_bit_scatter(rows, Metric::RmsePred)),
        ("data_rmse_by_bit.svg", render_bit_scatter(rows, Metric::RmseData)),
        ("absdev_heatmap.svg", render_absdev_heatmap(absdev)),
    ];
    let mut paths = Vec::new();
    for (name, svg) in outputs {
        let path = dir.join(name);
        std::fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}
