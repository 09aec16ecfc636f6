//! Static SVG diagnostics of an episode.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::sync::MAX_SKEW;

use super::{Episode, PipelineError};

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Series<'a> {
    label: &'a str,
    points: Vec<(f64, f64)>,
    dots: bool,
}

fn bounds(series: &[Series], extra_y: &[f64]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    for y in extra_y {
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |a: f64, b: f64| if b - a < 1e-12 { (a - 0.5, b + 0.5) } else { (a, b) };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

/// Line/scatter chart with axes, extents and a legend.
fn chart(title: &str, x_label: &str, y_label: &str, series: &[Series], hline: Option<(f64, &str)>) -> String {
    let (x0, x1, y0, y1) = bounds(series, &hline.map(|h| vec![h.0]).unwrap_or_default());
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, x, y, anchor) in [
        (x0, sx(x0), H - MARGIN + 14.0, "start"),
        (x1, sx(x1), H - MARGIN + 14.0, "end"),
    ] {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.4}</text>"#);
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{v:.4}</text>"#, MARGIN - 4.0);
    }
    if let Some((y, label)) = hline {
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" x2="{}" y1="{yy:.1}" y2="{yy:.1}" stroke="#888" stroke-dasharray="4 3"/><text x="{}" y="{:.1}" text-anchor="end" fill="#888">{label}</text>"##,
            W - MARGIN,
            W - MARGIN,
            sy(y) - 4.0,
            yy = sy(y)
        );
    }
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if ser.dots {
            for (x, y) in &ser.points {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="1.5" fill="{color}"/>"#, sx(*x), sy(*y));
            }
        } else if !ser.points.is_empty() {
            let d: Vec<String> = ser.points.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                d.join(" ")
            );
        }
        let ly = 36.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{}" y="{:.1}">{}</text>"#,
            W - MARGIN - 110.0,
            ly - 9.0,
            W - MARGIN - 95.0,
            ly,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Renders every diagnostic chart as SVG source, keyed by file name.
pub fn plots(ep: &Episode) -> Vec<(&'static str, String)> {
    let t0 = ep.frames.first().map_or(0.0, |f| f.t);
    let rel = |t: f64| t - t0;
    let skew = chart(
        "Per-frame skew",
        "time [s]",
        "skew [ms]",
        &[Series {
            label: "skew",
            points: ep.frames.iter().map(|f| (rel(f.t), f.skew * 1e3)).collect(),
            dots: true,
        }],
        Some((MAX_SKEW * 1e3, "limit")),
    );
    let widths = chart(
        "Gripper opening",
        "time [s]",
        "width [mm]",
        &["left", "right"].iter().enumerate().map(|(h, label)| Series {
            label,
            points: ep.frames.iter().map(|f| (rel(f.t), f.grippers[h].width * 1e3)).collect(),
            dots: false,
        }).collect::<Vec<_>>(),
        None,
    );
    let path = chart(
        "End-effector path (top view)",
        "x [m]",
        "y [m]",
        &["left", "right"].iter().enumerate().map(|(h, label)| Series {
            label,
            points: ep.frames.iter().map(|f| (f.ee_poses[h].translation().x, f.ee_poses[h].translation().y)).collect(),
            dots: false,
        }).collect::<Vec<_>>(),
        None,
    );
    let step = chart(
        "Per-frame motion",
        "time [s]",
        "|delta translation| [mm]",
        &["left", "right"].iter().enumerate().map(|(h, label)| Series {
            label,
            points: ep.frames.iter().map(|f| (rel(f.t), f.deltas[h].translation().norm() * 1e3)).collect(),
            dots: false,
        }).collect::<Vec<_>>(),
        None,
    );
    let mid = ep.frames.get(ep.frames.len() / 2);
    let clouds = chart(
        "Tactile clouds, middle frame (side view)",
        "y [mm]",
        "z [mm]",
        &ep.tactile_streams.iter().enumerate().map(|(i, label)| Series {
            label,
            points: mid
                .map(|f| f.clouds[i].points().iter().map(|p| (f64::from(p[1]) * 1e3, f64::from(p[2]) * 1e3)).collect())
                .unwrap_or_default(),
            dots: true,
        }).collect::<Vec<_>>(),
        None,
    );
    vec![
        ("skew.svg", skew),
        ("gripper_width.svg", widths),
        ("ee_path.svg", path),
        ("ee_motion.svg", step),
        ("tactile_clouds.svg", clouds),
    ]
}

/// Writes [`plots`] into `dir`, returning the paths written.
pub fn write_plots(ep: &Episode, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let io = |p: &Path, e: std::io::Error| PipelineError::Io {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    plots(ep)
        .into_iter()
        .map(|(name, svg)| {
            let path = dir.join(name);
            std::fs::write(&path, svg).map_err(|e| io(&path, e))?;
            Ok(path)
        })
        .collect()
}
