//! Minimal SVG line chart of FER against SNR, log-scaled FER axis.

use std::fmt::Write as _;

use super::config::Scheme;
use super::sweep::SweepRow;
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 5] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

/// One polyline per scheme, in first-appearance order. Rows with `fer = 0`
/// are dropped since they have no place on a log axis.
pub fn render_svg(rows: &[SweepRow]) -> Result<String> {
    let pts: Vec<&SweepRow> = rows.iter().filter(|r| r.fer > 0.0).collect();
    if pts.is_empty() {
        return Err(Error::InvalidParameter("nothing to plot".into()));
    }
    let mut schemes: Vec<Scheme> = Vec::new();
    for r in &pts {
        if !schemes.contains(&r.scheme) {
            schemes.push(r.scheme);
        }
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut lo = f64::INFINITY;
    for r in &pts {
        x0 = x0.min(r.snr_db);
        x1 = x1.max(r.snr_db);
        lo = lo.min(r.fer);
    }
    if x1 == x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let d_lo = lo.log10().floor().min(-1.0);
    let d_hi = 0.0;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |f: f64| TOP + (d_hi - f.log10()) / (d_hi - d_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for d in (d_lo as i32)..=(d_hi as i32) {
        let y = sy(10f64.powi(d));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let mut xs: Vec<f64> = pts.iter().map(|r| r.snr_db).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            sx(x),
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">SNR (dB)</text>"#,
        LEFT + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">FER</text>"#,
        TOP + ph / 2.0
    );
    for (i, scheme) in schemes.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut line: Vec<(f64, f64)> = pts
            .iter()
            .filter(|r| r.scheme == *scheme)
            .map(|r| (r.snr_db, r.fer))
            .collect();
        line.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = line
            .iter()
            .map(|&(x, f)| format!("{:.1},{:.1}", sx(x), sy(f)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(x, f) in &line {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(f)
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            scheme.name()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
