//! Minimal SVG scatter and line plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self {
            x: range(&mut xs.clone()),
            y: range(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    s
}

fn legend(s: &mut String, names: &[String]) {
    for (i, n) in names.iter().enumerate() {
        let y = MARGIN + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{}" cy="{}" r="4" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            W - MARGIN - 90.0,
            y - 4.0,
            color(i),
            W - MARGIN - 82.0,
            y,
            escape(n)
        );
    }
}

fn save(path: &Path, body: String) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Scatter of 2-D points coloured by integer class, with class names in a legend.
pub fn scatter_svg(points: &[(f64, f64)], classes: &[usize], names: &[String], title: &str) -> String {
    let f = Frame::fit(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut s = open(title);
    for (&(x, y), &c) in points.iter().zip(classes) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            f.px(x),
            f.py(y),
            color(c)
        );
    }
    legend(&mut s, names);
    s.push_str("</svg>\n");
    s
}

pub fn write_scatter(path: impl AsRef<Path>, points: &[(f64, f64)], classes: &[usize], names: &[String], title: &str) -> Result<()> {
    save(path.as_ref(), scatter_svg(points, classes, names, title))
}

/// One polyline per named series over shared x positions; y axis fixed to `[y_lo, y_hi]`.
pub fn lines_svg(xs: &[f64], series: &[(String, Vec<f64>)], y_range: (f64, f64), title: &str) -> String {
    let f = Frame {
        x: Frame::fit(xs.iter().copied(), std::iter::empty()).x,
        y: y_range,
    };
    let mut s = open(title);
    for &x in xs {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{x}</text>"#,
            f.px(x),
            H - MARGIN + 14.0
        );
    }
    for t in [y_range.0, (y_range.0 + y_range.1) / 2.0, y_range.1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="10">{t:.2}</text>"#,
            MARGIN - 4.0,
            f.py(t) + 3.0
        );
    }
    for (i, (_, ys)) in series.iter().enumerate() {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            color(i)
        );
    }
    let names: Vec<String> = series.iter().map(|(n, _)| n.clone()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

pub fn write_lines(path: impl AsRef<Path>, xs: &[f64], series: &[(String, Vec<f64>)], y_range: (f64, f64), title: &str) -> Result<()> {
    save(path.as_ref(), lines_svg(xs, series, y_range, title))
}
