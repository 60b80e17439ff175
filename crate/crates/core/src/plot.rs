//! Minimal SVG rendering for calibration curves and PDP bands. Output carries
//! no timestamps or generator metadata, so identical inputs give identical
//! bytes.

use std::fmt::Write as _;

use crate::metrics::LevelCoverage;
use crate::pdp::PdpResult;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Self {
            x: pad(x),
            y: pad(y),
        }
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn points(&self, xs: &[f64], ys: &[f64]) -> String {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let vx = f.x.0 + t * (f.x.1 - f.x.0);
        let vy = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(vx), f.py(vy));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            tick(vx)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick(vy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Empirical coverage against nominal level, with the ideal diagonal.
pub fn calibration_svg(curve: &[LevelCoverage], title: &str) -> String {
    let f = Frame::new((0.0, 1.0), (0.0, 1.0));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "nominal level", "empirical coverage");
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#888888" stroke-dasharray="6 4"/>"##,
        f.points(&[0.0, 1.0], &[0.0, 1.0])
    );
    let xs: Vec<f64> = curve.iter().map(|p| p.alpha).collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.coverage).collect();
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        f.points(&xs, &ys)
    );
    for (&x, &y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#1f77b4"/>"##,
            f.px(x),
            f.py(y)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Mean curve over shaded bands, widest level drawn first.
pub fn pdp_svg(result: &PdpResult, ylabel: &str) -> String {
    let lo = result
        .bands
        .iter()
        .flat_map(|b| b.lower.iter())
        .chain(&result.mean_curve)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = result
        .bands
        .iter()
        .flat_map(|b| b.upper.iter())
        .chain(&result.mean_curve)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let xlo = result.grid.first().copied().unwrap_or(0.0);
    let xhi = result.grid.last().copied().unwrap_or(1.0);
    let f = Frame::new((xlo, xhi), (lo, hi));

    let mut out = String::new();
    header(&mut out, &format!("Partial dependence: {}", result.feature));
    axes(&mut out, &f, &result.feature, ylabel);
    let n = result.bands.len().max(1) as f64;
    for band in result.bands.iter().rev() {
        let mut xs = result.grid.clone();
        let mut ys = band.upper.clone();
        xs.extend(result.grid.iter().rev());
        ys.extend(band.lower.iter().rev());
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#ff7f0e" fill-opacity="{:.3}" stroke="none"><title>{}</title></polygon>"##,
            f.points(&xs, &ys),
            0.6 / n,
            band.alpha
        );
    }
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        f.points(&result.grid, &result.mean_curve)
    );
    out.push_str("</svg>\n");
    out
}
