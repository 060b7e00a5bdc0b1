//! SVG rendering of percentile-difference curves.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use pet_core::eval::DifferenceCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, p: f64) -> f64 {
        let span = (self.x1 - self.x0).max(f64::EPSILON);
        LEFT + (p - self.x0) / span * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn points(it: impl Iterator<Item = (f64, f64)>) -> String {
    it.map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds the SVG document: shaded envelope polygon, zero reference line,
/// median polyline and labelled axes.
pub fn render_svg(curve: &DifferenceCurve) -> Result<String> {
    curve.validate()?;
    let p = &curve.percentiles;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for v in curve.envelope_low.iter().chain(&curve.envelope_high).chain(&curve.median_diff) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if hi - lo < 1e-9 {
        (lo, hi) = (-1.0, 1.0);
    }
    let pad = 0.08 * (hi - lo);
    let ax = Axes {
        x0: p[0],
        x1: *p.last().expect("validated non-empty"),
        y0: lo - pad,
        y1: hi + pad,
    };

    let envelope = points(
        p.iter()
            .zip(&curve.envelope_high)
            .chain(p.iter().zip(&curve.envelope_low).rev())
            .map(|(&x, &y)| (ax.px(x), ax.py(y))),
    );
    let median = points(p.iter().zip(&curve.median_diff).map(|(&x, &y)| (ax.px(x), ax.py(y))));
    let zero = points([(ax.px(ax.x0), ax.py(0.0)), (ax.px(ax.x1), ax.py(0.0))].into_iter());

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )?;
    writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#)?;
    writeln!(
        s,
        r##"<polygon points="{envelope}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>"##
    )?;
    writeln!(
        s,
        r#"<polyline points="{zero}" fill="none" stroke="black" stroke-dasharray="4 3" stroke-width="1"/>"#
    )?;
    writeln!(
        s,
        r##"<polyline points="{median}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##
    )?;
    let (bx, by) = (LEFT, HEIGHT - BOTTOM);
    writeln!(
        s,
        r#"<line x1="{bx}" y1="{by}" x2="{:.2}" y2="{by}" stroke="black"/>"#,
        WIDTH - RIGHT
    )?;
    writeln!(s, r#"<line x1="{bx}" y1="{TOP}" x2="{bx}" y2="{by}" stroke="black"/>"#)?;
    for k in 0..=4 {
        let v = ax.x0 + (ax.x1 - ax.x0) * k as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{v:.0}</text>"#,
            ax.px(v),
            by + 16.0
        )?;
        let v = ax.y0 + (ax.y1 - ax.y0) * k as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            bx - 6.0,
            ax.py(v) + 4.0
        )?;
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">error percentile p</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 12.0
    )?;
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">PET minus intensity error (deg)</text>"#,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0
    )?;
    writeln!(
        s,
        r#"<text x="{:.2}" y="18" font-size="12" text-anchor="end">median difference, {:.0}% envelope</text>"#,
        WIDTH - RIGHT,
        100.0 * curve.level
    )?;
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(curve: &DifferenceCurve, path: &Path) -> Result<()> {
    let svg = render_svg(curve)?;
    std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))
}
