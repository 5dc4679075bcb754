use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{group_label, ReportError, SeriesStats};

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotStyle {
    pub title: String,
    pub width: u32,
    pub panel_height: u32,
    /// Fork path used to label legend entries.
    pub group_by: Option<String>,
    pub band: bool,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle { title: String::new(), width: 760, panel_height: 300, group_by: None, band: true }
    }
}

const LEFT: f64 = 78.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick step of roughly `span / 5` rounded to 1, 2 or 5 times a power of ten.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

/// Axis range covering `[lo, hi]` on tick boundaries, and its ticks.
fn axis(lo: f64, hi: f64) -> (f64, f64, Vec<f64>) {
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    };
    let step = tick_step(hi - lo);
    let a = (lo / step).floor() * step;
    let b = (hi / step).ceil() * step;
    let n = ((b - a) / step).round() as usize;
    let ticks = (0..=n).map(|i| a + i as f64 * step).collect();
    (a.min(lo), b.max(hi), ticks)
}

fn tick_label(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r}")
}

/// Self-contained SVG: one panel per variable, a mean line with a ±std band
/// per group, and a shared legend.
pub fn render_svg(series: &[SeriesStats], style: &PlotStyle) -> Result<String, ReportError> {
    if series.is_empty() || series.iter().all(|s| s.mean.is_empty()) {
        return Err(ReportError::EmptySeries);
    }
    let mut variables: Vec<&str> = Vec::new();
    let mut groups: Vec<&str> = Vec::new();
    for s in series {
        if !variables.contains(&s.variable.as_str()) {
            variables.push(&s.variable);
        }
        if !groups.contains(&s.group.as_str()) {
            groups.push(&s.group);
        }
    }
    let w = style.width as f64;
    let ph = style.panel_height as f64;
    let h = TOP + variables.len() as f64 * (ph + BOTTOM) + 10.0;
    let pw = w - LEFT - RIGHT;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="Helvetica, Arial, sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    if !style.title.is_empty() {
        let _ = writeln!(out, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, esc(&style.title));
    }

    for (vi, var) in variables.iter().enumerate() {
        let top = TOP + vi as f64 * (ph + BOTTOM);
        let mine: Vec<&SeriesStats> = series.iter().filter(|s| s.variable == *var).collect();
        let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for s in &mine {
            for j in 0..s.mean.len() {
                let pts = [s.mean[j], s.min[j], s.max[j], s.mean[j] - s.std[j], s.mean[j] + s.std[j]];
                for v in pts.into_iter().filter(|v| v.is_finite()) {
                    ylo = ylo.min(v);
                    yhi = yhi.max(v);
                }
                xlo = xlo.min(s.episode[j]);
                xhi = xhi.max(s.episode[j]);
            }
        }
        if !ylo.is_finite() {
            (ylo, yhi) = (0.0, 1.0);
        }
        let (x0, x1, xt) = axis(xlo, xhi);
        let (y0, y1, yt) = axis(ylo, yhi);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
        let units = mine.iter().map(|s| s.units.as_str()).find(|u| !u.is_empty());
        let ylabel = match units {
            Some(u) => format!("{var} [{u}]"),
            None => var.to_string(),
        };

        let _ = writeln!(out, r#"<g class="panel" data-variable="{}">"#, esc(var));
        let _ = writeln!(
            out,
            r##"<rect class="plot-area" x="{LEFT:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##
        );
        for t in &xt {
            let x = sx(*t);
            let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, top, top + ph);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 16.0, tick_label(*t));
        }
        for t in &yt {
            let y = sy(*t);
            let _ = writeln!(out, r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick_label(*t));
        }
        let _ = writeln!(out, r#"<text class="x-label" x="{:.2}" y="{:.2}" text-anchor="middle">episode</text>"#, LEFT + pw / 2.0, top + ph + 36.0);
        let _ = writeln!(
            out,
            r#"<text class="y-label" transform="translate({:.2},{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            LEFT - 52.0,
            top + ph / 2.0,
            esc(&ylabel)
        );
        for s in &mine {
            let gi = groups.iter().position(|g| *g == s.group).unwrap_or(0);
            let color = PALETTE[gi % PALETTE.len()];
            if style.band {
                let mut pts = String::new();
                for j in 0..s.mean.len() {
                    let _ = write!(pts, "{:.2},{:.2} ", sx(s.episode[j]), sy(s.mean[j] + s.std[j]));
                }
                for j in (0..s.mean.len()).rev() {
                    let _ = write!(pts, "{:.2},{:.2} ", sx(s.episode[j]), sy(s.mean[j] - s.std[j]));
                }
                let _ = writeln!(out, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, pts.trim_end());
            }
            let pts: Vec<String> = (0..s.mean.len()).map(|j| format!("{:.2},{:.2}", sx(s.episode[j]), sy(s.mean[j]))).collect();
            let _ = writeln!(
                out,
                r#"<polyline class="mean" data-group="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
                esc(&s.group),
                pts.join(" ")
            );
        }
        let _ = writeln!(out, "</g>");
    }

    let lx = LEFT + pw + 16.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    for (gi, g) in groups.iter().enumerate() {
        let y = TOP + 10.0 + gi as f64 * 20.0;
        let color = PALETTE[gi % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<g class="legend-entry"><line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 22.0,
            lx + 28.0,
            y + 4.0,
            esc(&group_label(style.group_by.as_deref(), g))
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_covers_range() {
        let (a, b, t) = axis(0.3, 9.7);
        assert!(a <= 0.3 && b >= 9.7);
        assert_eq!(t.first().copied(), Some(0.0));
        assert_eq!(t.last().copied(), Some(10.0));
        let (a, b, _) = axis(5.0, 5.0);
        assert!(a < 5.0 && b > 5.0);
        let (a, b, _) = axis(-112.0, -3.0);
        assert!(a <= -112.0 && b >= -3.0);
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(esc(r#"a<b & "c">"#), "a&lt;b &amp; &quot;c&quot;&gt;");
    }
}
