//! Minimal self-contained SVG line charts for sweep columns.

use std::fmt::Write as _;

use crate::dump::fmt_sig;
use crate::stability::StabilityReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self { name: name.to_string(), points }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Default::default() }
    }

    pub fn log_log(mut self) -> Self {
        self.log_x = true;
        self.log_y = true;
        self
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    fn tx(&self, v: f64) -> Option<f64> {
        axis_value(v, self.log_x)
    }

    fn ty(&self, v: f64) -> Option<f64> {
        axis_value(v, self.log_y)
    }

    /// Points that survive the axis transforms (finite, positive on log axes).
    fn visible(&self, s: &Series) -> Vec<(f64, f64)> {
        s.points.iter().filter_map(|&(x, y)| Some((self.tx(x)?, self.ty(y)?))).collect()
    }

    pub fn to_svg(&self) -> String {
        let all: Vec<(f64, f64)> = self.series.iter().flat_map(|s| self.visible(s)).collect();
        let (x0, x1) = range(all.iter().map(|p| p.0));
        let (y0, y1) = range(all.iter().map(|p| p.1));
        let (ml, mr, mt, mb) = MARGIN;
        let (pw, ph) = (WIDTH - ml - mr, HEIGHT - mt - mb);
        let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let _ = writeln!(svg, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/>"#, mt + ph, mt + ph + 4.0);
            let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, mt + ph + 18.0, tick(xv, self.log_x));
            let _ = writeln!(svg, r#"<line x1="{}" y1="{py:.2}" x2="{ml}" y2="{py:.2}" stroke="black"/>"#, ml - 4.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, ml - 6.0, py + 4.0, tick(yv, self.log_y));
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ml + pw / 2.0, HEIGHT - 10.0, escape(&self.x_label));
        let _ = writeln!(
            svg,
            r#"<text x="15" y="{y}" text-anchor="middle" transform="rotate(-90 15 {y})">{}</text>"#,
            escape(&self.y_label),
            y = mt + ph / 2.0
        );
        for (k, s) in self.series.iter().enumerate() {
            let colour = PALETTE[k % PALETTE.len()];
            let pts = self.visible(s);
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            if pts.len() > 1 {
                let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, path.join(" "));
            }
            for &(x, y) in &pts {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, sx(x), sy(y));
            }
            let ly = mt + 14.0 + 16.0 * k as f64;
            let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, ml + pw - 120.0, ml + pw - 100.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, ml + pw - 95.0, ly + 4.0, escape(&s.name));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Distance columns of a sweep against `|offset|`, on linear and log-log
/// axes, keyed by file stem.
pub fn report_charts(report: &StabilityReport) -> Vec<(String, Chart)> {
    let col = |f: &dyn Fn(&crate::stability::RungResult) -> Option<f64>| -> Vec<(f64, f64)> {
        report.rungs.iter().filter_map(|r| Some((r.offset.abs(), f(r)?))).collect()
    };
    let mut series = vec![
        Series::new("weak* (max)", col(&|r| r.weak_star_max())),
        Series::new("|dP|", col(&|r| r.delta_pressure)),
    ];
    if report.t == 1.0 {
        series.push(Series::new("L1", col(&|r| r.l1)));
    }
    let title = format!("{} at {} (t = {})", report.family, fmt_sig(report.base_param, 6), fmt_sig(report.t, 6));
    let mut linear = Chart::new(&title, "|offset|", "distance");
    linear.series = series;
    let log = Chart { log_x: true, log_y: true, ..linear.clone() };
    vec![("distances".into(), linear), ("distances_loglog".into(), log)]
}

fn axis_value(v: f64, log: bool) -> Option<f64> {
    match (v.is_finite(), log) {
        (false, _) => None,
        (true, true) if v > 0.0 => Some(v.log10()),
        (true, true) => None,
        (true, false) => Some(v),
    }
}

/// Data range padded by 5%; degenerate ranges widen to unit length.
fn range<I: Iterator<Item = f64>>(vals: I) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick(v: f64, log: bool) -> String {
    fmt_sig(if log { 10f64.powf(v) } else { v }, 3)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_and_skips_nonpositive_on_log_axes() {
        let c = Chart::new("a < b", "offset", "distance")
            .log_log()
            .with(Series::new("weak*", vec![(0.05, 0.04), (0.01, 0.006), (0.0, 1.0), (0.005, f64::NAN)]));
        let svg = c.to_svg();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn empty_chart_renders() {
        let svg = Chart::new("empty", "x", "y").to_svg();
        assert!(svg.contains("</svg>"));
        assert!(!svg.contains("NaN"));
    }
}
