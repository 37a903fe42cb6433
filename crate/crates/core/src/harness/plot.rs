//! Self-contained SVG line and bar charts from CSV tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::results::NA;
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Line,
    Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    /// Column holding error-bar half widths.
    pub err: Option<String>,
    /// One series per distinct value of this column.
    pub group: Option<String>,
    /// Keep only rows where `column == value`.
    pub filter: Option<(String, String)>,
    pub kind: PlotKind,
    pub title: String,
}

/// A CSV table held as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Result<usize, HarnessError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Config(format!("no column named {name:?}")))
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct Point {
    x_label: String,
    x: Option<f64>,
    y: f64,
    err: Option<f64>,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn number(s: &str) -> Option<f64> {
    if s == NA {
        None
    } else {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
}

/// Round tick spacing covering `[lo, hi]` with about five ticks.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders the selected columns as an SVG document with no external
/// references. Rows whose `y` is `NA` are skipped.
pub fn render_svg(table: &Table, spec: &PlotSpec) -> Result<String, HarnessError> {
    let xi = table.column(&spec.x)?;
    let yi = table.column(&spec.y)?;
    let ei = spec.err.as_deref().map(|c| table.column(c)).transpose()?;
    let gi = spec.group.as_deref().map(|c| table.column(c)).transpose()?;
    let fi = match &spec.filter {
        Some((col, value)) => Some((table.column(col)?, value.as_str())),
        None => None,
    };

    let mut series: Vec<(String, Vec<Point>)> = Vec::new();
    for row in &table.rows {
        if let Some((col, value)) = fi {
            if row[col] != value {
                continue;
            }
        }
        let Some(y) = number(&row[yi]) else { continue };
        let group = gi.map_or_else(|| spec.y.clone(), |g| row[g].clone());
        let point = Point {
            x_label: row[xi].clone(),
            x: number(&row[xi]),
            y,
            err: ei.and_then(|e| number(&row[e])),
        };
        match series.iter_mut().find(|(name, _)| *name == group) {
            Some((_, pts)) => pts.push(point),
            None => series.push((group, vec![point])),
        }
    }
    if series.is_empty() {
        return Err(HarnessError::Config("nothing to plot".into()));
    }

    let numeric_x =
        spec.kind == PlotKind::Line && series.iter().all(|(_, pts)| pts.iter().all(|p| p.x.is_some()));
    let mut categories: Vec<String> = Vec::new();
    for (_, pts) in &series {
        for p in pts {
            if !categories.contains(&p.x_label) {
                categories.push(p.x_label.clone());
            }
        }
    }

    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in &series {
        for p in pts {
            let e = p.err.unwrap_or(0.0).abs();
            y_lo = y_lo.min(p.y - e);
            y_hi = y_hi.max(p.y + e);
        }
    }
    if spec.kind == PlotKind::Bar {
        y_lo = y_lo.min(0.0);
        y_hi = y_hi.max(0.0);
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);

    let (x_lo, x_hi) = if numeric_x {
        let xs = series.iter().flat_map(|(_, p)| p.iter().filter_map(|p| p.x));
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| {
            (l.min(x), h.max(x))
        });
        if hi - lo < 1e-12 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    } else {
        (0.0, categories.len() as f64)
    };

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        w,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&spec.title)
    )
    .unwrap();

    for t in ticks(y_lo, y_hi) {
        let y = sy(t);
        writeln!(
            w,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(t)
        )
        .unwrap();
    }
    if numeric_x {
        for t in ticks(x_lo, x_hi) {
            let x = sx(t);
            writeln!(
                w,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + plot_h + 18.0,
                fmt_tick(t)
            )
            .unwrap();
        }
    } else {
        for (i, c) in categories.iter().enumerate() {
            writeln!(
                w,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(i as f64 + 0.5),
                TOP + plot_h + 18.0,
                escape(c)
            )
            .unwrap();
        }
    }
    writeln!(
        w,
        r#"<path d="M{LEFT},{TOP} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0,
        escape(&spec.x)
    )
    .unwrap();
    writeln!(
        w,
        r#"<text transform="translate(18,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + plot_h / 2.0,
        escape(&spec.y)
    )
    .unwrap();

    let n_series = series.len() as f64;
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let x_of = |p: &Point| -> f64 {
            if numeric_x {
                sx(p.x.unwrap_or(0.0))
            } else {
                let slot = categories.iter().position(|c| *c == p.x_label).unwrap_or(0) as f64;
                match spec.kind {
                    PlotKind::Bar => sx(slot + 0.1 + 0.8 * (si as f64 + 0.5) / n_series),
                    PlotKind::Line => sx(slot + 0.5),
                }
            }
        };
        match spec.kind {
            PlotKind::Bar => {
                let bar_w = 0.8 * plot_w / categories.len() as f64 / n_series;
                for p in pts {
                    let (x, y0, y1) = (x_of(p), sy(0.0), sy(p.y));
                    writeln!(
                        w,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                        x - bar_w / 2.0,
                        y0.min(y1),
                        bar_w,
                        (y1 - y0).abs()
                    )
                    .unwrap();
                }
            }
            PlotKind::Line => {
                let path: Vec<String> = pts
                    .iter()
                    .map(|p| format!("{:.2},{:.2}", x_of(p), sy(p.y)))
                    .collect();
                writeln!(
                    w,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    path.join(" ")
                )
                .unwrap();
                for p in pts {
                    writeln!(
                        w,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                        x_of(p),
                        sy(p.y)
                    )
                    .unwrap();
                }
            }
        }
        for p in pts {
            if let Some(e) = p.err {
                let x = x_of(p);
                writeln!(
                    w,
                    r#"<path d="M{x:.2},{:.2} V{:.2} M{:.2},{:.2} H{:.2} M{:.2},{:.2} H{:.2}" stroke="black"/>"#,
                    sy(p.y - e),
                    sy(p.y + e),
                    x - 4.0,
                    sy(p.y - e),
                    x + 4.0,
                    x - 4.0,
                    sy(p.y + e),
                    x + 4.0
                )
                .unwrap();
            }
        }
        let ly = TOP + 16.0 * si as f64;
        writeln!(
            w,
            r#"<rect x="{:.2}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            WIDTH - RIGHT + 12.0,
            ly,
            WIDTH - RIGHT + 30.0,
            ly + 10.0,
            escape(name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
