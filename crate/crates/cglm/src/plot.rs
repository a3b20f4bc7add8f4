//! Hand-rolled SVG line charts: axes, ticks, legend, one polyline per
//! series. No external assets, so the files diff cleanly and render
//! anywhere.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlotError {
    #[error("series {0:?} has no points")]
    EmptySeries(String),
    #[error("no series to plot")]
    NoSeries,
    #[error("series {label:?} has non-positive value {value} on a log axis")]
    NonPositiveLog { label: String, value: f64 },
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct ChartSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub width: u32,
    pub height: u32,
}

impl Default for ChartSpec {
    fn default() -> Self {
        ChartSpec {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            log_x: false,
            log_y: false,
            x_range: None,
            y_range: None,
            width: 840,
            height: 520,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 54.0;

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.001..100_000.0).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{v:.1e}")
    }
}

/// Tick positions for a linear axis: steps of 1/2/5 x 10^k, ~6 ticks.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    } * mag;
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

/// Tick positions for a log axis: 1, 2, 5 per decade within range.
fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut decade = 10f64.powf(lo.log10().floor());
    while decade <= hi * 1.0001 {
        for m in [1.0, 2.0, 5.0] {
            let v = decade * m;
            if v >= lo * 0.9999 && v <= hi * 1.0001 {
                out.push(v);
            }
        }
        decade *= 10.0;
    }
    out
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render a self-contained SVG chart.
pub fn render_line_chart(spec: &ChartSpec, series: &[Series]) -> Result<String, PlotError> {
    if series.is_empty() {
        return Err(PlotError::NoSeries);
    }
    for s in series {
        if s.points.is_empty() {
            return Err(PlotError::EmptySeries(s.label.clone()));
        }
        if spec.log_x || spec.log_y {
            for &(x, y) in &s.points {
                if (spec.log_x && x <= 0.0) || (spec.log_y && y <= 0.0) {
                    return Err(PlotError::NonPositiveLog {
                        label: s.label.clone(),
                        value: if spec.log_x && x <= 0.0 { x } else { y },
                    });
                }
            }
        }
    }

    let all = series.iter().flat_map(|s| s.points.iter().copied());
    let (mut x_lo, mut x_hi) = spec.x_range.unwrap_or_else(|| {
        let xs: Vec<f64> = all.clone().map(|(x, _)| x).collect();
        (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    let (mut y_lo, mut y_hi) = spec.y_range.unwrap_or_else(|| {
        let ys: Vec<f64> = all.map(|(_, y)| y).collect();
        (
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    if x_lo == x_hi {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if y_lo == y_hi {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    // breathing room on linear axes
    if !spec.log_y && spec.y_range.is_none() {
        let pad = (y_hi - y_lo) * 0.05;
        y_lo -= pad;
        y_hi += pad;
    }

    let (w, h) = (spec.width as f64, spec.height as f64);
    let plot_w = w - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = h - MARGIN_TOP - MARGIN_BOTTOM;
    let tx = |x: f64| -> f64 {
        let u = if spec.log_x {
            (x.log10() - x_lo.log10()) / (x_hi.log10() - x_lo.log10())
        } else {
            (x - x_lo) / (x_hi - x_lo)
        };
        MARGIN_LEFT + u * plot_w
    };
    let ty = |y: f64| -> f64 {
        let u = if spec.log_y {
            (y.log10() - y_lo.log10()) / (y_hi.log10() - y_lo.log10())
        } else {
            (y - y_lo) / (y_hi - y_lo)
        };
        MARGIN_TOP + (1.0 - u) * plot_h
    };

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif">"#,
        spec.width, spec.height, spec.width, spec.height
    );
    let _ = write!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);

    // gridlines + ticks
    let x_ticks = if spec.log_x {
        log_ticks(x_lo, x_hi)
    } else {
        linear_ticks(x_lo, x_hi)
    };
    let y_ticks = if spec.log_y {
        log_ticks(y_lo, y_hi)
    } else {
        linear_ticks(y_lo, y_hi)
    };
    for &t in &x_ticks {
        let px = tx(t);
        let _ = write!(
            svg,
            r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#e0e0e0" stroke-width="1"/>"##,
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        );
        let _ = write!(
            svg,
            r#"<text x="{px:.2}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + plot_h + 18.0,
            fmt_tick(t)
        );
    }
    for &t in &y_ticks {
        let py = ty(t);
        let _ = write!(
            svg,
            r##"<line x1="{}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#e0e0e0" stroke-width="1"/>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{:.2}" font-size="12" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 8.0,
            py + 4.0,
            fmt_tick(t)
        );
    }

    // axes
    let _ = write!(
        svg,
        r#"<line x1="{l}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}" stroke="black" stroke-width="1.5"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b:.2}" stroke="black" stroke-width="1.5"/>"#,
        l = MARGIN_LEFT,
        r = MARGIN_LEFT + plot_w,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h
    );

    // series polylines
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in &s.points {
            let _ = write!(pts, "{:.2},{:.2} ", tx(x), ty(y));
        }
        let _ = write!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            pts.trim_end()
        );
    }

    // legend, top-right of the plot area
    let legend_x = MARGIN_LEFT + plot_w - 180.0;
    let mut legend_y = MARGIN_TOP + 14.0;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            svg,
            r#"<line x1="{legend_x}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{color}" stroke-width="2.5"/><text x="{}" y="{}" font-size="12">{}</text>"#,
            legend_x + 24.0,
            legend_x + 30.0,
            legend_y + 4.0,
            esc(&s.label)
        );
        legend_y += 16.0;
    }

    // title and axis labels
    if !spec.title.is_empty() {
        let _ = write!(
            svg,
            r#"<text x="{:.2}" y="24" font-size="15" text-anchor="middle" font-weight="bold">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            esc(&spec.title)
        );
    }
    if !spec.x_label.is_empty() {
        let _ = write!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            h - 12.0,
            esc(&spec.x_label)
        );
    }
    if !spec.y_label.is_empty() {
        let _ = write!(
            svg,
            r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            esc(&spec.y_label)
        );
    }
    svg.push_str("</svg>");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_series() -> Vec<Series> {
        vec![
            Series {
                label: "alpha".into(),
                points: (0..10).map(|i| (i as f64, 4.0 - 0.2 * i as f64)).collect(),
            },
            Series {
                label: "beta".into(),
                points: (0..10).map(|i| (i as f64, 3.5 - 0.15 * i as f64)).collect(),
            },
        ]
    }

    #[test]
    fn chart_contains_one_polyline_per_series_and_labels() {
        let svg = render_line_chart(&ChartSpec::default(), &demo_series()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("alpha"));
        assert!(svg.contains("beta"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>"));
        // self-contained: no external references
        assert!(!svg.contains("href"));
    }

    #[test]
    fn empty_series_is_an_error() {
        let err = render_line_chart(
            &ChartSpec::default(),
            &[Series {
                label: "void".into(),
                points: vec![],
            }],
        )
        .unwrap_err();
        assert_eq!(err, PlotError::EmptySeries("void".into()));
        assert!(matches!(
            render_line_chart(&ChartSpec::default(), &[]),
            Err(PlotError::NoSeries)
        ));
    }

    #[test]
    fn log_axes_reject_non_positive_values() {
        let spec = ChartSpec {
            log_x: true,
            log_y: true,
            ..Default::default()
        };
        let err = render_line_chart(
            &spec,
            &[Series {
                label: "bad".into(),
                points: vec![(0.0, 1.0)],
            }],
        )
        .unwrap_err();
        assert!(matches!(err, PlotError::NonPositiveLog { .. }));

        let ok = render_line_chart(
            &spec,
            &[Series {
                label: "good".into(),
                points: vec![(64.0, 0.1), (128.0, 0.2), (256.0, 0.45)],
            }],
        )
        .unwrap();
        assert!(ok.contains("<polyline"));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = render_line_chart(
            &ChartSpec {
                title: "a < b & c".into(),
                ..Default::default()
            },
            &demo_series(),
        )
        .unwrap();
        assert!(svg.contains("a &lt; b &amp; c"));
    }
}
