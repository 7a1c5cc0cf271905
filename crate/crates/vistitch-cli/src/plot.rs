//! Minimal SVG charting: axes, tick labels, line or scatter series, and
//! a legend. Output is plain deterministic text so identical data plots
//! to identical bytes.

use std::fmt::Write as _;

const PALETTE: [&str; 6] = [
    "#1f6fb2", "#d1495b", "#2e8b57", "#b8860b", "#6a4fa3", "#444444",
];

/// One plotted series: a label and its points in data coordinates.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Chart appearance and scales.
#[derive(Debug, Clone)]
pub struct ChartOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Draw connecting lines (scatter plots turn this off).
    pub lines: bool,
    /// Tick labels replacing numeric x ticks; point x values then index
    /// into this list (0, 1, ...).
    pub x_categories: Option<Vec<String>>,
    /// Fixed y range; autoscaled from the data when absent.
    pub y_range: Option<(f64, f64)>,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            lines: true,
            x_categories: None,
            y_range: None,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range_of(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        // Widen a degenerate range so the point sits mid-plot.
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders the chart as a complete SVG document.
pub fn render_chart(series: &[Series], opts: &ChartOptions) -> String {
    let (x_lo, x_hi) = match &opts.x_categories {
        Some(cats) if !cats.is_empty() => (-0.5, cats.len() as f64 - 0.5),
        _ => range_of(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
    };
    let (y_lo, y_hi) = opts
        .y_range
        .unwrap_or_else(|| range_of(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))));
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = move |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = move |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = write!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n");
    if !opts.title.is_empty() {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            fmt(WIDTH / 2.0),
            escape(&opts.title)
        );
    }
    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = fmt(MARGIN_L),
        r = fmt(WIDTH - MARGIN_R),
        t = fmt(MARGIN_T),
        b = fmt(HEIGHT - MARGIN_B),
    );
    // X ticks.
    match &opts.x_categories {
        Some(cats) => {
            for (i, cat) in cats.iter().enumerate() {
                let x = sx(i as f64);
                let _ = write!(
                    svg,
                    "<line x1=\"{x}\" y1=\"{b}\" x2=\"{x}\" y2=\"{b2}\" stroke=\"black\"/>\n\
                     <text x=\"{x}\" y=\"{ty}\" text-anchor=\"middle\">{lab}</text>\n",
                    x = fmt(x),
                    b = fmt(HEIGHT - MARGIN_B),
                    b2 = fmt(HEIGHT - MARGIN_B + 5.0),
                    ty = fmt(HEIGHT - MARGIN_B + 20.0),
                    lab = escape(cat),
                );
            }
        }
        None => {
            for i in 0..=4 {
                let v = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
                let x = sx(v);
                let _ = write!(
                    svg,
                    "<line x1=\"{x}\" y1=\"{b}\" x2=\"{x}\" y2=\"{b2}\" stroke=\"black\"/>\n\
                     <text x=\"{x}\" y=\"{ty}\" text-anchor=\"middle\">{lab}</text>\n",
                    x = fmt(x),
                    b = fmt(HEIGHT - MARGIN_B),
                    b2 = fmt(HEIGHT - MARGIN_B + 5.0),
                    ty = fmt(HEIGHT - MARGIN_B + 20.0),
                    lab = tick_label(v),
                );
            }
        }
    }
    // Y ticks.
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = sy(v);
        let _ = write!(
            svg,
            "<line x1=\"{l2}\" y1=\"{y}\" x2=\"{l}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" text-anchor=\"end\">{lab}</text>\n",
            l = fmt(MARGIN_L),
            l2 = fmt(MARGIN_L - 5.0),
            y = fmt(y),
            tx = fmt(MARGIN_L - 8.0),
            ty = fmt(y + 4.0),
            lab = tick_label(v),
        );
    }
    // Axis labels.
    if !opts.x_label.is_empty() {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(MARGIN_L + plot_w / 2.0),
            fmt(HEIGHT - 12.0),
            escape(&opts.x_label)
        );
    }
    if !opts.y_label.is_empty() {
        let _ = write!(
            svg,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" \
             transform=\"rotate(-90 16 {y})\">{}</text>\n",
            fmt(MARGIN_T + plot_h / 2.0),
            escape(&opts.y_label),
            y = fmt(MARGIN_T + plot_h / 2.0),
        );
    }
    // Series.
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if opts.lines && s.points.len() > 1 {
            let mut d = String::new();
            for (i, (x, y)) in s.points.iter().enumerate() {
                let cmd = if i == 0 { 'M' } else { 'L' };
                let _ = write!(d, "{cmd}{} {} ", fmt(sx(*x)), fmt(sy(*y)));
            }
            let _ = write!(
                svg,
                "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                d.trim_end()
            );
        }
        for (x, y) in &s.points {
            let _ = write!(
                svg,
                "<circle cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"{color}\"/>\n",
                fmt(sx(*x)),
                fmt(sy(*y))
            );
        }
    }
    // Legend, top-right inside the plot area.
    let visible: Vec<&Series> = series.iter().filter(|s| !s.label.is_empty()).collect();
    if !visible.is_empty() {
        let lx = WIDTH - MARGIN_R - 150.0;
        let ly = MARGIN_T + 8.0;
        let lh = 18.0 * visible.len() as f64 + 10.0;
        let _ = write!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"146\" height=\"{}\" fill=\"white\" \
             stroke=\"#999\"/>\n",
            fmt(lx),
            fmt(ly),
            fmt(lh)
        );
        for (i, s) in visible.iter().enumerate() {
            let color = PALETTE[series
                .iter()
                .position(|t| std::ptr::eq(*s, t))
                .unwrap_or(i)
                % PALETTE.len()];
            let y = ly + 18.0 * i as f64 + 14.0;
            let _ = write!(
                svg,
                "<line x1=\"{x1}\" y1=\"{ym}\" x2=\"{x2}\" y2=\"{ym}\" stroke=\"{color}\" \
                 stroke-width=\"3\"/>\n\
                 <text x=\"{tx}\" y=\"{ty}\">{lab}</text>\n",
                x1 = fmt(lx + 8.0),
                x2 = fmt(lx + 30.0),
                ym = fmt(y - 4.0),
                tx = fmt(lx + 36.0),
                ty = fmt(y),
                lab = escape(&s.label),
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_series() -> Vec<Series> {
        vec![
            Series {
                label: "first".into(),
                points: vec![(0.0, 0.1), (1.0, 0.5), (2.0, 0.9)],
            },
            Series {
                label: "second".into(),
                points: vec![(0.0, 0.8), (1.0, 0.4), (2.0, 0.2)],
            },
        ]
    }

    #[test]
    fn chart_is_deterministic_and_contains_each_series() {
        let opts = ChartOptions {
            title: "demo".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            ..Default::default()
        };
        let a = render_chart(&demo_series(), &opts);
        let b = render_chart(&demo_series(), &opts);
        assert_eq!(a, b);
        assert!(a.contains(">first</text>"));
        assert!(a.contains(">second</text>"));
        assert_eq!(a.matches("<path ").count(), 2);
        assert_eq!(a.matches("<circle ").count(), 6);
        assert!(a.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn categorical_axis_writes_one_tick_per_category() {
        let opts = ChartOptions {
            x_categories: Some(vec!["a".into(), "b".into(), "c".into()]),
            lines: false,
            ..Default::default()
        };
        let svg = render_chart(&demo_series(), &opts);
        assert!(svg.contains(">a</text>"));
        assert!(svg.contains(">b</text>"));
        assert!(svg.contains(">c</text>"));
        assert_eq!(svg.matches("<path ").count(), 0);
    }

    #[test]
    fn degenerate_ranges_do_not_produce_nan_coordinates() {
        let flat = vec![Series {
            label: String::new(),
            points: vec![(1.0, 0.5), (1.0, 0.5)],
        }];
        let svg = render_chart(&flat, &ChartOptions::default());
        assert!(!svg.contains("NaN"));
        assert!(!svg.contains("inf"));
    }

    #[test]
    fn labels_are_escaped() {
        let s = vec![Series {
            label: "a<b&c".into(),
            points: vec![(0.0, 0.0), (1.0, 1.0)],
        }];
        let svg = render_chart(&s, &ChartOptions::default());
        assert!(svg.contains("a&lt;b&amp;c"));
    }
}
