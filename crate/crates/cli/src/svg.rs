//! Tiny self-contained SVG line plots for the sweep outputs. This is not a
//! charting library: fixed canvas, linear or log10 axes, one polyline per
//! series, decade or nice-step ticks. Enough to eyeball a convergence slope
//! without pulling in a plotting stack.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 56.0;

pub const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub struct Axes<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub log_y: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Drop points a log axis cannot show and map the rest into plot space.
fn usable(p: (f64, f64), log_x: bool, log_y: bool) -> Option<(f64, f64)> {
    let (x, y) = p;
    if !x.is_finite() || !y.is_finite() {
        return None;
    }
    if (log_x && x <= 0.0) || (log_y && y <= 0.0) {
        return None;
    }
    Some((
        if log_x { x.log10() } else { x },
        if log_y { y.log10() } else { y },
    ))
}

fn fmt_value(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        let mut s = format!("{v:.1e}");
        if let Some(rest) = s.strip_suffix("e0") {
            s = rest.to_string();
        }
        return s;
    }
    let s = format!("{v:.4}");
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

fn tick_text(t: f64, log: bool) -> String {
    if log {
        format!("1e{}", t.round() as i64)
    } else {
        fmt_value(t)
    }
}

/// Tick positions in (possibly log-transformed) plot coordinates.
fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let a = lo.floor() as i64;
        let b = hi.ceil() as i64;
        let span = (b - a).max(1);
        let stride = (span as usize).div_ceil(7).max(1) as i64;
        return (a..=b)
            .step_by(stride as usize)
            .map(|k| k as f64)
            .filter(|&t| t >= lo - 1e-9 && t <= hi + 1e-9)
            .collect();
    }
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|&s| s * mag)
        .find(|&s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = first;
    while t <= hi + 1e-9 * span.abs().max(1.0) {
        out.push(t);
        t += step;
    }
    out
}

/// Render the plot. Series points that a log axis cannot represent are
/// skipped (the polyline breaks there), and an entirely empty plot still
/// renders its frame.
pub fn line_plot(axes: &Axes, series: &[Series]) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &p in &s.points {
            if let Some((x, y)) = usable(p, axes.log_x, axes.log_y) {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    let (mut x_lo, mut x_hi) = bounds(&xs);
    let (mut y_lo, mut y_hi) = bounds(&ys);
    pad(&mut x_lo, &mut x_hi);
    pad(&mut y_lo, &mut y_hi);

    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut out = String::with_capacity(4096);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(axes.title)
    ));

    // grid and tick labels
    for t in ticks(x_lo, x_hi, axes.log_x) {
        let x = px(t);
        out.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>\n",
            MARGIN_T,
            HEIGHT - MARGIN_B
        ));
        out.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            tick_text(t, axes.log_x)
        ));
    }
    for t in ticks(y_lo, y_hi, axes.log_y) {
        let y = py(t);
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
            MARGIN_L,
            WIDTH - MARGIN_R
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 6.0,
            y + 4.0,
            tick_text(t, axes.log_y)
        ));
    }

    // frame and axis labels
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.1}\" height=\"{:.1}\" \
         fill=\"none\" stroke=\"#333333\"/>\n",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        escape(axes.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        escape(axes.y_label)
    ));

    // polylines, broken at unrepresentable points
    for s in series {
        let mut segment: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, out: &mut String| {
            if seg.len() >= 2 {
                out.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                    seg.join(" "),
                    s.color
                ));
            } else if seg.len() == 1 {
                let xy: Vec<&str> = seg[0].split(',').collect();
                out.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{}\"/>\n",
                    xy[0], xy[1], s.color
                ));
            }
            seg.clear();
        };
        for &p in &s.points {
            match usable(p, axes.log_x, axes.log_y) {
                Some((x, y)) => segment.push(format!("{:.1},{:.1}", px(x), py(y))),
                None => flush(&mut segment, &mut out),
            }
        }
        flush(&mut segment, &mut out);
    }

    // legend
    for (i, s) in series.iter().enumerate() {
        let y = MARGIN_T + 14.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN_R - 150.0;
        out.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{}\" \
             stroke-width=\"1.5\"/>\n",
            y - 4.0,
            x + 22.0,
            y - 4.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\">{}</text>\n",
            x + 28.0,
            escape(s.label)
        ));
    }

    out.push_str("</svg>\n");
    out
}

fn bounds(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn pad(lo: &mut f64, hi: &mut f64) {
    if *hi - *lo < 1e-12 {
        *lo -= 0.5;
        *hi += 0.5;
    } else {
        let d = 0.04 * (*hi - *lo);
        *lo -= d;
        *hi += d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_log_log_plot_with_legend() {
        let series = vec![Series {
            label: "median",
            color: PALETTE[0],
            points: vec![(100.0, 1e-1), (1000.0, 3e-2), (10000.0, 1e-2)],
        }];
        let svg = line_plot(
            &Axes {
                title: "decay",
                x_label: "m",
                y_label: "error",
                log_x: true,
                log_y: true,
            },
            &series,
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("median"));
        assert!(svg.contains("1e-1") || svg.contains("1e-2"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn nonpositive_points_break_the_line_on_log_axes() {
        let series = vec![Series {
            label: "s",
            color: PALETTE[1],
            points: vec![(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)],
        }];
        let svg = line_plot(
            &Axes {
                title: "t",
                x_label: "x",
                y_label: "y",
                log_x: false,
                log_y: true,
            },
            &series,
        );
        // two isolated points, no polyline through the zero
        assert!(!svg.contains("polyline"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn empty_input_still_renders_a_frame() {
        let svg = line_plot(
            &Axes {
                title: "empty",
                x_label: "x",
                y_label: "y",
                log_x: false,
                log_y: false,
            },
            &[],
        );
        assert!(svg.contains("<rect"));
    }
}
