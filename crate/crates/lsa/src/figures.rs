//! Native SVG figure rendering: heatmaps, bar charts with error bars,
//! and line charts with confidence bands. No external plotting
//! dependency; output is deterministic for fixed input.

use ndarray::ArrayView2;
use std::fmt::Write;

const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open_svg(width: f64, height: f64, title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        width / 2.0,
        esc(title)
    );
    s
}

/// Blue→white→red diverging color for a value in [0, 1].
fn heat_color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let (r, g, b) = if v < 0.5 {
        let t = v * 2.0;
        (255.0 * t, 255.0 * t, 255.0)
    } else {
        let t = (v - 0.5) * 2.0;
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    };
    format!("rgb({},{},{})", r as u8, g as u8, b as u8)
}

/// Renders a matrix as a cell grid; values are min-max normalized.
pub fn heatmap(data: ArrayView2<f64>, row_labels: &[String], col_labels: &[String], title: &str) -> String {
    let (rows, cols) = data.dim();
    assert_eq!(rows, row_labels.len());
    assert_eq!(cols, col_labels.len());
    let cell = 18.0f64;
    let width = MARGIN_L + cols as f64 * cell + MARGIN_R;
    let height = MARGIN_T + rows as f64 * cell + MARGIN_B;
    let mut svg = open_svg(width, height, title);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in data.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    for i in 0..rows {
        for j in 0..cols {
            let v = (data[[i, j]] - lo) / span;
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"{}\"><title>{}</title></rect>",
                MARGIN_L + j as f64 * cell,
                MARGIN_T + i as f64 * cell,
                heat_color(v),
                format_args!("{} / {}: {:.4}", esc(&row_labels[i]), esc(&col_labels[j]), data[[i, j]])
            );
        }
    }
    for (i, label) in row_labels.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 5.0,
            MARGIN_T + i as f64 * cell + cell * 0.7,
            esc(label)
        );
    }
    for (j, label) in col_labels.iter().enumerate() {
        let x = MARGIN_L + j as f64 * cell + cell * 0.7;
        let y = MARGIN_T + rows as f64 * cell + 8.0;
        let _ = writeln!(
            svg,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"end\" transform=\"rotate(-60 {x:.1} {y:.1})\">{}</text>",
            esc(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// One bar: label, value, optional (lo, hi) error-bar interval.
pub type Bar = (String, f64, Option<(f64, f64)>);

pub fn bar_chart(bars: &[Bar], title: &str, y_label: &str) -> String {
    let plot_h = 260.0;
    let bar_w = 34.0;
    let gap = 18.0;
    let width = MARGIN_L + bars.len() as f64 * (bar_w + gap) + MARGIN_R;
    let height = MARGIN_T + plot_h + MARGIN_B;
    let y_max = bars
        .iter()
        .map(|(_, v, ci)| ci.map(|(_, hi)| hi).unwrap_or(*v).max(*v))
        .fold(1e-9f64, f64::max)
        .max(1.0);
    let y = |v: f64| MARGIN_T + plot_h - (v / y_max) * plot_h;
    let mut svg = open_svg(width, height, title);
    // axis + gridlines
    for tick in 0..=4 {
        let v = y_max * tick as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN_L:.1}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{2:.1}\" y=\"{3:.1}\" text-anchor=\"end\">{v:.2}</text>",
            y(v),
            width - MARGIN_R,
            MARGIN_L - 5.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" transform=\"rotate(-90 16 {:.1})\" text-anchor=\"middle\">{}</text>",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        esc(y_label)
    );
    for (i, (label, value, ci)) in bars.iter().enumerate() {
        let x = MARGIN_L + i as f64 * (bar_w + gap) + gap / 2.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{bar_w:.1}\" height=\"{:.1}\" fill=\"#4878b0\"/>",
            y(*value),
            (value / y_max) * plot_h
        );
        if let Some((lo, hi)) = ci {
            let cx = x + bar_w / 2.0;
            let _ = writeln!(
                svg,
                "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
                 <line x1=\"{:.1}\" y1=\"{2:.1}\" x2=\"{3:.1}\" y2=\"{2:.1}\" stroke=\"black\"/>\n\
                 <line x1=\"{1:.1}\" y1=\"{4:.1}\" x2=\"{3:.1}\" y2=\"{4:.1}\" stroke=\"black\"/>",
                y(*hi),
                cx - 5.0,
                y(*hi),
                cx + 5.0,
                y(*lo)
            );
        }
        let lx = x + bar_w / 2.0;
        let ly = MARGIN_T + plot_h + 14.0;
        let _ = writeln!(
            svg,
            "<text x=\"{lx:.1}\" y=\"{ly:.1}\" text-anchor=\"end\" transform=\"rotate(-40 {lx:.1} {ly:.1})\">{}</text>",
            esc(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone)]
pub struct LineSeries {
    pub name: String,
    /// (x, y) points in drawing order.
    pub points: Vec<(f64, f64)>,
    /// Optional confidence band, one (lo, hi) per point.
    pub band: Option<Vec<(f64, f64)>>,
}

const LINE_COLORS: [&str; 5] = ["#4878b0", "#d65f5f", "#59a257", "#857aab", "#cc9a44"];

pub fn line_chart(series: &[LineSeries], title: &str, x_label: &str, y_label: &str) -> String {
    let plot_w = 420.0;
    let plot_h = 260.0;
    let width = MARGIN_L + plot_w + MARGIN_R + 110.0;
    let height = MARGIN_T + plot_h + MARGIN_B;
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for s in series {
        for (i, &(x, y)) in s.points.iter().enumerate() {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_hi = y_hi.max(y);
            if let Some(band) = &s.band {
                y_lo = y_lo.min(band[i].0);
                y_hi = y_hi.max(band[i].1);
            }
        }
    }
    if !x_hi.is_finite() {
        (x_lo, x_hi) = (0.0, 1.0);
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    y_hi = y_hi.max(y_lo + 1e-9).max(1.0);
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;
    let mut svg = open_svg(width, height, title);
    for tick in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * tick as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN_L:.1}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{2:.1}\" y=\"{3:.1}\" text-anchor=\"end\">{v:.2}</text>",
            py(v),
            MARGIN_L + plot_w,
            MARGIN_L - 5.0,
            py(v) + 4.0
        );
        let xv = x_lo + (x_hi - x_lo) * tick as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{xv:.1}</text>",
            px(xv),
            MARGIN_T + plot_h + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{1:.1}\" transform=\"rotate(-90 16 {1:.1})\" text-anchor=\"middle\">{2}</text>",
        MARGIN_L + plot_w / 2.0,
        MARGIN_T + plot_h / 2.0,
        esc(y_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + plot_w / 2.0,
        MARGIN_T + plot_h + 34.0,
        esc(x_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = LINE_COLORS[k % LINE_COLORS.len()];
        if let Some(band) = &s.band {
            let mut d = String::from("M");
            for (i, &(x, _)) in s.points.iter().enumerate() {
                let _ = write!(d, " {:.1},{:.1}", px(x), py(band[i].1));
            }
            for (i, &(x, _)) in s.points.iter().enumerate().rev() {
                let _ = write!(d, " {:.1},{:.1}", px(x), py(band[i].0));
            }
            let _ = writeln!(svg, "<path d=\"{d} Z\" fill=\"{color}\" opacity=\"0.2\"/>");
        }
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(svg, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>", px(x), py(y));
        }
        let ly = MARGIN_T + 16.0 * (k as f64 + 1.0);
        let lx = MARGIN_L + plot_w + 20.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            esc(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Scatter of labeled 2D points, one color per label (for PCA plots).
pub fn scatter(points: &[(f64, f64, usize)], label_names: &[String], title: &str) -> String {
    let plot_w = 320.0;
    let plot_h = 320.0;
    let width = MARGIN_L + plot_w + MARGIN_R + 110.0;
    let height = MARGIN_T + plot_h + MARGIN_B;
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, _) in points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !(x_hi > x_lo) {
        (x_lo, x_hi) = (x_lo - 1.0, x_lo + 1.0);
    }
    if !(y_hi > y_lo) {
        (y_lo, y_hi) = (y_lo - 1.0, y_lo + 1.0);
    }
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;
    let mut svg = open_svg(width, height, title);
    for &(x, y, label) in points {
        let color = LINE_COLORS[label % LINE_COLORS.len()];
        let _ = writeln!(svg, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{color}\" opacity=\"0.7\"/>", px(x), py(y));
    }
    for (k, name) in label_names.iter().enumerate() {
        let color = LINE_COLORS[k % LINE_COLORS.len()];
        let ly = MARGIN_T + 16.0 * (k as f64 + 1.0);
        let lx = MARGIN_L + plot_w + 20.0;
        let _ = writeln!(
            svg,
            "<circle cx=\"{lx:.1}\" cy=\"{ly:.1}\" r=\"4\" fill=\"{color}\"/>\n<text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            lx + 10.0,
            ly + 4.0,
            esc(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn heatmap_renders_one_rect_per_cell() {
        let data = array![[0.0, 0.5], [1.0, 0.25], [0.75, 0.1]];
        let svg = heatmap(
            data.view(),
            &["r0".into(), "r1".into(), "r2".into()],
            &["c0".into(), "c1".into()],
            "test <heat>",
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.contains("test &lt;heat&gt;"));
    }

    #[test]
    fn bar_chart_draws_error_bars_when_given() {
        let bars: Vec<Bar> = vec![
            ("a".into(), 0.9, Some((0.85, 0.95))),
            ("b".into(), 0.4, None),
        ];
        let svg = bar_chart(&bars, "acc", "accuracy");
        assert_eq!(svg.matches("fill=\"#4878b0\"").count(), 2);
        // 3 lines per error bar + 5 gridlines
        assert_eq!(svg.matches("stroke=\"black\"").count(), 3);
    }

    #[test]
    fn line_chart_bands_and_legend() {
        let series = vec![
            LineSeries {
                name: "seen".into(),
                points: vec![(20.0, 0.8), (200.0, 0.95)],
                band: Some(vec![(0.75, 0.85), (0.92, 0.97)]),
            },
            LineSeries { name: "new".into(), points: vec![(20.0, 0.4), (200.0, 0.9)], band: None },
        ];
        let svg = line_chart(&series, "alphabets", "pool size", "accuracy");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("opacity=\"0.2\"").count(), 1);
        assert!(svg.contains(">seen</text>"));
        assert!(svg.contains(">new</text>"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let bars: Vec<Bar> = vec![("x".into(), 0.5, None)];
        assert_eq!(bar_chart(&bars, "t", "y"), bar_chart(&bars, "t", "y"));
    }

    #[test]
    fn scatter_handles_degenerate_extent() {
        let pts = vec![(1.0, 1.0, 0), (1.0, 1.0, 1)];
        let svg = scatter(&pts, &["a".into(), "b".into()], "pca");
        assert!(svg.contains("<circle"));
    }
}
