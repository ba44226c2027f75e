//! Minimal SVG charts for reports.

use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Scatter plot coloured by label, with a legend in first-seen label order.
pub fn scatter_svg(coords: &[[f64; 2]], labels: &[String], title: &str) -> String {
    let mut names: Vec<&str> = Vec::new();
    for l in labels {
        if !names.contains(&l.as_str()) {
            names.push(l);
        }
    }
    let (x0, x1) = span(coords.iter().map(|c| c[0]));
    let (y0, y1) = span(coords.iter().map(|c| c[1]));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = header(title);
    for (c, l) in coords.iter().zip(labels) {
        let k = names.iter().position(|n| n == l).unwrap_or(0);
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{}\" fill-opacity=\"0.8\"/>",
            sx(c[0]),
            sy(c[1]),
            PALETTE[k % PALETTE.len()]
        );
    }
    for (k, n) in names.iter().enumerate() {
        let y = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.1}\" cy=\"{y:.1}\" r=\"4\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            WIDTH - 110.0,
            PALETTE[k % PALETTE.len()],
            WIDTH - 100.0,
            y + 4.0,
            escape(n)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Line chart of `values` against categorical `labels`. Missing values
/// break the line.
pub fn line_chart_svg(labels: &[String], values: &[Option<f64>], title: &str, y_label: &str) -> String {
    let (lo, hi) = span(values.iter().flatten().copied().chain([0.0]));
    let n = labels.len().max(1);
    let sx = |i: usize| MARGIN + (i as f64 + 0.5) / n as f64 * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = header(title);
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{b}\" stroke=\"black\"/>",
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for v in [lo, hi] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{v:.3}</text>",
            MARGIN - 4.0,
            sy(v) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.1}\" transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let mut path = String::new();
    for (i, (l, v)) in labels.iter().zip(values).enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            sx(i),
            HEIGHT - MARGIN + 16.0,
            escape(l)
        );
        match v {
            Some(v) => {
                let cmd = if path.is_empty() || path.ends_with('|') { 'M' } else { 'L' };
                let _ = write!(path, "{cmd}{:.2},{:.2} ", sx(i), sy(*v));
                let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"/>", sx(i), sy(*v), PALETTE[0]);
            }
            None => path.push('|'),
        }
    }
    let path = path.replace('|', "");
    if !path.is_empty() {
        let _ = writeln!(svg, "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>", path.trim(), PALETTE[0]);
    }
    svg.push_str("</svg>\n");
    svg
}
