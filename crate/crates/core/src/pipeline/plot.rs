//! Minimal deterministic SVG charts: line charts, bar histograms and
//! heatmaps. Coordinates are printed with fixed precision so output is
//! byte-stable.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn header(out: &mut String, width: f64, height: f64, title: &str, comment: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    if !comment.is_empty() {
        let _ = writeln!(out, "<!-- {} -->", comment.replace("--", "- -"));
    }
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        width / 2.0,
        escape(title)
    );
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let _ = writeln!(
            out,
            "<rect x=\"{LEFT:.1}\" y=\"{TOP:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>",
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
        for k in 0..=4 {
            let fx = self.x0 + (self.x1 - self.x0) * k as f64 / 4.0;
            let fy = self.y0 + (self.y1 - self.y0) * k as f64 / 4.0;
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                self.px(fx),
                H - BOTTOM + 16.0,
                tick(fx)
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                LEFT - 6.0,
                self.py(fy) + 4.0,
                tick(fy)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            LEFT + (W - LEFT - RIGHT) / 2.0,
            H - 14.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
            TOP + (H - TOP - BOTTOM) / 2.0,
            TOP + (H - TOP - BOTTOM) / 2.0,
            escape(y_label)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 8.0 + 18.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{color}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            W - RIGHT + 12.0,
            y,
            W - RIGHT + 30.0,
            y + 10.0,
            escape(name)
        );
    }
}

/// Line chart of one or more series sharing axes.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], comment: &str) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = bounds(all().map(|p| p.0));
    let (mut y0, y1) = bounds(all().map(|p| p.1));
    y0 = y0.min(0.0);
    let frame = Frame { x0, x1, y0, y1 };
    let mut out = String::new();
    header(&mut out, W, H, title, comment);
    frame.axes(&mut out, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            path.join(" ")
        );
    }
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Grouped bar chart: `groups` share the x categories given by bin starts.
pub fn histogram_chart(title: &str, x_label: &str, bin_width: f64, groups: &[Series], comment: &str) -> String {
    let all = || groups.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = bounds(all().map(|p| p.0));
    let (_, y1) = bounds(all().map(|p| p.1));
    let frame = Frame {
        x0,
        x1: x1 + bin_width,
        y0: 0.0,
        y1: y1.max(1.0),
    };
    let mut out = String::new();
    header(&mut out, W, H, title, comment);
    frame.axes(&mut out, x_label, "samples");
    let n = groups.len().max(1) as f64;
    for (i, g) in groups.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for &(x, y) in &g.points {
            let left = frame.px(x + bin_width * i as f64 / n);
            let right = frame.px(x + bin_width * (i as f64 + 1.0) / n);
            let top = frame.py(y);
            let _ = writeln!(
                out,
                "<rect x=\"{left:.1}\" y=\"{top:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\"/>",
                (right - left - 1.0).max(0.5),
                frame.py(0.0) - top
            );
        }
    }
    let names: Vec<&str> = groups.iter().map(|s| s.name.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Heatmap of a square matrix in [-1, 1]; absent cells are grey.
pub fn heatmap(title: &str, labels: &[String], values: &[Vec<Option<f64>>], comment: &str) -> String {
    let n = labels.len().max(1);
    let cell = 48.0;
    let left = 140.0;
    let top = 48.0;
    let width = left + cell * n as f64 + 20.0;
    let height = top + cell * n as f64 + 20.0;
    let mut out = String::new();
    header(&mut out, width, height, title, comment);
    for (i, row) in values.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            left - 6.0,
            top + cell * (i as f64 + 0.5) + 4.0,
            escape(&labels[i])
        );
        for (j, v) in row.iter().enumerate() {
            let (fill, text) = match v {
                Some(v) => {
                    let t = v.clamp(-1.0, 1.0);
                    let (r, g, b) = if t >= 0.0 {
                        (255.0 - 200.0 * t, 255.0 - 130.0 * t, 255.0)
                    } else {
                        (255.0, 255.0 + 200.0 * t, 255.0 + 200.0 * t)
                    };
                    (format!("rgb({:.0},{:.0},{:.0})", r, g, b), format!("{v:.2}"))
                }
                None => ("#cccccc".to_string(), "n/a".to_string()),
            };
            let x = left + cell * j as f64;
            let y = top + cell * i as f64;
            let _ = writeln!(
                out,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"{fill}\" stroke=\"white\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{text}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
