//! Self-contained SVG charts derived from metrics tables.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// (epsilon, coverage) pairs in grid order.
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, comments: &[String], title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    for c in comments {
        // "--" is not allowed inside XML comments.
        let _ = writeln!(out, "<!-- {} -->", c.replace("--", "- -"));
    }
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + x / self.x_max * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - y / self.y_max * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str, x_ticks: bool) {
        let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
        let (x1, y1) = (WIDTH - RIGHT, TOP);
        let _ = writeln!(
            out,
            r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
        );
        for i in 0..=5 {
            let v = self.y_max * i as f64 / 5.0;
            let y = self.py(v);
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0
            );
        }
        if x_ticks {
            for i in 0..=5 {
                let v = self.x_max * i as f64 / 5.0;
                let x = self.px(v);
                let _ = writeln!(
                    out,
                    r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{v:.2}</text>"#,
                    y0 + 4.0,
                    y0 + 18.0
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 14.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }
}

fn legend(out: &mut String, index: usize, name: &str, color: &str, dashed: bool) {
    let x = WIDTH - RIGHT + 12.0;
    let y = TOP + 10.0 + 18.0 * index as f64;
    let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
        x + 22.0,
        x + 28.0,
        y + 4.0,
        escape(name)
    );
}

/// Coverage against ε with one polyline per series and the dashed `1 − ε`
/// reference line.
pub fn coverage_chart(series: &[Series], title: &str, comments: &[String]) -> String {
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let frame = Frame { x_max, y_max: 1.0 };
    let mut out = String::new();
    header(&mut out, comments, title);
    frame.axes(&mut out, "significance level ε", "marginal coverage", true);

    let reference = format!(
        "{:.2},{:.2} {:.2},{:.2}",
        frame.px(0.0),
        frame.py(1.0),
        frame.px(x_max),
        frame.py(1.0 - x_max)
    );
    let _ = writeln!(
        out,
        r##"<polyline class="reference" points="{reference}" fill="none" stroke="#444" stroke-width="1.5" stroke-dasharray="6 4"/>"##
    );
    legend(&mut out, 0, "1 − ε", "#444", true);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        legend(&mut out, i + 1, &s.name, color, false);
    }
    out.push_str("</svg>\n");
    out
}

/// One bar per named value, scaled to `[0, 1]`.
pub fn bar_chart(bars: &[(String, f64)], title: &str, y_label: &str, comments: &[String]) -> String {
    let frame = Frame {
        x_max: bars.len().max(1) as f64,
        y_max: 1.0,
    };
    let mut out = String::new();
    header(&mut out, comments, title);
    frame.axes(&mut out, "", y_label, false);
    let slot = frame.px(1.0) - frame.px(0.0);
    for (i, (name, value)) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x = frame.px(i as f64) + slot * 0.15;
        let y = frame.py(value.clamp(0.0, 1.0));
        let h = frame.py(0.0) - y;
        let _ = writeln!(
            out,
            r#"<rect class="bar" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{h:.2}" fill="{color}"/>"#,
            slot * 0.7
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{value:.3}</text>"#,
            x + slot * 0.35,
            y - 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            HEIGHT - BOTTOM + 18.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
