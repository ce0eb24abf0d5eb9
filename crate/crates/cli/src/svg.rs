//! Minimal SVG writer: axes, overlaid step histograms and a polyline.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn open(s: &mut String, title: &str, xlabel: &str, ylabel: &str, f: &Frame) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title));
    let (bx, by) = (f.px(f.x0), f.py(f.y0));
    let _ = writeln!(
        s,
        r#"<path d="M{bx:.2},{:.2} L{bx:.2},{by:.2} L{:.2},{by:.2}" stroke="black" fill="none"/>"#,
        f.py(f.y1),
        f.px(f.x1)
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let (xv, yv) = (f.x0 + t * (f.x1 - f.x0), f.y0 + t * (f.y1 - f.y0));
        let (x, y) = (f.px(xv), f.py(yv));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{by:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, by + 4.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, by + 18.0, tick(xv));
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{bx:.2}" y2="{y:.2}" stroke="black"/>"#, bx - 4.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, bx - 6.0, y + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 10.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let t = format!("{v:.3}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.into()
    }
}

fn legend(s: &mut String, names: &[String]) {
    let x = W - RIGHT + 16.0;
    for (k, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * k as f64;
        let c = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/>"#, x + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 26.0, y + 4.0, escape(name));
    }
}

/// Overlaid step histograms over shared bin `edges`; `series[k]` holds bin
/// masses for `names[k]`.
pub fn step_histograms(title: &str, xlabel: &str, edges: &[f64], series: &[Vec<f64>], names: &[String]) -> String {
    let ymax = series.iter().flatten().copied().fold(0.0, f64::max);
    let f = Frame::new(edges[0], edges[edges.len() - 1], 0.0, ymax * 1.05);
    let mut s = String::new();
    open(&mut s, title, xlabel, "fraction of group", &f);
    for (k, masses) in series.iter().enumerate() {
        let mut d = format!("M{:.2},{:.2}", f.px(edges[0]), f.py(0.0));
        for (b, &m) in masses.iter().enumerate() {
            let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", f.px(edges[b]), f.py(m), f.px(edges[b + 1]), f.py(m));
        }
        let _ = write!(d, " L{:.2},{:.2}", f.px(edges[masses.len()]), f.py(0.0));
        let c = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<path d="{d}" stroke="{c}" stroke-width="2" fill="none"/>"#);
    }
    legend(&mut s, names);
    s.push_str("</svg>\n");
    s
}

/// One polyline through `(xs[i], ys[i])`.
pub fn polyline(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], ys: &[f64]) -> String {
    let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f = Frame::new(lo(xs), hi(xs), lo(ys).min(0.5), hi(ys).max(1.0));
    let mut s = String::new();
    open(&mut s, title, xlabel, ylabel, &f);
    let pts: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
    let c = PALETTE[0];
    let _ = writeln!(s, r#"<polyline points="{}" stroke="{c}" stroke-width="2" fill="none"/>"#, pts.join(" "));
    for p in &pts {
        let (x, y) = p.split_once(',').expect("formatted pair");
        let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{c}"/>"#);
    }
    s.push_str("</svg>\n");
    s
}
