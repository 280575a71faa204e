//! Minimal SVG emitters for field heatmaps and line plots.

use std::fmt::Write;

use ndarray::Array2;

/// Perceptually ordered colour ramp sampled at `t ∈ [0, 1]`.
fn ramp(t: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mix = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap of a field, row 0 at the top, with a colour bar spanning `range`
/// (the field's own extent when `None`).
pub fn heatmap(values: &Array2<f64>, title: &str, range: Option<(f64, f64)>) -> String {
    let (h, w) = values.dim();
    let cell = (384.0 / h.max(w) as f64).max(1.0);
    let (lo, hi) = range.unwrap_or_else(|| {
        values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (pw, ph) = (w as f64 * cell, h as f64 * cell);
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">"#,
        pw + 90.0,
        ph + 40.0
    );
    let _ = write!(s, r#"<text x="4" y="16">{}</text><g transform="translate(4,28)" shape-rendering="crispEdges">"#, escape(title));
    for ((i, j), &v) in values.indexed_iter() {
        let (r, g, b) = ramp((v - lo) / span);
        let _ = write!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({r},{g},{b})"/>"#,
            j as f64 * cell,
            i as f64 * cell,
            cell + 0.01,
            cell + 0.01
        );
    }
    for k in 0..32 {
        let (r, g, b) = ramp(1.0 - k as f64 / 31.0);
        let _ = write!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="14" height="{:.2}" fill="rgb({r},{g},{b})"/>"#,
            pw + 12.0,
            k as f64 * ph / 32.0,
            ph / 32.0 + 0.01
        );
    }
    let _ = write!(
        s,
        r#"</g><text x="{x}" y="36">{hi:.3}</text><text x="{x}" y="{yb}">{lo:.3}</text></svg>"#,
        x = pw + 36.0,
        yb = ph + 28.0
    );
    s
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line plot with markers, linear axes fitted to the data.
pub fn line_plot(series: &[Series], title: &str, xlabel: &str, ylabel: &str) -> String {
    let (w, h, l, r, t, b) = (560.0, 360.0, 70.0, 130.0, 30.0, 45.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let py = |y: f64| t + (y1 - y) / (y1 - y0) * (h - t - b);
    let mut s = String::new();
    let _ = write!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = write!(s, r#"<text x="{l}" y="18">{}</text>"#, escape(title));
    let _ = write!(
        s,
        r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        w - l - r,
        h - t - b
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.2}</text>"#, px(fx), h - b + 16.0);
        let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.4}</text>"#, l - 4.0, py(fy) + 4.0);
    }
    let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, l + (w - l - r) / 2.0, h - 8.0, escape(xlabel));
    let _ = write!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        t + (h - t - b) / 2.0,
        t + (h - t - b) / 2.0,
        escape(ylabel)
    );
    for (k, se) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = se.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = write!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        for &(x, y) in &se.points {
            let _ = write!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, px(x), py(y));
        }
        let ly = t + 14.0 + 18.0 * k as f64;
        let _ = write!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            w - r + 10.0,
            w - r + 28.0,
            w - r + 32.0,
            ly + 4.0,
            escape(&se.label)
        );
    }
    s.push_str("</svg>");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let f = Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64);
        let a = heatmap(&f, "speed <m/s>", None);
        assert_eq!(a, heatmap(&f, "speed <m/s>", None));
        assert_eq!(a.matches("<rect").count(), 24 + 32);
        assert!(a.contains("&lt;m/s&gt;") && a.ends_with("</svg>"));
        let p = line_plot(&[Series { label: "B1".into(), points: vec![(-4.0, 1.0), (0.0, 0.5), (4.0, 1.2)] }], "t", "x", "y");
        assert_eq!(p.matches("<circle").count(), 3);
        assert_eq!(ramp(0.0), (68, 1, 84));
        assert_eq!(ramp(1.0), (253, 231, 37));
    }
}
