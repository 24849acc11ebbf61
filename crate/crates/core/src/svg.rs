//! Minimal SVG line chart: truth and prediction polylines over a shaded
//! confidence band.

use std::fmt::Write;

use chrono::NaiveDate;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub struct ChartData<'a> {
    pub title: &'a str,
    pub y_label: &'a str,
    pub dates: &'a [NaiveDate],
    pub truth: &'a [f64],
    pub prediction: &'a [f64],
    pub ci_half_width: &'a [f64],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn points(xs: &[f64], ys: &[f64]) -> String {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn line_chart(c: &ChartData) -> String {
    let n = c.truth.len();
    let lo: Vec<f64> = c.prediction.iter().zip(c.ci_half_width).map(|(p, h)| p - h).collect();
    let hi: Vec<f64> = c.prediction.iter().zip(c.ci_half_width).map(|(p, h)| p + h).collect();
    let finite = c.truth.iter().chain(&lo).chain(&hi).copied().filter(|v| v.is_finite());
    let (mut ymin, mut ymax) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !ymin.is_finite() {
        (ymin, ymax) = (0.0, 1.0);
    }
    if ymax - ymin < 1e-12 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let pad = 0.05 * (ymax - ymin);
    let (ymin, ymax) = (ymin - pad, ymax + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |i: usize| LEFT + if n > 1 { plot_w * i as f64 / (n - 1) as f64 } else { plot_w / 2.0 };
    let sy = |v: f64| TOP + plot_h * (ymax - v) / (ymax - ymin);
    let xs: Vec<f64> = (0..n).map(sx).collect();
    let map = |v: &[f64]| v.iter().map(|&y| sy(y)).collect::<Vec<_>>();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(c.title));
    if n > 0 {
        let mut band: Vec<f64> = xs.clone();
        band.extend(xs.iter().rev());
        let mut band_y = map(&hi);
        band_y.extend(map(&lo).into_iter().rev());
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##,
            points(&band, &band_y)
        );
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#222222" stroke-width="1.5"/>"##,
            points(&xs, &map(c.truth))
        );
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="1.5" stroke-dasharray="5,3"/>"##,
            points(&xs, &map(c.prediction))
        );
    }
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = ymin + (ymax - ymin) * k as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, x0 - 6.0, y + 4.0);
    }
    if let (Some(first), Some(last)) = (c.dates.first(), c.dates.last()) {
        let _ = writeln!(s, r#"<text x="{x0}" y="{}" text-anchor="start">{first}</text>"#, y1 + 18.0);
        let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="end">{last}</text>"#, y1 + 18.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(c.y_label)
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" text-anchor="end"><tspan fill="#222222">truth</tspan> <tspan fill="#d62728">prediction</tspan> <tspan fill="#3182bd">95% CI</tspan></text>"##,
        x1,
        HEIGHT - 8.0
    );
    s.push_str("</svg>\n");
    s
}
