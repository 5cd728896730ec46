use std::fmt::Write as _;

use featacq::evaluation::{CostAxis, Curve};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;

/// Static accuracy-versus-cost line plot.
pub fn render(curve: &Curve) -> String {
    let axis = curve.axis();
    let pts: Vec<(f64, f64)> = curve.points().iter().map(|p| (p.cost(axis), p.accuracy)).collect();
    let x_max = match axis {
        CostAxis::Normalized => 1.0,
        CostAxis::Raw => pts.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-12),
    };
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + x / x_max * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - y * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{l} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        l = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )
    .unwrap();
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (x, y) = (sx(f * x_max), sy(f));
        writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            HEIGHT - MARGIN + 16.0,
            f * x_max
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{f:.2}</text>"#,
            MARGIN - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    let x_label = match axis {
        CostAxis::Normalized => "fraction of total cost",
        CostAxis::Raw => "mean cost",
    };
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">accuracy</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .unwrap();
    let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        line.join(" ")
    )
    .unwrap();
    for &(x, y) in &pts {
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            sx(x),
            sy(y)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
