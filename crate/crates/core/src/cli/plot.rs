//! Minimal SVG line plot of loss, IoU and normalized distance against step.

use std::fmt::Write as _;

use crate::simulator::MetricsLog;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

/// `total_steps` fixes the x-axis to `[0, total_steps]` regardless of how
/// many records the log holds.
pub fn render_svg(log: &MetricsLog, total_steps: usize, title: &str) -> String {
    let x_max = total_steps.max(1) as f64;
    let y_max = log
        .records
        .iter()
        .flat_map(|r| [r.loss, r.iou, r.dist_norm])
        .fold(1.0_f64, f64::max)
        .ceil();
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + pw * x / x_max;
    let sy = |y: f64| TOP + ph * (1.0 - y / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-x-min="0" data-x-max="{total_steps}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" font-size="14" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, escape(title));
    // axes
    let _ = writeln!(
        s,
        r#"<line id="x-axis" x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        sx(0.0),
        sy(0.0),
        sx(x_max),
        sy(0.0)
    );
    let _ = writeln!(
        s,
        r#"<line id="y-axis" x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        sx(0.0),
        sy(0.0),
        sx(0.0),
        sy(y_max)
    );
    for i in 0..=4 {
        let xv = x_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            sx(xv),
            sy(0.0) + 16.0,
            xv.round()
        );
        let yv = y_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            sx(0.0) - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">step</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">value</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    type Field = fn(&crate::simulator::StepRecord) -> f64;
    let series: [(&str, &str, Field); 3] = [
        ("loss", "#1f77b4", |r| r.loss),
        ("iou", "#d62728", |r| r.iou),
        ("dist_norm", "#2ca02c", |r| r.dist_norm),
    ];
    for (k, (name, color, f)) in series.iter().enumerate() {
        let pts: Vec<String> = log
            .records
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.step as f64), sy(f(r))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline id="{name}" fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 20.0 + 20.0 * k as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">{name}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
