//! Minimal self-contained SVG charts.

use pcmi_core::experiments::analysis::FiveNumber;
use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Scale {
    lo: f64,
    hi: f64,
}

impl Scale {
    fn over(values: impl Iterator<Item = f64>) -> Self {
        let (lo, hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi > lo {
            Self { lo, hi }
        } else {
            Self { lo: lo - 1.0, hi: hi + 1.0 }
        }
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.lo) / (self.hi - self.lo) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn frame(out: &mut String, title: &str, scale: &Scale) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, x1) = (MARGIN, WIDTH - MARGIN);
    let zero = scale.y(0.0);
    let _ = writeln!(out, r##"<line x1="{x0}" y1="{zero:.2}" x2="{x1}" y2="{zero:.2}" stroke="#999" stroke-dasharray="4 3"/>"##);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{MARGIN}" x2="{x0}" y2="{}" stroke="black"/>"#, HEIGHT - MARGIN);
    for v in [scale.lo, scale.hi] {
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, x0 - 4.0, scale.y(v) + 4.0);
    }
}

/// One polyline per named series over token positions.
pub fn token_chart(title: &str, tokens: &[String], series: &[(&str, &[f64])]) -> String {
    let scale = Scale::over(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut out = String::new();
    frame(&mut out, title, &scale);
    let n = tokens.len().max(1);
    let step = (WIDTH - 2.0 * MARGIN) / n as f64;
    let x = |i: usize| MARGIN + step * (i as f64 + 0.5);
    for (i, token) in tokens.iter().enumerate() {
        let (tx, ty) = (x(i), HEIGHT - MARGIN + 12.0);
        let _ = writeln!(
            out,
            r#"<text x="{tx:.2}" y="{ty}" text-anchor="end" transform="rotate(-45 {tx:.2} {ty})">{}</text>"#,
            escape(token)
        );
    }
    for (s, (name, values)) in series.iter().enumerate() {
        let color = COLORS[s % COLORS.len()];
        let points: Vec<String> = values.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", x(i), scale.y(*v))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let ly = MARGIN + 14.0 * s as f64;
        let _ = writeln!(out, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, WIDTH - MARGIN - 80.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

/// Box-and-whisker chart, one box per group.
pub fn box_chart(title: &str, groups: &[(String, FiveNumber)]) -> String {
    let scale = Scale::over(groups.iter().flat_map(|(_, f)| [f.min, f.max]));
    let mut out = String::new();
    frame(&mut out, title, &scale);
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len().max(1) as f64;
    for (i, (name, f)) in groups.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let half = (slot * 0.25).min(40.0);
        let color = COLORS[i % COLORS.len()];
        let (ymin, yq1, ymed, yq3, ymax) = (scale.y(f.min), scale.y(f.q1), scale.y(f.median), scale.y(f.q3), scale.y(f.max));
        let _ = writeln!(out, r#"<line x1="{cx:.2}" y1="{ymin:.2}" x2="{cx:.2}" y2="{ymax:.2}" stroke="{color}"/>"#);
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{yq3:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="{color}"/>"#,
            cx - half,
            2.0 * half,
            (yq1 - yq3).max(0.5)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{ymed:.2}" x2="{:.2}" y2="{ymed:.2}" stroke="{color}" stroke-width="2"/>"#,
            cx - half,
            cx + half
        );
        let _ = writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, HEIGHT - MARGIN + 16.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let tokens = vec!["a<b".to_string(), "c".to_string()];
        let svg = token_chart("t", &tokens, &[("pmi", &[1.0, -2.0]), ("pcmi_h", &[0.5, 0.5])]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 2);

        let f = FiveNumber::of([1.0, 2.0, 3.0, 4.0]).unwrap();
        let svg = box_chart("b", &[("ALL".into(), f), ("FUSED".into(), f)]);
        assert_eq!(svg.matches("<rect").count(), 3);
    }
}
