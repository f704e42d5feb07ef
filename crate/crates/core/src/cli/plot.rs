//! Minimal stacked line charts rendered as SVG.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 160.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
    /// Dashed horizontal reference line, e.g. a threshold.
    pub reference: Option<f64>,
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        if v.is_finite() {
            (lo.min(v), hi.max(v))
        } else {
            (lo, hi)
        }
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(title: &str, panels: &[Panel]) -> String {
    let height = MARGIN + panels.len() as f64 * (PANEL_HEIGHT + MARGIN);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#, escape(title));
    let plot_w = WIDTH - 2.0 * MARGIN;
    for (k, panel) in panels.iter().enumerate() {
        let top = MARGIN + k as f64 * (PANEL_HEIGHT + MARGIN);
        let xs = bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| &p.0)));
        let ys_iter = panel.series.iter().flat_map(|s| s.points.iter().map(|p| &p.1));
        let ys = bounds(ys_iter.chain(panel.reference.iter()));
        let px = |x: f64| MARGIN + (x - xs.0) / (xs.1 - xs.0) * plot_w;
        let py = |y: f64| top + PANEL_HEIGHT - (y - ys.0) / (ys.1 - ys.0) * PANEL_HEIGHT;
        let _ = writeln!(
            svg,
            r##"<rect x="{MARGIN}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{}">{}</text>"#, top - 6.0, escape(&panel.title));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text><text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
            MARGIN - 4.0,
            top + 10.0,
            ys.1,
            MARGIN - 4.0,
            top + PANEL_HEIGHT,
            ys.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN}" y="{}">{:.0}</text><text x="{}" y="{}" text-anchor="end">{:.0}</text>"#,
            top + PANEL_HEIGHT + 14.0,
            xs.0,
            WIDTH - MARGIN,
            top + PANEL_HEIGHT + 14.0,
            xs.1
        );
        if let Some(r) = panel.reference {
            let y = py(r);
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#000" stroke-dasharray="4 3"/>"##,
                WIDTH - MARGIN
            );
        }
        for (i, s) in panel.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                WIDTH - MARGIN - 150.0,
                top + 12.0 + 12.0 * i as f64,
                escape(&s.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_polyline_per_series() {
        let panel = Panel {
            title: "s<1>".into(),
            series: vec![
                Series {
                    label: "actual".into(),
                    points: vec![(0.0, 1.0), (1.0, 2.0)],
                },
                Series {
                    label: "flat".into(),
                    points: vec![(0.0, 3.0), (1.0, 3.0)],
                },
            ],
            reference: Some(2.5),
        };
        let svg = render("t", &[panel]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("s&lt;1&gt;"));
        assert!(svg.contains("stroke-dasharray"));
    }
}
