use std::fmt::Write as _;

use super::EpisodeRow;

const BAR_W: f64 = 60.0;
const GAP: f64 = 30.0;
const CHART_H: f64 = 200.0;
const MARGIN: f64 = 50.0;

/// Mean of both safety metrics per policy as two side-by-side bar charts.
pub fn bar_chart_svg(rows: &[EpisodeRow], title: &str) -> String {
    let mut policies: Vec<&str> = Vec::new();
    for r in rows {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
    }
    let mean = |p: &str, f: fn(&EpisodeRow) -> f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.policy == p).map(f).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let panels: [(&str, fn(&EpisodeRow) -> f64); 2] = [
        ("Sum of translations [m]", |r| r.metrics.sum_translations),
        ("Sum of max velocities [m/s]", |r| r.metrics.sum_max_velocities),
    ];
    let panel_w = policies.len() as f64 * (BAR_W + GAP) + GAP;
    let width = 2.0 * panel_w + 3.0 * MARGIN;
    let height = CHART_H + 2.5 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<!-- pilepick-plot v1 -->");
    let _ = writeln!(s, r#"<text x="{}" y="18" font-size="14">{}</text>"#, MARGIN, escape(title));
    for (k, (label, f)) in panels.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (panel_w + MARGIN);
        let y0 = MARGIN;
        let values: Vec<f64> = policies.iter().map(|p| mean(p, *f)).collect();
        let max = values.iter().cloned().fold(0.0, f64::max).max(1e-9);
        let _ = writeln!(s, r#"<text x="{x0}" y="{}">{}</text>"#, y0 - 8.0, escape(label));
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            y0 + CHART_H,
            x0 + panel_w,
            y0 + CHART_H
        );
        for (i, (p, v)) in policies.iter().zip(&values).enumerate() {
            let h = CHART_H * v / max;
            let x = x0 + GAP + i as f64 * (BAR_W + GAP);
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{}" width="{BAR_W}" height="{h}" fill="#4a7ab0"/>"##,
                y0 + CHART_H - h
            );
            let _ = writeln!(s, r#"<text x="{x}" y="{}">{v:.3}</text>"#, y0 + CHART_H - h - 4.0);
            let _ = writeln!(s, r#"<text x="{x}" y="{}">{}</text>"#, y0 + CHART_H + 14.0, escape(p));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::SafetyMetrics;

    fn row(policy: &str, t: f64) -> EpisodeRow {
        EpisodeRow {
            seed: 0,
            policy: policy.into(),
            noise: false,
            metrics: SafetyMetrics { sum_translations: t, sum_max_velocities: 2.0 * t },
            diff_mask_pct: 0.0,
            diff_volume_l: 0.0,
            episode_wall_s: 1.0,
        }
    }

    #[test]
    fn one_bar_per_policy_and_metric() {
        let rows = [row("naive", 0.2), row("naive", 0.4), row("heuristic", 0.1)];
        let svg = bar_chart_svg(&rows, "a < b");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("0.300") && svg.contains("0.600"));
        assert!(svg.contains("a &lt; b"));
    }
}
