//! Standalone grouped-bar SVG with the plotted numbers embedded as a table.

use std::fmt::Write;

/// One cluster of bars; `values[k]` belongs to series `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Axis maximum rounded up to 1, 2 or 5 times a power of ten.
fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let p = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * p).find(|&c| c >= v).unwrap_or(10.0 * p)
}

pub fn grouped_bars(title: &str, series: &[String], groups: &[BarGroup]) -> String {
    let bar_w = 14.0;
    let gap = 24.0;
    let (left, right, top, bottom) = (60.0, 160.0, 40.0, 60.0);
    let plot_h = 300.0;
    let group_w = bar_w * series.len().max(1) as f64 + gap;
    let plot_w = group_w * groups.len().max(1) as f64;
    let width = left + plot_w + right;
    let height = top + plot_h + bottom;
    let max = groups.iter().flat_map(|g| g.values.iter().flatten()).fold(0.0f64, |a, &b| a.max(b));
    let ymax = nice_max(max);
    let y = |v: f64| top + plot_h * (1.0 - v / ymax);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<title>{}</title>", esc(title));
    // the data behind the bars, one CSV line per group
    let _ = writeln!(s, "<metadata id=\"data\"><![CDATA[");
    let _ = writeln!(s, "group,{}", series.join(","));
    for g in groups {
        let vals: Vec<String> = g.values.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()).collect();
        let _ = writeln!(s, "{},{}", g.label, vals.join(","));
    }
    let _ = writeln!(s, "]]></metadata>");
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, esc(title));

    for k in 0..=5 {
        let v = ymax * k as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + plot_w,
            left - 6.0,
            yy + 4.0,
            format_tick(v)
        );
    }
    for (gi, g) in groups.iter().enumerate() {
        let x0 = left + gap / 2.0 + gi as f64 * group_w;
        for (k, v) in g.values.iter().enumerate() {
            let Some(v) = *v else { continue };
            let x = x0 + k as f64 * bar_w;
            let yy = y(v);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{yy:.1}" width="{bar_w}" height="{:.1}" fill="{}"><title>{} / {}: {v:.3}</title></rect>"#,
                top + plot_h - yy,
                PALETTE[k % PALETTE.len()],
                esc(&g.label),
                esc(&series[k])
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + bar_w * series.len() as f64 / 2.0,
            top + plot_h + 16.0,
            esc(&g.label)
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="#333"/><line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333"/>"##,
        top + plot_h,
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    for (k, name) in series.iter().enumerate() {
        let ly = top + 14.0 * k as f64;
        let lx = left + plot_w + 16.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            PALETTE[k % PALETTE.len()],
            lx + 14.0,
            ly + 9.0,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}
