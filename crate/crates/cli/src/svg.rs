//! Minimal static SVG charts.

use std::fmt::Write;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 200.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
}

fn finite_max(values: impl Iterator<Item = f64>) -> f64 {
    values.filter(|v| v.is_finite()).fold(0.0, f64::max)
}

/// One bar chart per panel, sharing the category axis.
pub fn bar_panels(title: &str, categories: &[String], panels: &[(String, Vec<f64>)]) -> String {
    let label_h = 14.0 + 6.0 * categories.iter().map(|c| c.len()).max().unwrap_or(0) as f64;
    let block = PANEL_H + label_h + 24.0;
    let (w, h) = (PANEL_W + 2.0 * MARGIN, 32.0 + block * panels.len() as f64);
    let mut out = String::new();
    header(&mut out, w, h, title);
    let n = categories.len().max(1) as f64;
    let slot = PANEL_W / n;
    for (p, (metric, values)) in panels.iter().enumerate() {
        let top = 32.0 + p as f64 * block + 16.0;
        let base = top + PANEL_H;
        let scale = finite_max(values.iter().copied()).max(1.0);
        let _ = writeln!(out, r#"<text x="{MARGIN}" y="{}" font-weight="bold">{}</text>"#, top - 4.0, escape(metric));
        let _ = writeln!(
            out,
            r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/><line x1="{MARGIN}" y1="{top}" x2="{MARGIN}" y2="{base}" stroke="black"/>"#,
            MARGIN + PANEL_W
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{scale:.2}</text>"#, MARGIN - 4.0, top + 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{base}" text-anchor="end">0</text>"#, MARGIN - 4.0);
        for (i, (cat, v)) in categories.iter().zip(values).enumerate() {
            let x = MARGIN + i as f64 * slot + slot * 0.15;
            let bh = if v.is_finite() { (v / scale).clamp(0.0, 1.0) * PANEL_H } else { 0.0 };
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="{}"><title>{}: {v:.4}</title></rect>"#,
                base - bh,
                slot * 0.7,
                PALETTE[p % PALETTE.len()],
                escape(cat)
            );
            let cx = x + slot * 0.35;
            let _ = writeln!(
                out,
                r#"<text x="{cx:.1}" y="{:.1}" transform="rotate(60 {cx:.1} {:.1})">{}</text>"#,
                base + 12.0,
                base + 12.0,
                escape(cat)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Line chart of several series over a shared x axis.
pub fn line_chart(title: &str, x_label: &str, x: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (PANEL_W + 2.0 * MARGIN + 120.0, PANEL_H * 1.5 + 2.0 * MARGIN);
    let mut out = String::new();
    header(&mut out, w, h, title);
    let (top, base) = (MARGIN, MARGIN + PANEL_H * 1.5);
    let x_min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_max = finite_max(series.iter().flat_map(|(_, v)| v.iter().copied())).max(1e-12);
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/><line x1="{MARGIN}" y1="{top}" x2="{MARGIN}" y2="{base}" stroke="black"/>"#,
        MARGIN + PANEL_W
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{y_max:.3}</text>"#, MARGIN - 4.0, top + 4.0);
    let _ = writeln!(out, r#"<text x="{}" y="{base}" text-anchor="end">0</text>"#, MARGIN - 4.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, MARGIN + PANEL_W / 2.0, base + 30.0, escape(x_label));
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="{}">{x_min}</text>"#, base + 14.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{x_max}</text>"#, MARGIN + PANEL_W, base + 14.0);
    for (k, (name, values)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = x
            .iter()
            .zip(values)
            .filter(|(_, v)| v.is_finite())
            .map(|(xv, v)| {
                let px = MARGIN + (xv - x_min) / x_span * PANEL_W;
                let py = base - (v / y_max).clamp(0.0, 1.0) * (base - top);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let ly = top + 16.0 * k as f64;
        let lx = MARGIN + PANEL_W + 16.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 16.0,
            lx + 20.0,
            ly + 4.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
