//! Minimal SVG figures: bar charts, heatmaps and grouped bars.

use std::fmt::Write;

use kobs_core::decomposition::SensitivityReport;
use kobs_core::delayembed::ReconstructionRow;

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];
const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Vertical bars in the given order inside the box `(x, y, w, h)`.
pub fn bar_panel(x: f64, y: f64, w: f64, h: f64, title: &str, labels: &[String], values: &[f64]) -> String {
    let mut s = String::new();
    let top = y + 20.0;
    let plot_h = h - 40.0;
    let max = values.iter().cloned().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let scale = if max > 0.0 { plot_h / max } else { 0.0 };
    let slot = w / values.len().max(1) as f64;
    let _ = writeln!(s, "<text x=\"{x}\" y=\"{}\" {FONT} font-weight=\"bold\">{}</text>", y + 12.0, escape(title));
    let _ = writeln!(
        s,
        "<line x1=\"{x}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>",
        top + plot_h,
        x + w
    );
    for (i, (label, v)) in labels.iter().zip(values).enumerate() {
        let bh = if v.is_finite() { v.max(0.0) * scale } else { 0.0 };
        let bx = x + i as f64 * slot + slot * 0.15;
        let _ = writeln!(
            s,
            "<rect x=\"{bx:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{bh:.2}\" fill=\"{}\"><title>{} = {v:.4}</title></rect>",
            top + plot_h - bh,
            slot * 0.7,
            PALETTE[0],
            escape(label)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"middle\">{}</text>",
            bx + slot * 0.35,
            top + plot_h + 14.0,
            escape(label)
        );
    }
    s
}

/// Cells shaded white to dark blue by value relative to the matrix maximum.
pub fn heatmap_panel(
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    cell: impl Fn(usize, usize) -> f64,
) -> String {
    let mut s = String::new();
    let (rows, cols) = (row_labels.len(), col_labels.len());
    let left = x + 40.0;
    let top = y + 20.0;
    let cw = (w - 40.0) / cols.max(1) as f64;
    let ch = (h - 40.0) / rows.max(1) as f64;
    let mut max = 0.0f64;
    for i in 0..rows {
        for j in 0..cols {
            let v = cell(i, j);
            if v.is_finite() {
                max = max.max(v.abs());
            }
        }
    }
    let _ = writeln!(s, "<text x=\"{x}\" y=\"{}\" {FONT} font-weight=\"bold\">{}</text>", y + 12.0, escape(title));
    for i in 0..rows {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"end\">{}</text>",
            left - 4.0,
            top + (i as f64 + 0.7) * ch,
            escape(&row_labels[i])
        );
        for j in 0..cols {
            let v = cell(i, j);
            let t = if max > 0.0 && v.is_finite() { v.abs() / max } else { 0.0 };
            let shade = |full: f64| (255.0 - t * (255.0 - full)).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"#{:02x}{:02x}{:02x}\"><title>{} {}: {v:.4}</title></rect>",
                left + j as f64 * cw,
                top + i as f64 * ch,
                shade(8.0),
                shade(48.0),
                shade(107.0),
                escape(&row_labels[i]),
                escape(&col_labels[j])
            );
        }
    }
    for (j, label) in col_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"middle\">{}</text>",
            left + (j as f64 + 0.5) * cw,
            top + rows as f64 * ch + 14.0,
            escape(label)
        );
    }
    s
}

/// One row per output: norms in ranking order, then the full gradient matrix.
pub fn sensitivity_svg(reports: &[SensitivityReport]) -> String {
    let (panel_w, panel_h) = (420.0, 260.0);
    let mut body = String::new();
    for (k, r) in reports.iter().enumerate() {
        let y = k as f64 * panel_h;
        let labels: Vec<String> = r.ranking.iter().map(|i| format!("x{}", i + 1)).collect();
        let values: Vec<f64> = r.ranking.iter().map(|&i| r.norms[i]).collect();
        body += &bar_panel(10.0, y + 10.0, panel_w - 20.0, panel_h - 20.0, &format!("y{} state norms", r.output_index + 1), &labels, &values);
        let rows: Vec<String> = (1..=r.s.rows()).map(|i| format!("o{i}")).collect();
        let cols: Vec<String> = (1..=r.s.cols()).map(|j| format!("x{j}")).collect();
        body += &heatmap_panel(
            panel_w + 10.0,
            y + 10.0,
            panel_w - 20.0,
            panel_h - 20.0,
            &format!("y{} max |d psi_o / dx|", r.output_index + 1),
            &rows,
            &cols,
            |i, j| r.s[(i, j)],
        );
    }
    document(2.0 * panel_w, panel_h * reports.len().max(1) as f64, &body)
}

/// Grouped bars of per-state r² (clipped to [0, 1]) with the 0.8 line.
pub fn reconstruction_svg(rows: &[ReconstructionRow], threshold: f64) -> String {
    let mut subsets: Vec<&str> = Vec::new();
    let mut states = 0;
    for r in rows {
        if !subsets.contains(&r.subset.as_str()) {
            subsets.push(&r.subset);
        }
        states = states.max(r.state_index);
    }
    let (w, h, left, top, plot_h) = (120.0 + 70.0 * states as f64, 300.0, 40.0, 30.0, 220.0);
    let slot = (w - left - 20.0) / states.max(1) as f64;
    let bw = slot * 0.8 / subsets.len().max(1) as f64;
    let mut body = String::new();
    let _ = writeln!(body, "<text x=\"{left}\" y=\"18\" {FONT} font-weight=\"bold\">state reconstruction r2 (test)</text>");
    for tick in [0.0, 0.5, 1.0] {
        let ty = top + plot_h * (1.0 - tick);
        let _ = writeln!(body, "<text x=\"{}\" y=\"{:.2}\" {FONT} text-anchor=\"end\">{tick}</text>", left - 4.0, ty + 4.0);
    }
    let _ = writeln!(
        body,
        "<line x1=\"{left}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\" stroke=\"black\"/>",
        top + plot_h,
        w - 20.0
    );
    for r in rows {
        let g = subsets.iter().position(|s| *s == r.subset).unwrap_or(0);
        let v = if r.r2.is_finite() { r.r2.clamp(0.0, 1.0) } else { 0.0 };
        let bx = left + (r.state_index - 1) as f64 * slot + slot * 0.1 + g as f64 * bw;
        let _ = writeln!(
            body,
            "<rect x=\"{bx:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{} x{}: {:.4}</title></rect>",
            top + plot_h * (1.0 - v),
            plot_h * v,
            PALETTE[g % PALETTE.len()],
            escape(&r.subset),
            r.state_index,
            r.r2
        );
    }
    for j in 1..=states {
        let _ = writeln!(
            body,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"middle\">x{j}</text>",
            left + (j as f64 - 0.5) * slot,
            top + plot_h + 14.0
        );
    }
    let ty = top + plot_h * (1.0 - threshold);
    let _ = writeln!(
        body,
        "<line x1=\"{left}\" y1=\"{ty:.2}\" x2=\"{:.2}\" y2=\"{ty:.2}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
        w - 20.0
    );
    for (g, s) in subsets.iter().enumerate() {
        let lx = left + g as f64 * 110.0;
        let _ = writeln!(
            body,
            "<rect x=\"{lx}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" {FONT}>{}</text>",
            h - 22.0,
            PALETTE[g % PALETTE.len()],
            lx + 14.0,
            h - 13.0,
            escape(s)
        );
    }
    document(w, h, &body)
}
