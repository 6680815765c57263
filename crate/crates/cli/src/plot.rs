//! CSV and SVG views of per-bin tag proportions.

use std::fmt::Write;

use ambiprune_core::ambiguity::AmbiguityHistogram;
use ambiprune_core::model::{TagFamily, TagLevel};

const FAMILIES: [TagFamily; 2] = [TagFamily::Occlusion, TagFamily::Truncation];
const COLORS: [&str; 4] = ["#4c72b0", "#55a868", "#dd8452", "#c44e52"];

pub fn proportions_csv(hist: &AmbiguityHistogram) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["family", "level", "bin", "lower", "upper", "count", "proportion"])?;
    for family in FAMILIES {
        let dist = hist.family(family);
        for level in TagLevel::ALL {
            for bin in 0..hist.bins() {
                w.write_record([
                    family.as_str().to_owned(),
                    level.to_string(),
                    bin.to_string(),
                    hist.bin_edges[bin].to_string(),
                    hist.bin_edges[bin + 1].to_string(),
                    dist.counts[&level][bin].to_string(),
                    dist.proportions[&level][bin].to_string(),
                ])?;
            }
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Two panels, one per tag family, with one line per level.
pub fn proportions_svg(hist: &AmbiguityHistogram) -> String {
    let (pw, ph, margin) = (360.0, 260.0, 40.0);
    let (plot_w, plot_h) = (pw - 2.0 * margin, ph - 2.0 * margin);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        2.0 * pw,
        ph + 20.0
    );
    for (panel, family) in FAMILIES.into_iter().enumerate() {
        let ox = panel as f64 * pw + margin;
        let oy = margin;
        let dist = hist.family(family);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ox + plot_w / 2.0,
            oy - 12.0,
            family.as_str()
        );
        let _ = writeln!(
            s,
            r##"<rect x="{ox:.1}" y="{oy:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#888"/>"##
        );
        for tick in 0..=4 {
            let v = tick as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
                ox + v * plot_w,
                oy + plot_h + 14.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
                ox - 4.0,
                oy + plot_h - v * plot_h + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">ambiguity</text>"#,
            ox + plot_w / 2.0,
            oy + plot_h + 28.0
        );
        for (k, level) in TagLevel::ALL.into_iter().enumerate() {
            let points: Vec<String> = dist.proportions[&level]
                .iter()
                .enumerate()
                .map(|(b, p)| {
                    let mid = (hist.bin_edges[b] + hist.bin_edges[b + 1]) / 2.0;
                    format!("{:.1},{:.1}", ox + mid * plot_w, oy + plot_h - p * plot_h)
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                COLORS[k],
                points.join(" ")
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{}">{level}</text>"#,
                ox + plot_w + 4.0,
                oy + 12.0 + 14.0 * k as f64,
                COLORS[k]
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
