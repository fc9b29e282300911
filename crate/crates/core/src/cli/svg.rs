use std::fmt::Write;

use crate::evaluation::GridMap;

const CELL_PX: f64 = 24.0;
const MARGIN: f64 = 20.0;

/// Linear blue → yellow ramp over `[0, 1]`.
fn color(v: f64) -> String {
    let t = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(48.0, 253.0),
        lerp(18.0, 231.0),
        lerp(140.0, 37.0)
    )
}

/// Heatmap of a grid map with values in `[0, 1]`; empty bins are drawn
/// light grey. Rows run top to bottom with increasing `y`.
pub fn heatmap(map: &GridMap, title: &str) -> String {
    let w = map.nx as f64 * CELL_PX + 2.0 * MARGIN;
    let h = map.ny as f64 * CELL_PX + 3.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
        MARGIN * 0.75,
        escape(title)
    );
    for cy in 0..map.ny {
        for cx in 0..map.nx {
            let fill = match map.values[cy * map.nx + cx] {
                Some(v) => color(v),
                None => "#e0e0e0".into(),
            };
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL_PX}" height="{CELL_PX}" fill="{fill}" stroke="white" stroke-width="1"/>"#,
                MARGIN + cx as f64 * CELL_PX,
                2.0 * MARGIN + cy as f64 * CELL_PX,
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
