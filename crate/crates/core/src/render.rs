//! SVG rendering of per-element fields.
//!
//! Colors interpolate linearly between five stops (blue, light blue, pale
//! yellow, orange, red) over `[lo, hi]`, which defaults to the field's own
//! range. A constant field maps to the middle stop.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

const STOPS: [(u8, u8, u8); 5] = [
    (0x2c, 0x7b, 0xb6),
    (0xab, 0xd9, 0xe9),
    (0xff, 0xff, 0xbf),
    (0xfd, 0xae, 0x61),
    (0xd7, 0x19, 0x1c),
];

const SIZE: f64 = 520.0;
const CENTER: f64 = 260.0;
const SCALE: f64 = 230.0;
const BAR_X: f64 = 540.0;
const BAR_W: f64 = 24.0;
const BAR_STEPS: usize = 40;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderOptions {
    /// Fixed color range; the field's min and max when unset.
    pub range: Option<(f64, f64)>,
    pub title: Option<String>,
}

/// Color for `t ∈ [0, 1]`, clamped.
pub fn colormap(t: f64) -> (u8, u8, u8) {
    let t = if t.is_nan() { 0.5 } else { t.clamp(0.0, 1.0) };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mix = |a: u8, b: u8| (f64::from(a) + f * (f64::from(b) - f64::from(a))).round() as u8;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn hex((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn px(x: f64, y: f64) -> (f64, f64) {
    (CENTER + SCALE * x, CENTER - SCALE * y)
}

pub fn render_svg(mesh: &Mesh, field: &[f64], options: &RenderOptions) -> Result<String> {
    if field.len() != mesh.n_elements() {
        return Err(Error::Domain(format!(
            "field has {} values, mesh has {} elements",
            field.len(),
            mesh.n_elements()
        )));
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("field contains non-finite values".into()));
    }
    let (lo, hi) = options.range.unwrap_or_else(|| {
        field
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    });
    if !(lo <= hi) {
        return Err(Error::Config(format!("color range [{lo}, {hi}] is empty")));
    }
    let t = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };

    let width = BAR_X + BAR_W + 90.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{SIZE:.0}" viewBox="0 0 {width:.0} {SIZE:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(title) = &options.title {
        let escaped = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(s, r#"<text x="{CENTER:.0}" y="18" text-anchor="middle" font-size="14">{escaped}</text>"#);
    }
    let _ = writeln!(s, r#"<g stroke-width="0.3">"#);
    for (e, &v) in field.iter().enumerate() {
        let pts: Vec<String> = mesh
            .vertices(e)
            .iter()
            .map(|p| {
                let (x, y) = px(p[0], p[1]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let c = hex(colormap(t(v)));
        let _ = writeln!(s, r#"<polygon points="{}" fill="{c}" stroke="{c}"/>"#, pts.join(" "));
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g font-size="10" text-anchor="middle">"#);
    for el in &mesh.electrodes {
        let n = &mesh.nodes[el.node];
        let (x, y) = px(n.x, n.y);
        let r = (n.x * n.x + n.y * n.y).sqrt().max(1e-12);
        let (lx, ly) = px(n.x * (1.0 + 0.08 / r), n.y * (1.0 + 0.08 / r));
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="black"/>"#);
        let _ = writeln!(s, r#"<text x="{lx:.2}" y="{:.2}">{}</text>"#, ly + 3.5, el.id);
    }
    let _ = writeln!(s, "</g>");

    let top = 40.0;
    let height = SIZE - 2.0 * top;
    let step = height / BAR_STEPS as f64;
    let _ = writeln!(s, "<g>");
    for k in 0..BAR_STEPS {
        let frac = (k as f64 + 0.5) / BAR_STEPS as f64;
        let y = top + height - (k + 1) as f64 * step;
        let _ = writeln!(
            s,
            r#"<rect x="{BAR_X:.0}" y="{y:.2}" width="{BAR_W:.0}" height="{:.2}" fill="{}"/>"#,
            step + 0.2,
            hex(colormap(if hi > lo { frac } else { 0.5 }))
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{BAR_X:.0}" y="{top:.0}" width="{BAR_W:.0}" height="{height:.0}" fill="none" stroke="black"/>"#
    );
    let lx = BAR_X + BAR_W + 6.0;
    let _ = writeln!(s, r#"<text x="{lx:.0}" y="{:.0}" font-size="12">{hi:.4}</text>"#, top + 4.0);
    let _ = writeln!(s, r#"<text x="{lx:.0}" y="{:.0}" font-size="12">{lo:.4}</text>"#, top + height + 4.0);
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_to_file(mesh: &Mesh, field: &[f64], options: &RenderOptions, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, render_svg(mesh, field, options)?)?;
    Ok(())
}
