//! Static SVG scatter plots, coloured by label.

use std::collections::BTreeMap;
use std::fmt::Write;

use dlme::{DlmeError, Matrix, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlotStyle {
    pub width: u32,
    pub height: u32,
    pub radius: f64,
    pub title: Option<String>,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle {
            width: 720,
            height: 560,
            radius: 2.0,
            title: None,
        }
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const MARGIN_LEFT: f64 = 60.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const LEGEND_WIDTH: f64 = 110.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Roughly five round-numbered ticks covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Renders a 2-column matrix as an SVG document. Output depends only on the inputs.
pub fn scatter_svg(x: &Matrix, labels: Option<&[i64]>, style: &PlotStyle) -> Result<String> {
    if x.rows() == 0 {
        return Err(DlmeError::Config("nothing to plot: the table has no rows".into()));
    }
    if x.cols() != 2 {
        return Err(DlmeError::Config(format!("expected 2 columns, found {}", x.cols())));
    }
    if !x.is_finite() {
        return Err(DlmeError::Config("coordinates must be finite".into()));
    }
    let classes: BTreeMap<i64, usize> = labels
        .map(|l| {
            let mut set: Vec<i64> = l.to_vec();
            set.sort_unstable();
            set.dedup();
            set.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
        })
        .unwrap_or_default();

    let (w, h) = (style.width as f64, style.height as f64);
    let legend = if classes.is_empty() { 0.0 } else { LEGEND_WIDTH };
    let (px0, px1) = (MARGIN_LEFT, w - 20.0 - legend);
    let (py0, py1) = (MARGIN_TOP, h - MARGIN_BOTTOM);
    if px1 - px0 < 10.0 || py1 - py0 < 10.0 {
        return Err(DlmeError::Config(format!("plot size {}x{} is too small", style.width, style.height)));
    }

    let bounds = |c: usize| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in x.row_iter() {
            lo = lo.min(r[c]);
            hi = hi.max(r[c]);
        }
        let pad = if hi > lo { 0.04 * (hi - lo) } else { 1.0 };
        (lo - pad, hi + pad)
    };
    let (xlo, xhi) = bounds(0);
    let (ylo, yhi) = bounds(1);
    let sx = |v: f64| px0 + (v - xlo) / (xhi - xlo) * (px1 - px0);
    let sy = |v: f64| py1 - (v - ylo) / (yhi - ylo) * (py1 - py0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    if let Some(t) = &style.title {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (px0 + px1) / 2.0,
            escape(t)
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        px1 - px0,
        py1 - py0
    );
    for t in ticks(xlo, xhi) {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#444"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"##,
            sx(t),
            py1,
            py1 + 5.0,
            py1 + 19.0,
            tick_label(t)
        );
    }
    for t in ticks(ylo, yhi) {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="#444"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"##,
            px0,
            sy(t),
            px0 - 5.0,
            px0 - 8.0,
            sy(t) + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">z1</text>"#,
        (px0 + px1) / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">z2</text>"#,
        (py0 + py1) / 2.0
    );

    let _ = writeln!(s, r#"<g stroke="none" fill-opacity="0.8">"#);
    for (i, r) in x.row_iter().enumerate() {
        let color = match labels {
            Some(l) => PALETTE[classes[&l[i]] % PALETTE.len()],
            None => PALETTE[0],
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{}" fill="{color}"/>"#,
            sx(r[0]),
            sy(r[1]),
            style.radius
        );
    }
    s.push_str("</g>\n");

    if !classes.is_empty() {
        let lx = px1 + 20.0;
        let _ = writeln!(s, r#"<g class="legend">"#);
        for (&label, &i) in &classes {
            let y = py0 + 10.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{y:.2}" r="5" fill="{}"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
                lx,
                PALETTE[i % PALETTE.len()],
                lx + 12.0,
                y + 4.0
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(tick_label(-0.0), "0");
        assert_eq!(tick_label(2.5), "2.5");
    }

    #[test]
    fn legend_has_one_entry_per_class() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]]).unwrap();
        let svg = scatter_svg(&x, Some(&[3, 7, 3]), &PlotStyle::default()).unwrap();
        let legend = svg.split(r#"<g class="legend">"#).nth(1).unwrap();
        assert_eq!(legend.matches("<circle").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 5);
    }

    #[test]
    fn empty_input_is_rejected() {
        let x = Matrix::zeros(0, 2);
        assert!(scatter_svg(&x, None, &PlotStyle::default()).is_err());
    }
}
