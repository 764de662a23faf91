//! Minimal static SVG plots rendered straight from CSV text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// One polyline per distinct value of `series`, in order of appearance.
    Line { x: String, y: String, series: String },
    /// Markers per series, drawn in ascending `x`.
    Scatter { x: String, y: String, series: String },
    /// Cells at `(x, y)` coloured by `z` on a min..max scale.
    Heatmap { x: String, y: String, z: String },
}

impl PlotKind {
    pub fn line(x: &str, y: &str, series: &str) -> Self {
        Self::Line { x: x.into(), y: y.into(), series: series.into() }
    }

    pub fn scatter(x: &str, y: &str, series: &str) -> Self {
        Self::Scatter { x: x.into(), y: y.into(), series: series.into() }
    }

    pub fn heatmap(x: &str, y: &str, z: &str) -> Self {
        Self::Heatmap { x: x.into(), y: y.into(), z: z.into() }
    }

    fn columns(&self) -> [&str; 3] {
        match self {
            Self::Line { x, y, series } | Self::Scatter { x, y, series } => [x, y, series],
            Self::Heatmap { x, y, z } => [x, y, z],
        }
    }
}

struct Table {
    cols: Vec<Vec<String>>,
}

fn read(csv_text: &str, kind: &PlotKind) -> Result<Table> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let header = rdr.headers()?.clone();
    let idx: Vec<usize> = kind
        .columns()
        .iter()
        .map(|c| header.iter().position(|h| h == *c).ok_or_else(|| anyhow!("missing column `{c}`")))
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); 3];
    for rec in rdr.records() {
        let rec = rec?;
        for (k, &i) in idx.iter().enumerate() {
            cols[k].push(rec.get(i).unwrap_or("").to_string());
        }
    }
    Ok(Table { cols })
}

fn num(s: &str, col: &str) -> Result<f64> {
    s.parse::<f64>().with_context(|| format!("column `{col}`: `{s}` is not a number"))
}

/// Value range padded when degenerate; `(0, 1)` when there is no data.
fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

fn axes(out: &mut String, f: &Frame, xl: &str, yl: &str) {
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    for (v, anchor_x) in [(f.x.0, l), (f.x.1, r)] {
        let _ = writeln!(out, r#"<text x="{anchor_x}" y="{}" font-size="11" text-anchor="middle">{}</text>"#, b + 16.0, fmt(v));
    }
    for (v, anchor_y) in [(f.y.0, b), (f.y.1, t)] {
        let _ = writeln!(out, r#"<text x="{}" y="{anchor_y}" font-size="11" text-anchor="end">{}</text>"#, l - 4.0, fmt(v));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, esc(xl));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(yl)
    );
}

fn fmt(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.3e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(out: &mut String, names: &[&String]) {
    for (i, n) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, W - MARGIN + 4.0, y - 9.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y}" font-size="10">{}</text>"#, W - MARGIN + 17.0, esc(n));
    }
}

/// Render `csv_text` as an SVG document.
pub fn emit_svg(csv_text: &str, kind: &PlotKind) -> Result<String> {
    let t = read(csv_text, kind)?;
    let [xc, yc, third] = kind.columns();
    let xs: Vec<f64> = t.cols[0].iter().map(|s| num(s, xc)).collect::<Result<_>>()?;
    let ys: Vec<f64> = t.cols[1].iter().map(|s| num(s, yc)).collect::<Result<_>>()?;
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    match kind {
        PlotKind::Line { .. } | PlotKind::Scatter { .. } => {
            let f = Frame { x: range(xs.iter().copied()), y: range(ys.iter().copied()) };
            axes(&mut out, &f, xc, yc);
            let mut groups: BTreeMap<usize, (String, Vec<(f64, f64)>)> = BTreeMap::new();
            let mut order: Vec<String> = Vec::new();
            for (i, s) in t.cols[2].iter().enumerate() {
                let g = match order.iter().position(|o| o == s) {
                    Some(g) => g,
                    None => {
                        order.push(s.clone());
                        order.len() - 1
                    }
                };
                groups.entry(g).or_insert_with(|| (s.clone(), Vec::new())).1.push((xs[i], ys[i]));
            }
            for (g, (_, pts)) in groups.iter_mut() {
                let c = PALETTE[g % PALETTE.len()];
                let pts: Vec<&(f64, f64)> = pts.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
                if matches!(kind, PlotKind::Scatter { .. }) {
                    let mut sorted = pts.clone();
                    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                    for p in sorted {
                        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, f.px(p.0), f.py(p.1));
                    }
                } else if !pts.is_empty() {
                    let d: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1))).collect();
                    let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, d.join(" "));
                }
            }
            let names: Vec<&String> = groups.values().map(|g| &g.0).collect();
            legend(&mut out, &names);
        }
        PlotKind::Heatmap { .. } => {
            let zs: Vec<f64> = t.cols[2].iter().map(|s| num(s, third)).collect::<Result<_>>()?;
            let ux = distinct(&xs);
            let uy = distinct(&ys);
            let (zlo, zhi) = range(zs.iter().copied());
            let f = Frame { x: range(ux.iter().copied()), y: range(uy.iter().copied()) };
            axes(&mut out, &f, xc, yc);
            let cw = (W - 2.0 * MARGIN) / ux.len().max(1) as f64;
            let ch = (H - 2.0 * MARGIN) / uy.len().max(1) as f64;
            for i in 0..zs.len() {
                let ix = ux.partition_point(|v| *v < xs[i]);
                let iy = uy.partition_point(|v| *v < ys[i]);
                let colour = if zs[i].is_finite() { ramp((zs[i] - zlo) / (zhi - zlo)) } else { "#000000".into() };
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{colour}"/>"#,
                    MARGIN + ix as f64 * cw,
                    H - MARGIN - (iy + 1) as f64 * ch,
                    cw + 0.05,
                    ch + 0.05
                );
            }
            let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10">{}: {} .. {}</text>"#, MARGIN, MARGIN - 8.0, esc(third), fmt(zlo), fmt(zhi));
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn distinct(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    u.sort_by(f64::total_cmp);
    u.dedup();
    u
}

/// Blue (0) to yellow (1).
pub fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = (68.0 + t * (253.0 - 68.0), 1.0 + t * (231.0 - 1.0), 84.0 + t * (37.0 - 84.0));
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Fail unless every named column is present in the header.
pub fn require_columns(csv_text: &str, cols: &[&str]) -> Result<()> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let header = rdr.headers()?;
    for c in cols {
        if !header.iter().any(|h| h == *c) {
            bail!("missing column `{c}`");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_rows_give_axes_only() {
        let s = emit_svg("episode,moving_avg,algorithm\n", &PlotKind::line("episode", "moving_avg", "algorithm")).unwrap();
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("<path"));
        assert!(!s.contains("<polyline") && !s.contains("<circle"));
    }

    #[test]
    fn missing_column_is_named() {
        let e = emit_svg("a,b\n1,2\n", &PlotKind::scatter("cost", "b", "a")).unwrap_err();
        assert!(e.to_string().contains("`cost`"));
    }

    #[test]
    fn scatter_orders_by_cost() {
        let csv = "cost,latency,algorithm\n3,1,m\n1,3,m\n2,2,m\n";
        let s = emit_svg(csv, &PlotKind::scatter("cost", "latency", "algorithm")).unwrap();
        let cx: Vec<f64> = s
            .lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| l.split('"').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(cx.len(), 3);
        assert!(cx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn heatmap_scale_spans_the_data() {
        let csv = "x,y,peb\n0,0,1\n1,0,2\n0,1,3\n1,1,5\n";
        let s = emit_svg(csv, &PlotKind::heatmap("x", "y", "peb")).unwrap();
        assert!(s.contains(&ramp(0.0)) && s.contains(&ramp(1.0)));
        assert!(s.contains("peb: 1.000 .. 5.000"));
        assert_eq!(s.matches("<rect x=").count(), 4);
    }
}
