use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named-column table of text cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Dataset {
    pub fn from_csv(text: &str) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(text.as_bytes());
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Dataset { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Invalid(format!("dataset has no column {name:?}")))
    }

    fn numbers(&self, col: usize) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.get(col).and_then(|c| c.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlotKind {
    /// Cells on the distinct `(x, y)` values colored by `value`.
    Heatmap { x: String, y: String, value: String },
    /// Points colored by the category in `color`.
    Scatter { x: String, y: String, color: Option<String> },
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 150.0;
const MT: f64 = 40.0;
const MB: f64 = 60.0;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Deterministic SVG builder with a linear data-to-pixel transform.
#[derive(Debug, Clone)]
pub struct Canvas {
    body: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi > lo {
        let pad = 0.02 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let d = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        (lo - d, hi + d)
    }
}

impl Canvas {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_range: (f64, f64), y_range: (f64, f64)) -> Canvas {
        let x_range = padded(x_range.0, x_range.1);
        let y_range = padded(y_range.0, y_range.1);
        let mut c = Canvas { body: String::new(), x_range, y_range };
        let _ = writeln!(
            c.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#000\"/>",
            num(ML),
            num(MT),
            num(W - ML - MR),
            num(H - MT - MB)
        );
        let _ = writeln!(
            c.body,
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
            num(ML + 0.5 * (W - ML - MR)),
            esc(title)
        );
        let _ = writeln!(
            c.body,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
            num(ML + 0.5 * (W - ML - MR)),
            num(H - 15.0),
            esc(x_label)
        );
        let _ = writeln!(
            c.body,
            "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 {})\">{}</text>",
            num(MT + 0.5 * (H - MT - MB)),
            num(MT + 0.5 * (H - MT - MB)),
            esc(y_label)
        );
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let xv = x_range.0 + t * (x_range.1 - x_range.0);
            let yv = y_range.0 + t * (y_range.1 - y_range.0);
            let (px, _) = c.px(xv, y_range.0);
            let (_, py) = c.px(x_range.0, yv);
            let _ = writeln!(
                c.body,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
                num(px),
                num(H - MB + 16.0),
                tick(xv)
            );
            let _ = writeln!(
                c.body,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>",
                num(ML - 6.0),
                num(py + 4.0),
                tick(yv)
            );
        }
        c
    }

    pub fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        (ML + fx * (W - ML - MR), H - MB - fy * (H - MT - MB))
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], color: &str, width: f64) {
        if pts.is_empty() {
            return;
        }
        let mut d = String::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            let (a, b) = self.px(x, y);
            let _ = write!(d, "{}{} {}", if i == 0 { "M" } else { " L" }, num(a), num(b));
        }
        let _ = writeln!(self.body, "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{}\"/>", num(width));
    }

    pub fn point(&mut self, x: f64, y: f64, color: &str, radius: f64) {
        let (a, b) = self.px(x, y);
        let _ = writeln!(self.body, "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{color}\"/>", num(a), num(b), num(radius));
    }

    /// Cross marker, used for saddles.
    pub fn cross(&mut self, x: f64, y: f64, color: &str) {
        let (a, b) = self.px(x, y);
        let _ = writeln!(
            self.body,
            "<path d=\"M{} {} L{} {} M{} {} L{} {}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            num(a - 5.0),
            num(b - 5.0),
            num(a + 5.0),
            num(b + 5.0),
            num(a - 5.0),
            num(b + 5.0),
            num(a + 5.0),
            num(b - 5.0)
        );
    }

    pub fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, fill: &str) {
        let (a0, b0) = self.px(x0, y0);
        let (a1, b1) = self.px(x1, y1);
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>",
            num(a0.min(a1)),
            num(b0.min(b1)),
            num((a1 - a0).abs()),
            num((b1 - b0).abs())
        );
    }

    pub fn legend(&mut self, entries: &[(String, String)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = MT + 14.0 + 18.0 * i as f64;
            let _ = writeln!(
                self.body,
                "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
                num(W - MR + 10.0),
                num(y - 9.0)
            );
            let _ = writeln!(self.body, "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>", num(W - MR + 25.0), num(y), esc(label));
        }
    }

    /// Centered annotation inside the plot area.
    pub fn note(&mut self, text: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"18\" fill=\"#666\">{}</text>",
            num(ML + 0.5 * (W - ML - MR)),
            num(MT + 0.5 * (H - MT - MB)),
            esc(text)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n{}</svg>\n",
            self.body
        )
    }
}

fn ramp(t: f64) -> String {
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let k = (t.floor() as usize).min(stops.len() - 2);
    let f = t - k as f64;
    let c = |a: f64, b: f64| (a + f * (b - a)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(stops[k].0, stops[k + 1].0), c(stops[k].1, stops[k + 1].1), c(stops[k].2, stops[k + 1].2))
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)))
}

/// Renders `data` as a self-contained SVG.
pub fn emit_svg(data: &Dataset, kind: &PlotKind) -> Result<String> {
    match kind {
        PlotKind::Heatmap { x, y, value } => {
            let (cx, cy, cv) = (data.column(x)?, data.column(y)?, data.column(value)?);
            let (xs, ys, vs) = (data.numbers(cx), data.numbers(cy), data.numbers(cv));
            let mut cells: BTreeMap<(u64, u64), f64> = BTreeMap::new();
            let key = |v: f64| if v == 0.0 { 0u64 } else { v.to_bits() };
            let mut xset = Vec::new();
            let mut yset = Vec::new();
            for i in 0..data.rows.len() {
                if let (Some(a), Some(b)) = (xs[i], ys[i]) {
                    xset.push(a);
                    yset.push(b);
                    if let Some(v) = vs[i] {
                        cells.insert((key(a), key(b)), v);
                    } else {
                        cells.entry((key(a), key(b))).or_insert(f64::NAN);
                    }
                }
            }
            let title = format!("{value} over ({x}, {y})");
            if xset.is_empty() {
                let mut c = Canvas::new(&title, x, y, (0.0, 1.0), (0.0, 1.0));
                c.note("no data");
                return Ok(c.finish());
            }
            let sorted = |mut v: Vec<f64>| {
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            };
            let (xu, yu) = (sorted(xset), sorted(yset));
            let half = |v: &[f64], i: usize| -> (f64, f64) {
                let left = if i > 0 { 0.5 * (v[i] - v[i - 1]) } else if v.len() > 1 { 0.5 * (v[1] - v[0]) } else { 0.5 };
                let right = if i + 1 < v.len() { 0.5 * (v[i + 1] - v[i]) } else { left };
                (v[i] - left, v[i] + right)
            };
            let x_ext = (half(&xu, 0).0, half(&xu, xu.len() - 1).1);
            let y_ext = (half(&yu, 0).0, half(&yu, yu.len() - 1).1);
            let finite: Vec<f64> = cells.values().copied().filter(|v| v.is_finite()).collect();
            let (lo, hi) = range(&finite);
            let mut c = Canvas::new(&title, x, y, x_ext, y_ext);
            for (i, xv) in xu.iter().enumerate() {
                for (j, yv) in yu.iter().enumerate() {
                    let Some(v) = cells.get(&(key(*xv), key(*yv))) else { continue };
                    let fill = if v.is_finite() {
                        ramp(if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
                    } else {
                        "#bbbbbb".into()
                    };
                    let (x0, x1) = half(&xu, i);
                    let (y0, y1) = half(&yu, j);
                    c.rect(x0, y0, x1, y1, &fill);
                }
            }
            if lo.is_finite() {
                c.legend(&[(format!("{value} = {}", tick(lo)), ramp(0.0)), (format!("{value} = {}", tick(hi)), ramp(1.0))]);
            }
            Ok(c.finish())
        }
        PlotKind::Scatter { x, y, color } => {
            let (cx, cy) = (data.column(x)?, data.column(y)?);
            let cc = match color {
                Some(name) => Some(data.column(name)?),
                None => None,
            };
            let (xs, ys) = (data.numbers(cx), data.numbers(cy));
            let pts: Vec<(f64, f64, String)> = (0..data.rows.len())
                .filter_map(|i| {
                    let cat = cc.map(|k| data.rows[i].get(k).cloned().unwrap_or_default()).unwrap_or_default();
                    Some((xs[i]?, ys[i]?, cat))
                })
                .collect();
            let title = format!("{y} against {x}");
            if pts.is_empty() {
                let mut c = Canvas::new(&title, x, y, (0.0, 1.0), (0.0, 1.0));
                c.note("no data");
                return Ok(c.finish());
            }
            let cats: Vec<String> = {
                let mut v: Vec<String> = pts.iter().map(|p| p.2.clone()).collect();
                v.sort();
                v.dedup();
                v
            };
            let colour = |cat: &str| PALETTE[cats.iter().position(|c| c == cat).unwrap_or(0) % PALETTE.len()];
            let xr = range(&pts.iter().map(|p| p.0).collect::<Vec<_>>());
            let yr = range(&pts.iter().map(|p| p.1).collect::<Vec<_>>());
            let mut c = Canvas::new(&title, x, y, xr, yr);
            for (a, b, cat) in &pts {
                c.point(*a, *b, colour(cat), 2.0);
            }
            if color.is_some() {
                let entries: Vec<(String, String)> = cats.iter().map(|k| (k.clone(), colour(k).to_string())).collect();
                c.legend(&entries);
            }
            Ok(c.finish())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_is_annotated() {
        let d = Dataset::from_csv("a,b,c\n").unwrap();
        let svg = emit_svg(&d, &PlotKind::Heatmap { x: "a".into(), y: "b".into(), value: "c".into() }).unwrap();
        assert!(svg.contains("no data") && svg.starts_with("<svg"));
    }

    #[test]
    fn schema_mismatch() {
        let d = Dataset::from_csv("a,b\n1,2\n").unwrap();
        assert!(emit_svg(&d, &PlotKind::Scatter { x: "a".into(), y: "z".into(), color: None }).is_err());
    }

    #[test]
    fn deterministic() {
        let d = Dataset::from_csv("x,y,k\n1,2,a\n2,3,b\n3,1,a\n").unwrap();
        let kind = PlotKind::Scatter { x: "x".into(), y: "y".into(), color: Some("k".into()) };
        assert_eq!(emit_svg(&d, &kind).unwrap(), emit_svg(&d, &kind).unwrap());
    }
}
