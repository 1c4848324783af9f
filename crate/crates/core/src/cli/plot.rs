//! Deterministic SVG rendering of result tables.
//!
//! Fixed 640×400 viewport, text as plain `<text>` elements, numbers printed
//! with three decimals, so the same CSV always gives the same bytes.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Noise,
    Fraction,
    ValueMap,
    Trace,
}

impl PlotKind {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Noise => &["sigma", "mean_success", "std_success"],
            PlotKind::Fraction => &["fraction", "mean_success", "std_success"],
            PlotKind::ValueMap => &["x", "y", "error"],
            PlotKind::Trace => &["t", "q", "latent_dist"],
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(PlotKind::Noise),
            "fraction" => Ok(PlotKind::Fraction),
            "value_map" => Ok(PlotKind::ValueMap),
            "trace" => Ok(PlotKind::Trace),
            _ => Err(Error::param(format!("unknown plot kind `{s}` (noise|fraction|value_map|trace)"))),
        }
    }
}

/// A parsed CSV with a header row. No quoting.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = match lines.next() {
            Some(h) => h.split(',').map(|s| s.trim().to_string()).collect(),
            None => return Err(Error::format(1, "empty results table")),
        };
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let r: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
            if r.len() != header.len() {
                return Err(Error::format(i + 2, format!("expected {} fields, got {}", header.len(), r.len())));
            }
            rows.push(r);
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name).ok_or_else(|| Error::format(1, format!("missing column `{name}`")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| r[c].parse().map_err(|_| Error::format(i + 2, format!("`{}` in `{name}` is not a number", r[c]))))
            .collect()
    }
}

fn check_schema(t: &Table, kind: PlotKind) -> Result<()> {
    let missing: Vec<&str> = kind.columns().iter().copied().filter(|c| t.column(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::format(1, format!("missing columns: {}", missing.join(", "))));
    }
    if t.rows.is_empty() {
        return Err(Error::format(2, "results table has no rows"));
    }
    Ok(())
}

/// Renders `csv` as an SVG of the given kind.
pub fn emit_plot(csv: &str, kind: PlotKind, title: &str) -> Result<String> {
    let t = Table::parse(csv)?;
    check_schema(&t, kind)?;
    match kind {
        PlotKind::Noise => curve(&t, "sigma", "noise", title),
        PlotKind::Fraction => curve(&t, "fraction", "fraction", title),
        PlotKind::ValueMap => heatmap(&t, title),
        PlotKind::Trace => trace(&t, title),
    }
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    top: f64,
    bottom: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        self.bottom - (y - self.y.0) / (self.y.1 - self.y.0) * (self.bottom - self.top)
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            s,
            r##"<path d="M{:.3} {:.3} L{:.3} {:.3} L{:.3} {:.3}" fill="none" stroke="#000000"/>"##,
            MARGIN, self.top, MARGIN, self.bottom, W - MARGIN, self.bottom
        );
        for (v, anchor, x, y) in [
            (self.x.0, "start", MARGIN, self.bottom + 16.0),
            (self.x.1, "end", W - MARGIN, self.bottom + 16.0),
        ] {
            let _ = writeln!(s, r#"<text x="{x:.3}" y="{y:.3}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{v:.3}</text>"#);
        }
        for v in [self.y.0, self.y.1] {
            let _ = writeln!(
                s,
                r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.3}</text>"#,
                MARGIN - 4.0,
                self.py(v) + 4.0
            );
        }
        let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, W / 2.0, self.bottom + 32.0, escape(xlabel));
        let _ = writeln!(s, r#"<text x="14" y="{:.3}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.3})">{}</text>"#, (self.top + self.bottom) / 2.0, (self.top + self.bottom) / 2.0, escape(ylabel));
    }
}

fn polyline(s: &mut String, pts: &[(f64, f64)], color: &str) {
    let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, p.join(" "));
    for (x, y) in pts {
        let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="3" fill="{color}"/>"#);
    }
}

/// Mean success against `xcol` with ±std bars, one line per variant. Rows
/// from other protocols are dropped when a `protocol` column is present.
fn curve(t: &Table, xcol: &str, protocol: &str, title: &str) -> Result<String> {
    let xs = t.floats(xcol)?;
    let ms = t.floats("mean_success")?;
    let sd = t.floats("std_success")?;
    let keep: Vec<usize> = match t.column("protocol") {
        Some(c) => (0..t.rows.len()).filter(|&i| t.rows[i][c] == protocol).collect(),
        None => (0..t.rows.len()).collect(),
    };
    if keep.is_empty() {
        return Err(Error::format(2, format!("no `{protocol}` rows")));
    }
    let vc = t.column("variant");
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for &i in &keep {
        let name = vc.map(|c| t.rows[i][c].clone()).unwrap_or_default();
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => v.push(i),
            None => groups.push((name, vec![i])),
        }
    }
    let kx: Vec<f64> = keep.iter().map(|&i| xs[i]).collect();
    let ky: Vec<f64> = keep.iter().flat_map(|&i| [ms[i] - sd[i], ms[i] + sd[i]]).chain([0.0, 1.0]).collect();
    let f = Frame { x: range(&kx), y: range(&ky), top: 40.0, bottom: H - MARGIN };
    let mut s = open(title);
    f.axes(&mut s, xcol, "success");
    for (gi, (name, rows)) in groups.iter_mut().enumerate() {
        rows.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let color = PALETTE[gi % PALETTE.len()];
        for &i in rows.iter() {
            let _ = writeln!(
                s,
                r#"<line x1="{x:.3}" y1="{:.3}" x2="{x:.3}" y2="{:.3}" stroke="{color}"/>"#,
                f.py(ms[i] - sd[i]),
                f.py(ms[i] + sd[i]),
                x = f.px(xs[i])
            );
        }
        let pts: Vec<(f64, f64)> = rows.iter().map(|&i| (f.px(xs[i]), f.py(ms[i]))).collect();
        polyline(&mut s, &pts, color);
        if !name.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
                W - MARGIN + 4.0,
                f.top + 14.0 * gi as f64 + 10.0,
                escape(name)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Blue (negative) through white (zero) to red (positive).
fn diverging(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (u, u, 1.0)
    } else {
        let u = (1.0 - t) / 0.5;
        (1.0, u, u)
    };
    format!("#{:02x}{:02x}{:02x}", (r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8)
}

fn min_spacing(v: &[f64]) -> f64 {
    let mut u = v.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    u.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// One square per grid point, coloured by `error` on a scale symmetric
/// about zero.
fn heatmap(t: &Table, title: &str) -> Result<String> {
    let xs = t.floats("x")?;
    let ys = t.floats("y")?;
    let es = t.floats("error")?;
    let cell = min_spacing(&xs).min(min_spacing(&ys));
    let cell = if cell.is_finite() { cell } else { 1.0 };
    let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min) - cell / 2.0, xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + cell / 2.0);
    let (y0, y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min) - cell / 2.0, ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) + cell / 2.0);
    let side = (H - 80.0).min(W - 160.0);
    let scale = side / (x1 - x0).max(y1 - y0);
    let emax = es.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let mut s = open(title);
    for i in 0..xs.len() {
        let tcol = if emax > 0.0 { 0.5 + es[i] / (2.0 * emax) } else { 0.5 };
        let _ = writeln!(
            s,
            r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
            MARGIN + (xs[i] - cell / 2.0 - x0) * scale,
            40.0 + (ys[i] - cell / 2.0 - y0) * scale,
            cell * scale,
            cell * scale,
            diverging(tcol)
        );
    }
    let lx = MARGIN + side + 30.0;
    for (k, v) in [(0, emax), (1, 0.0), (2, -emax)] {
        let y = 40.0 + k as f64 * 40.0;
        let tcol = if emax > 0.0 { 0.5 + v / (2.0 * emax) } else { 0.5 };
        let _ = writeln!(s, r##"<rect x="{lx:.3}" y="{y:.3}" width="16" height="16" fill="{}" stroke="#000000"/>"##, diverging(tcol));
        let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11">{v:.3}</text>"#, lx + 22.0, y + 12.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// `Q` (top panel) and latent goal distance (bottom panel) against `t`.
fn trace(t: &Table, title: &str) -> Result<String> {
    let ts = t.floats("t")?;
    let qs = t.floats("q")?;
    let ds = t.floats("latent_dist")?;
    let mut s = open(title);
    let mid = H / 2.0;
    for (vals, label, top, bottom, color) in [(&qs, "Q", 40.0, mid - 20.0, PALETTE[0]), (&ds, "latent distance", mid + 10.0, H - MARGIN, PALETTE[1])] {
        let f = Frame { x: range(&ts), y: range(vals), top, bottom };
        f.axes(&mut s, if top > mid { "t" } else { "" }, label);
        let pts: Vec<(f64, f64)> = ts.iter().zip(vals.iter()).map(|(x, y)| (f.px(*x), f.py(*y))).collect();
        polyline(&mut s, &pts, color);
    }
    s.push_str("</svg>\n");
    Ok(s)
}
