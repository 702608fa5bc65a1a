//! CSV tables and static SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::runner::ExperimentRecord;
use crate::error::{MssError, Result};

pub const CSV_HEADER: &str =
    "trial,mech,k,eps,n,dist,mse,bits_per_user,decode_ms,dra_empirical,dra_analytic,kappa,solver_iters";

/// Writes records as CSV to any writer.
pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(MssError::invalid("no records to write"));
    }
    write_csv(records, fs::File::create(path)?)
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// A numeric record field usable as a chart axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Eps,
    K,
    N,
    Mse,
    Bits,
    DecodeMs,
    DraEmpirical,
    DraAnalytic,
    Kappa,
}

impl Field {
    fn get(self, r: &ExperimentRecord) -> Option<f64> {
        match self {
            Field::Eps => Some(r.eps),
            Field::K => Some(r.k as f64),
            Field::N => Some(r.n as f64),
            Field::Mse => Some(r.mse),
            Field::Bits => Some(r.bits_per_user),
            Field::DecodeMs => r.decode_ms,
            Field::DraEmpirical => r.dra_empirical,
            Field::DraAnalytic => r.dra_analytic,
            Field::Kappa => r.kappa,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Field::Eps => "eps",
            Field::K => "k",
            Field::N => "n",
            Field::Mse => "mse",
            Field::Bits => "bits_per_user",
            Field::DecodeMs => "decode_ms",
            Field::DraEmpirical => "dra_empirical",
            Field::DraAnalytic => "dra_analytic",
            Field::Kappa => "kappa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Mech,
    Dist,
    K,
    MechDist,
}

impl GroupBy {
    fn key(self, r: &ExperimentRecord) -> String {
        match self {
            GroupBy::Mech => r.mech.to_string(),
            GroupBy::Dist => r.dist.clone(),
            GroupBy::K => r.k.to_string(),
            GroupBy::MechDist => format!("{} {}", r.mech, r.dist),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartSpec {
    pub x: Field,
    pub y: Field,
    pub group_by: GroupBy,
    pub log_y: bool,
}

impl ChartSpec {
    /// Mean squared error against ε, one line per mechanism, log scale.
    pub fn mse_vs_eps() -> Self {
        ChartSpec { x: Field::Eps, y: Field::Mse, group_by: GroupBy::Mech, log_y: true }
    }
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

/// Per group, the mean of `y` at each distinct `x`, sorted by `x`.
fn series(records: &[ExperimentRecord], spec: &ChartSpec) -> Result<Series> {
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in records {
        let group = acc.entry(spec.group_by.key(r)).or_default();
        if let (Some(x), Some(y)) = (spec.x.get(r), spec.y.get(r)) {
            if spec.log_y && y <= 0.0 {
                continue;
            }
            let cell = group.entry(x.to_bits()).or_insert((x, 0.0, 0));
            cell.1 += y;
            cell.2 += 1;
        }
    }
    let mut out = Series::new();
    for (name, cells) in acc {
        if cells.is_empty() {
            return Err(MssError::invalid(format!("group '{name}' has no plottable {} values", spec.y.name())));
        }
        let mut pts: Vec<(f64, f64)> = cells.values().map(|&(x, s, c)| (x, s / c as f64)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.insert(name, pts);
    }
    if out.is_empty() {
        return Err(MssError::invalid("no records to plot"));
    }
    Ok(out)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a self-contained SVG line chart.
pub fn render_svg(records: &[ExperimentRecord], spec: &ChartSpec) -> Result<String> {
    let data = series(records, spec)?;
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 150.0, 30.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);

    let ty = |y: f64| if spec.log_y { y.log10() } else { y };
    let xs = data.values().flatten().map(|p| p.0);
    let ys = data.values().flatten().map(|p| ty(p.1));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if x1 - x0 <= 0.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if spec.log_y {
        y0 = y0.floor();
        y1 = y1.ceil().max(y0 + 1.0);
    } else if y1 - y0 <= 0.0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + ph - (ty(y) - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let x = x0 + (x1 - x0) * i as f64 / 5.0;
        let gx = px(x);
        let _ = writeln!(
            s,
            r#"<line x1="{gx:.2}" y1="{:.2}" x2="{gx:.2}" y2="{:.2}" stroke="black"/><text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 20.0,
            fmt_tick(x)
        );
    }
    let y_ticks: Vec<f64> = if spec.log_y {
        (y0 as i32..=y1 as i32).map(|e| 10f64.powi(e)).collect()
    } else {
        (0..=5).map(|i| y0 + (y1 - y0) * i as f64 / 5.0).collect()
    };
    for y in y_ticks {
        let gy = py(y);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{gy:.2}" x2="{left}" y2="{gy:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 5.0,
            left - 8.0,
            gy + 4.0,
            fmt_tick(y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 15.0,
        spec.x.name()
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        spec.y.name(),
        if spec.log_y { " (log)" } else { "" }
    );
    for (i, (name, pts)) in data.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg(records: &[ExperimentRecord], path: &Path, spec: &ChartSpec) -> Result<()> {
    let svg = render_svg(records, spec)?;
    fs::write(path, svg)?;
    Ok(())
}
