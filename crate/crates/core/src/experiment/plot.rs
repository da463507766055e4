//! Self-contained SVG plots of aggregate tables: mean MSVE against batch
//! size on log-log axes, with a CI band and error bars per algorithm.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::output::{read_aggregates, AGGREGATES_FILE};
use super::runner::AggregateRecord;
use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
/// Values at or below zero are drawn at this floor on the log axis.
const LOG_FLOOR: f64 = 1e-20;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Axis { lo, hi, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn log(v: f64) -> f64 {
    v.max(LOG_FLOOR).log10()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG document for the rows of one experiment.
pub fn render_svg(experiment: &str, rows: &[AggregateRecord]) -> String {
    let mut series: BTreeMap<&str, Vec<&AggregateRecord>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        if !series.contains_key(r.algorithm.as_str()) {
            order.push(r.algorithm.as_str());
        }
        series.entry(&r.algorithm).or_default().push(r);
    }
    for pts in series.values_mut() {
        pts.sort_by_key(|r| r.batch_size);
    }
    let finite = |v: f64| v.is_finite();
    let ys: Vec<f64> = rows
        .iter()
        .flat_map(|r| [r.mean_msve, r.ci_low, r.ci_high])
        .filter(|v| finite(*v))
        .map(log)
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| (r.batch_size.max(1) as f64).log10()).collect();
    let fold = |v: &[f64]| (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (xlo, xhi) = fold(&xs);
    let (ylo, yhi) = if ys.is_empty() { (0.0, 1.0) } else { fold(&ys) };
    let (ylo, yhi) = (ylo.floor(), yhi.ceil().max(ylo.floor() + 1.0));
    let pad = ((xhi - xlo) * 0.05).max(0.05);
    let xa = Axis::new(xlo - pad, xhi + pad, LEFT, WIDTH - RIGHT);
    let ya = Axis::new(ylo, yhi, HEIGHT - BOTTOM, TOP);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, escape(experiment));
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y1}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for e in (ylo as i64)..=(yhi as i64) {
        let y = ya.map(e as f64);
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#, x0 - 6.0, y + 4.0);
    }
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.batch_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    for n in &sizes {
        let x = xa.map((*n.max(&1) as f64).log10());
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#, y0 + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">batch size (episodes)</text>"#, (x0 + x1) / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">mean MSVE</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    for (k, name) in order.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts = &series[name];
        let px = |r: &AggregateRecord| xa.map((r.batch_size.max(1) as f64).log10());
        let banded: Vec<&&AggregateRecord> = pts.iter().filter(|r| finite(r.ci_low) && finite(r.ci_high)).collect();
        if banded.len() >= 2 {
            let mut poly: Vec<String> = banded.iter().map(|r| format!("{:.2},{:.2}", px(r), ya.map(log(r.ci_high)))).collect();
            poly.extend(banded.iter().rev().map(|r| format!("{:.2},{:.2}", px(r), ya.map(log(r.ci_low)))));
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, poly.join(" "));
        }
        let line: Vec<String> = pts
            .iter()
            .filter(|r| finite(r.mean_msve))
            .map(|r| format!("{:.2},{:.2}", px(r), ya.map(log(r.mean_msve))))
            .collect();
        if line.len() >= 2 {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        }
        for r in pts.iter().filter(|r| finite(r.mean_msve)) {
            let (x, y) = (px(r), ya.map(log(r.mean_msve)));
            if finite(r.ci_low) && finite(r.ci_high) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    ya.map(log(r.ci_low)),
                    ya.map(log(r.ci_high))
                );
            }
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn file_stem(experiment: &str) -> String {
    experiment.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// One SVG per experiment id. An empty table writes nothing.
pub fn emit_plots(rows: &[AggregateRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        log::warn!("aggregate table is empty; no plots written");
        return Ok(Vec::new());
    }
    let mut groups: Vec<(&str, Vec<AggregateRecord>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(e, _)| *e == r.experiment) {
            Some((_, v)) => v.push(r.clone()),
            None => groups.push((&r.experiment, vec![r.clone()])),
        }
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (experiment, rows) in groups {
        let path = dir.join(format!("{}.svg", file_stem(experiment)));
        fs::write(&path, render_svg(experiment, &rows))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads `aggregates.csv` from `dir` and plots it into the same directory.
pub fn plot_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(dir.join(AGGREGATES_FILE))?;
    emit_plots(&read_aggregates(&text)?, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alg: &str, n: usize, m: f64) -> AggregateRecord {
        AggregateRecord {
            experiment: "x".into(),
            algorithm: alg.into(),
            batch_size: n,
            trials: 3,
            mean_msve: m,
            ci_low: m * 0.5,
            ci_high: m * 2.0,
            divergent_count: 0,
        }
    }

    #[test]
    fn single_point_has_error_bar_and_no_line() {
        let svg = render_svg("x", &[row("TD", 5, 1.0)]);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
        assert!(!svg.contains("<polygon"));
        assert!(svg.contains(r##"stroke="#1f77b4"/>"##));
    }

    #[test]
    fn empty_table_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plots(&[], dir.path()).unwrap().is_empty());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn zero_msve_is_floored() {
        let svg = render_svg("x", &[row("PSEC", 1, 1.0), row("PSEC", 10, 0.0)]);
        assert!(svg.contains("1e-20"));
    }

    #[test]
    fn stems_are_file_safe() {
        assert_eq!(file_stem("sweep/p=0.7"), "sweep_p_0.7");
    }
}
