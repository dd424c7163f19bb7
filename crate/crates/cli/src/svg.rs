//! QQ and histogram diagnostics as CSV data plus static SVG renderings.
//!
//! The SVG files are self-contained: inline styles only, no scripts, fonts,
//! images or links.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use orthofuse::inference::normal_quantile;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{CliError, Result};

pub const MIN_QQ_POINTS: usize = 10;
const BAND_LEVEL: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct QqPoint {
    pub theoretical: f64,
    pub empirical: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

/// Normal QQ points with pointwise 99% bands.
///
/// The `i`-th order statistic of `n` uniforms is `Beta(i, n − i + 1)`; its
/// quantiles mapped through the normal quantile function give the band.
pub fn qq_points(values: &[f64]) -> Result<Vec<QqPoint>> {
    let n = values.len();
    if n < MIN_QQ_POINTS {
        return Err(CliError::TooFewPoints {
            needed: MIN_QQ_POINTS,
            got: n,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - BAND_LEVEL) / 2.0;
    sorted
        .iter()
        .enumerate()
        .map(|(idx, &empirical)| {
            let i = (idx + 1) as f64;
            let beta = Beta::new(i, n as f64 - i + 1.0).map_err(|e| CliError::Data(e.to_string()))?;
            Ok(QqPoint {
                theoretical: normal_quantile((i - 0.5) / n as f64),
                empirical,
                band_lo: normal_quantile(beta.inverse_cdf(tail)),
                band_hi: normal_quantile(beta.inverse_cdf(1.0 - tail)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram with Sturges' bin count. A constant sample gets a
/// single unit-width bin centred on its value.
pub fn histogram(values: &[f64]) -> Result<Vec<HistBin>> {
    if values.is_empty() {
        return Err(CliError::TooFewPoints { needed: 1, got: 0 });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(vec![HistBin {
            lo: lo - 0.5,
            hi: hi + 0.5,
            count: values.len(),
        }]);
    }
    let bins = (values.len() as f64).log2().ceil() as usize + 1;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count,
        })
        .collect())
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        PAD + (v - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (v - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn open_svg(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, "<title>{title}</title>");
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{xlabel}</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, anchor_x) in [(f.x0, f.x(f.x0)), (f.x1, f.x(f.x1))] {
        let _ = writeln!(
            s,
            r#"<text x="{anchor_x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{v:.3}</text>"#,
            H - PAD + 14.0
        );
    }
    for (v, anchor_y) in [(f.y0, f.y(f.y0)), (f.y1, f.y(f.y1))] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{anchor_y:.2}" font-size="10" text-anchor="end">{v:.3}</text>"#,
            PAD - 4.0
        );
    }
    s
}

pub fn qq_svg(points: &[QqPoint]) -> String {
    let lo = points
        .iter()
        .flat_map(|p| [p.theoretical, p.empirical, p.band_lo])
        .fold(f64::INFINITY, f64::min);
    let hi = points
        .iter()
        .flat_map(|p| [p.theoretical, p.empirical, p.band_hi])
        .fold(f64::NEG_INFINITY, f64::max);
    let f = Frame {
        x0: lo,
        x1: hi,
        y0: lo,
        y1: hi,
    };
    let mut s = open_svg("Normal QQ plot", "theoretical quantile", "empirical quantile", &f);
    let upper: Vec<String> = points.iter().map(|p| format!("{:.2},{:.2}", f.x(p.theoretical), f.y(p.band_hi))).collect();
    let lower: Vec<String> = points.iter().rev().map(|p| format!("{:.2},{:.2}", f.x(p.theoretical), f.y(p.band_lo))).collect();
    let _ = writeln!(
        s,
        r##"<polygon points="{} {}" fill="#cfe0f3" stroke="none"/>"##,
        upper.join(" "),
        lower.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
        f.x(lo),
        f.y(lo),
        f.x(hi),
        f.y(hi)
    );
    for p in points {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2" fill="#1f4e79"/>"##,
            f.x(p.theoretical),
            f.y(p.empirical)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn hist_svg(bins: &[HistBin]) -> String {
    let top = bins.iter().map(|b| b.count).max().unwrap_or(1).max(1) as f64;
    let f = Frame {
        x0: bins.first().map_or(0.0, |b| b.lo),
        x1: bins.last().map_or(1.0, |b| b.hi),
        y0: 0.0,
        y1: top,
    };
    let mut s = open_svg("Histogram of estimates", "estimate", "count", &f);
    for b in bins {
        let (x, y) = (f.x(b.lo), f.y(b.count as f64));
        let _ = writeln!(
            s,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#7fa7d1" stroke="white"/>"##,
            f.x(b.hi) - x,
            f.y(0.0) - y
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn qq_csv(points: &[QqPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["i", "theoretical", "empirical", "band_lo", "band_hi"])?;
    for (i, p) in points.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            p.theoretical.to_string(),
            p.empirical.to_string(),
            p.band_lo.to_string(),
            p.band_hi.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

pub fn hist_csv(bins: &[HistBin]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin", "lo", "hi", "count"])?;
    for (i, b) in bins.iter().enumerate() {
        w.write_record([i.to_string(), b.lo.to_string(), b.hi.to_string(), b.count.to_string()])?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

/// Writes `qq.csv`/`qq.svg` for the standardized values and
/// `hist.csv`/`hist.svg` for the raw estimates.
pub fn emit_svg_diagnostics(standardized: &[f64], estimates: &[f64], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let points = qq_points(standardized)?;
    let bins = histogram(estimates)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let files: [(&str, Vec<u8>); 4] = [
        ("qq.csv", qq_csv(&points)?),
        ("qq.svg", qq_svg(&points).into_bytes()),
        ("hist.csv", hist_csv(&bins)?),
        ("hist.svg", hist_svg(&bins).into_bytes()),
    ];
    files
        .into_iter()
        .map(|(name, bytes)| {
            let path = out_dir.join(name);
            fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
