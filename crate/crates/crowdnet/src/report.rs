//! Report artifacts: CSV files with reproducibility metadata and the
//! long/short scatter SVG.
//!
//! Every output starts with `#`-prefixed comment lines carrying the tool
//! version, a hash of the run configuration, digests of the input files, and
//! any run notes, so identical runs produce byte-identical files and any
//! artifact can be traced back to its inputs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backtest::{BacktestOutput, Metrics, PeriodReturn};
use crate::graph::CentralityVector;
use crate::portfolio::{Portfolio, QuintileSet, FACTOR_NAMES};
use crate::signal::CrowdingScores;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed report file: {message}")]
    Malformed { path: String, message: String },
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").expect("writing to a String cannot fail");
    }
    s
}

/// Short hex digest of a canonical configuration description.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    hex(&digest)[..16].to_string()
}

/// Canonical `key=value;key=value` serialization of configuration pairs, the
/// form [`config_hash`] is computed over. Callers list pairs in a fixed
/// order so the hash is reproducible from the flags alone.
pub fn canonical_config(pairs: &[(&str, String)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// SHA-256 of a file's bytes (full hex).
pub fn file_digest(path: &Path) -> Result<String, ReportError> {
    let bytes = std::fs::read(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Metadata header written on every artifact.
#[derive(Debug, Clone, Default)]
pub struct ReportMeta {
    pub config_hash: String,
    /// (file name, sha256) of each input.
    pub input_digests: Vec<(String, String)>,
    pub notes: Vec<String>,
}

impl ReportMeta {
    pub fn new(canonical_config: &str) -> Self {
        Self {
            config_hash: config_hash(canonical_config),
            input_digests: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn digest_input(&mut self, path: &Path) -> Result<(), ReportError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        self.input_digests.push((name, file_digest(path)?));
        Ok(())
    }

    pub fn with_notes(mut self, notes: &[String]) -> Self {
        self.notes.extend(notes.iter().cloned());
        self
    }

    fn header(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# tool=crowdnet {TOOL_VERSION}");
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        for (name, digest) in &self.input_digests {
            let _ = writeln!(out, "# input {name}={digest}");
        }
        for note in &self.notes {
            let _ = writeln!(out, "# note {note}");
        }
        out
    }
}

fn write_artifact(path: &Path, meta: &ReportMeta, body: &str) -> Result<(), ReportError> {
    let io_err = |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    file.write_all(meta.header().as_bytes()).map_err(io_err)?;
    file.write_all(body.as_bytes()).map_err(io_err)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_fields(m: &Metrics) -> String {
    format!(
        "{},{},{},{}",
        fmt_opt(m.mean),
        fmt_opt(m.skewness),
        fmt_opt(m.market_correlation),
        fmt_opt(m.quadratic_beta)
    )
}

/// `scores.csv`: one row per (quarter, stock).
pub fn write_scores_csv(
    path: &Path,
    scores: &[&CrowdingScores],
    meta: &ReportMeta,
) -> Result<(), ReportError> {
    let mut body = String::from("as_of_date,kind,stock_id,score\n");
    for s in scores {
        for (stock_id, score) in &s.scores {
            let _ = writeln!(body, "{},{},{},{}", s.as_of_date, s.kind, stock_id, score);
        }
    }
    write_artifact(path, meta, &body)
}

/// `centrality.csv`: per-side centrality values with convergence info.
pub fn write_centrality_csv(
    path: &Path,
    rows: &[(chrono::NaiveDate, crate::graph::Side, &CentralityVector)],
    meta: &ReportMeta,
) -> Result<(), ReportError> {
    let mut body = String::from("as_of_date,side,kind,stock_id,value,converged,iterations\n");
    for (as_of, side, cv) in rows {
        for (stock_id, value) in &cv.values {
            let _ = writeln!(
                body,
                "{as_of},{side},{},{stock_id},{value},{},{}",
                cv.kind, cv.converged, cv.iterations
            );
        }
    }
    write_artifact(path, meta, &body)
}

/// `quintiles.csv`: quintile memberships and weights per quarter.
pub fn write_quintiles_csv(
    path: &Path,
    sets: &[&QuintileSet],
    meta: &ReportMeta,
) -> Result<(), ReportError> {
    let mut body = String::from("construction_date,quintile,stock_id,weight\n");
    for set in sets {
        for q in &set.quintiles {
            for (stock_id, w) in &q.weights {
                let _ = writeln!(body, "{},{},{stock_id},{w}", q.construction_date, q.label);
            }
        }
    }
    write_artifact(path, meta, &body)
}

/// `hedge.csv`: long/short weights per quarter.
pub fn write_hedge_csv(
    path: &Path,
    portfolios: &[&Portfolio],
    meta: &ReportMeta,
) -> Result<(), ReportError> {
    let mut body = String::from("construction_date,stock_id,weight\n");
    for p in portfolios {
        for (stock_id, w) in &p.weights {
            let _ = writeln!(body, "{},{stock_id},{w}", p.construction_date);
        }
    }
    write_artifact(path, meta, &body)
}

/// `metrics.csv`: the metric quadruple per (signal kind, portfolio, horizon).
/// Long/short rows exist for every centrality kind (the signal-comparison
/// table); quintile and benchmark rows for the detail kind.
pub fn write_metrics_csv(
    path: &Path,
    output: &BacktestOutput,
    meta: &ReportMeta,
) -> Result<(), ReportError> {
    let mut body = String::from(
        "signal_kind,portfolio,horizon_months,mean,skewness,market_correlation,quadratic_beta,n_periods\n",
    );
    for ((label, horizon), report) in &output.reports {
        if label == "longshort" {
            continue; // covered by the comparison rows below
        }
        let _ = writeln!(
            body,
            "{},{label},{horizon},{},{}",
            output.detail_kind,
            metrics_fields(&report.metrics),
            report.period_returns.len()
        );
    }
    for row in &output.comparison {
        let _ = writeln!(
            body,
            "{},longshort,{},{},{}",
            row.kind,
            row.horizon_months,
            metrics_fields(&row.metrics),
            row.n_periods
        );
    }
    write_artifact(path, meta, &body)
}

/// `quintile_alpha.csv`: mean and skewness of quintile-minus-benchmark alphas.
pub fn write_quintile_alpha_csv(
    path: &Path,
    output: &BacktestOutput,
    meta: &ReportMeta,
) -> Result<(), ReportError> {
    let mut body = String::from("quintile,horizon_months,mean_alpha,skewness\n");
    for row in &output.quintile_alphas {
        let _ = writeln!(
            body,
            "Q{},{},{},{}",
            row.quintile,
            row.horizon_months,
            fmt_opt(row.mean_alpha),
            fmt_opt(row.skewness)
        );
    }
    write_artifact(path, meta, &body)
}

/// `factor_tilts.csv`: per-quarter quintile tilts relative to the benchmark.
pub fn write_factor_tilts_csv(
    path: &Path,
    output: &BacktestOutput,
    meta: &ReportMeta,
) -> Result<(), ReportError> {
    let mut body = format!("as_of_date,quintile,{}\n", FACTOR_NAMES.join(","));
    for row in &output.factor_tilts {
        let _ = writeln!(
            body,
            "{},Q{},{},{},{},{},{}",
            row.as_of_date,
            row.quintile,
            row.tilts[0],
            row.tilts[1],
            row.tilts[2],
            row.tilts[3],
            row.tilts[4]
        );
    }
    write_artifact(path, meta, &body)
}

/// `ls_scatter.csv`: the long/short vs market scatter plus a fit footer row
/// carrying the quadratic coefficients.
pub fn write_ls_scatter_csv(
    path: &Path,
    output: &BacktestOutput,
    meta: &ReportMeta,
) -> Result<(), ReportError> {
    let mut body = String::from("construction_date,ls_return,market_return\n");
    for p in &output.ls_scatter {
        let _ = writeln!(
            body,
            "{},{},{}",
            p.construction_date, p.portfolio_return, p.market_return
        );
    }
    if let Some((a, b, c)) = output.ls_quad_fit {
        let _ = writeln!(body, "fit,{a},{b},{c}");
    }
    write_artifact(path, meta, &body)
}

/// Scatter points plus the optional quadratic-fit coefficients.
pub type LsScatter = (Vec<PeriodReturn>, Option<(f64, f64, f64)>);

/// Reads an `ls_scatter.csv` back: scatter points and the optional fit row.
pub fn read_ls_scatter_csv(path: &Path) -> Result<LsScatter, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let malformed = |message: String| ReportError::Malformed {
        path: path.display().to_string(),
        message,
    };
    let mut points = Vec::new();
    let mut fit = None;
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() || line.starts_with("construction_date") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(malformed(format!("short row: {line:?}")));
        }
        if fields[0] == "fit" {
            if fields.len() != 4 {
                return Err(malformed("fit row needs 3 coefficients".to_string()));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| malformed(format!("bad coefficient {s:?}")))
            };
            fit = Some((parse(fields[1])?, parse(fields[2])?, parse(fields[3])?));
            continue;
        }
        let construction_date = fields[0]
            .parse()
            .map_err(|_| malformed(format!("bad date {:?}", fields[0])))?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| malformed(format!("bad value {s:?}")))
        };
        points.push(PeriodReturn {
            construction_date,
            portfolio_return: parse(fields[1])?,
            market_return: parse(fields[2])?,
        });
    }
    Ok((points, fit))
}

/// Renders the scatter plus fitted quadratic as a standalone 800×600 SVG.
/// Output is deterministic (fixed-precision coordinates).
pub fn render_scatter_svg(points: &[PeriodReturn], fit: Option<(f64, f64, f64)>) -> String {
    const W: f64 = 800.0;
    const H: f64 = 600.0;
    const MARGIN: f64 = 60.0;

    let xs: Vec<f64> = points.iter().map(|p| p.market_return).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.portfolio_return).collect();
    let span = |vals: &[f64]| -> (f64, f64) {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return (-0.01, 0.01);
        }
        let pad = ((hi - lo).abs()).max(1e-6) * 0.08;
        (lo - pad, hi + pad)
    };
    let (x_lo, x_hi) = span(&xs);
    let (y_lo, y_hi) = span(&ys);
    let to_px = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * MARGIN);
    let to_py = |y: f64| H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    // Axes through zero when zero is inside the range, else along the frame.
    let x_axis_y = if y_lo < 0.0 && y_hi > 0.0 { to_py(0.0) } else { H - MARGIN };
    let y_axis_x = if x_lo < 0.0 && x_hi > 0.0 { to_px(0.0) } else { MARGIN };
    let _ = writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-width="1"/>"#,
        MARGIN, x_axis_y, W - MARGIN, x_axis_y
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-width="1"/>"#,
        y_axis_x, MARGIN, y_axis_x, H - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">market return</text>"#,
        W / 2.0,
        H - 18.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 18 {:.2})">long/short return</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (anchor, x, label) in [
        ("start", MARGIN, x_lo),
        ("end", W - MARGIN, x_hi),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="{anchor}">{label:.4}</text>"#,
            H - MARGIN + 16.0
        );
    }
    for (y, label) in [(H - MARGIN, y_lo), (MARGIN, y_hi)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{y:.2}" font-size="10" text-anchor="end">{label:.4}</text>"#,
            MARGIN - 6.0
        );
    }

    if let Some((a, b, c)) = fit {
        let mut path = String::new();
        for i in 0..=100 {
            let x = x_lo + (x_hi - x_lo) * i as f64 / 100.0;
            let y = (a + b * x + c * x * x).clamp(y_lo, y_hi);
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(path, "{cmd}{:.2} {:.2} ", to_px(x), to_py(y));
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="red" stroke-width="2"/>"#,
            path.trim_end()
        );
    }
    for p in points {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue" fill-opacity="0.7"/>"#,
            to_px(p.market_return),
            to_py(p.portfolio_return)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the scatter SVG next to the other artifacts.
pub fn write_scatter_svg(
    path: &Path,
    points: &[PeriodReturn],
    fit: Option<(f64, f64, f64)>,
) -> Result<(), ReportError> {
    let svg = render_scatter_svg(points, fit);
    std::fs::write(path, svg).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the four backtest report files into `dir`.
pub fn write_backtest_reports(
    dir: &Path,
    output: &BacktestOutput,
    meta: &ReportMeta,
) -> Result<(), ReportError> {
    let meta = meta.clone().with_notes(&output.notes);
    write_metrics_csv(&dir.join("metrics.csv"), output, &meta)?;
    write_quintile_alpha_csv(&dir.join("quintile_alpha.csv"), output, &meta)?;
    write_factor_tilts_csv(&dir.join("factor_tilts.csv"), output, &meta)?;
    write_ls_scatter_csv(&dir.join("ls_scatter.csv"), output, &meta)?;
    Ok(())
}
