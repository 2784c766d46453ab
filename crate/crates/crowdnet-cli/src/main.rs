//! `crowdnet` — holdings-graph crowding pipeline.
//!
//! Subcommands mirror the pipeline stages so intermediate artifacts are
//! inspectable files: `synth` generates seeded data, `score` writes crowding
//! scores, `quintiles` and `hedge` write portfolios, `backtest` writes the
//! four report CSVs, and `report` summarizes them and renders the scatter
//! SVG. Every output carries `#` metadata lines (tool version, config hash,
//! input digests). Exit codes: 0 success, 1 data/validation error, 2 usage
//! error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crowdnet::backtest::{build_schedule, run_backtest, BacktestConfig};
use crowdnet::graph::{CentralityKind, EigenSettings, Side};
use crowdnet::ingest::{
    add_months_clamped, load_quarters, load_returns, validate_universe, DataDir,
    HoldingsSnapshot, ReturnsPanel, UniverseSource,
};
use crowdnet::portfolio::{build_longshort, quintile_portfolios, Portfolio, QuintileSet};
use crowdnet::report::{
    canonical_config, read_ls_scatter_csv, write_backtest_reports, write_centrality_csv,
    write_hedge_csv, write_quintiles_csv, write_scatter_svg, write_scores_csv, ReportMeta,
};
use crowdnet::signal::{score_pipeline_detailed, score_quarters, CrowdingScores};
use crowdnet::synth::{generate, write_dataset, SynthConfig};

/// Parallelism cap; 0 or unset picks the rayon default.
const THREADS_ENV: &str = "CROWDNET_THREADS";

#[derive(Parser)]
#[command(name = "crowdnet", version, about = "Holdings-graph crowding signals and hedge backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset with planted ground truth.
    Synth {
        /// TOML file whose keys mirror the generator config; defaults apply
        /// for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the six CSV files.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute per-stock crowding scores for every quarter.
    Score {
        #[command(flatten)]
        opts: PipelineOpts,
        /// Also write per-side centrality values with convergence info.
        #[arg(long)]
        dump_centrality: bool,
    },
    /// Build score quintiles and the equal-weight benchmark per quarter.
    Quintiles {
        #[command(flatten)]
        opts: PipelineOpts,
    },
    /// Build the factor-neutral long/short book per quarter.
    Hedge {
        #[command(flatten)]
        opts: PipelineOpts,
    },
    /// Run the full backtest and write the four report CSVs.
    Backtest {
        #[command(flatten)]
        opts: PipelineOpts,
    },
    /// Summarize report files; optionally render the scatter SVG.
    Report {
        /// Directory holding a previous `backtest` run's artifacts.
        #[arg(long)]
        out_dir: PathBuf,
        /// Render ls_scatter.svg from ls_scatter.csv.
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Args)]
struct PipelineOpts {
    /// Directory with holdings.csv, benchmark.csv, caps.csv, returns.csv,
    /// market.csv, factors.csv.
    #[arg(long)]
    data_dir: PathBuf,
    /// Directory artifacts are written into.
    #[arg(long)]
    out_dir: PathBuf,
    /// Centrality kind: degree, weighted-degree, or eigenvector.
    #[arg(long, default_value = "eigenvector", value_parser = parse_kind)]
    kind: CentralityKind,
    /// Maximum names per long/short side.
    #[arg(long, default_value_t = 100)]
    n_per_side: usize,
    /// Factor exposure box half-width.
    #[arg(long, default_value_t = 0.02)]
    factor_bound: f64,
    /// Calendar months between quarter end and portfolio construction.
    #[arg(long, default_value_t = 2)]
    lag_months: u32,
    /// Observation horizons in months, comma separated.
    #[arg(long, default_value = "1,3,6,12", value_parser = parse_horizons)]
    horizons: Horizons,
    /// Power-iteration convergence tolerance (L∞ on successive iterates).
    #[arg(long, default_value_t = 1e-10)]
    eigen_tol: f64,
    #[arg(long, default_value_t = 1000)]
    eigen_max_iter: usize,
    /// Scoring universe: benchmark constituents or held stocks.
    #[arg(long, default_value = "benchmark", value_parser = parse_universe)]
    universe: UniverseSource,
}

#[derive(Clone, Debug)]
struct Horizons(Vec<u32>);

fn parse_kind(s: &str) -> Result<CentralityKind, String> {
    CentralityKind::parse(s)
        .ok_or_else(|| format!("unknown kind {s:?}; use degree, weighted-degree, or eigenvector"))
}

fn parse_universe(s: &str) -> Result<UniverseSource, String> {
    match s.to_ascii_lowercase().as_str() {
        "benchmark" => Ok(UniverseSource::Benchmark),
        "holdings" => Ok(UniverseSource::Holdings),
        _ => Err(format!("unknown universe {s:?}; use benchmark or holdings")),
    }
}

fn parse_horizons(s: &str) -> Result<Horizons, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let h: u32 = part
            .trim()
            .parse()
            .map_err(|_| format!("bad horizon {part:?}"))?;
        if h == 0 {
            return Err("horizons must be positive".to_string());
        }
        out.push(h);
    }
    out.sort_unstable();
    out.dedup();
    Ok(Horizons(out))
}

impl PipelineOpts {
    fn eigen(&self) -> EigenSettings {
        EigenSettings {
            tol: self.eigen_tol,
            max_iter: self.eigen_max_iter,
        }
    }

    fn universe_name(&self) -> &'static str {
        match self.universe {
            UniverseSource::Benchmark => "benchmark",
            UniverseSource::Holdings => "holdings",
        }
    }

    /// Canonical flag serialization; the config hash on every artifact is
    /// recomputable from this.
    fn canonical(&self, command: &str) -> String {
        canonical_config(&[
            ("command", command.to_string()),
            ("kind", self.kind.to_string()),
            ("n_per_side", self.n_per_side.to_string()),
            ("factor_bound", self.factor_bound.to_string()),
            ("lag_months", self.lag_months.to_string()),
            (
                "horizons",
                self.horizons
                    .0
                    .iter()
                    .map(|h| h.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("eigen_tol", self.eigen_tol.to_string()),
            ("eigen_max_iter", self.eigen_max_iter.to_string()),
            ("universe", self.universe_name().to_string()),
        ])
    }

    fn meta(&self, command: &str, paths: &DataDir) -> Result<ReportMeta> {
        let mut meta = ReportMeta::new(&self.canonical(command));
        for path in paths.all_files() {
            meta.digest_input(path)
                .with_context(|| format!("digesting {}", path.display()))?;
        }
        meta.notes.push(format!(
            "eigenvector: L2-normalized full node vector, uniform positive start, \
             tol={}, max_iter={}",
            self.eigen_tol, self.eigen_max_iter
        ));
        Ok(meta)
    }
}

struct Loaded {
    paths: DataDir,
    snapshots: Vec<HoldingsSnapshot>,
    panel: ReturnsPanel,
    /// Per-quarter scoring universe, aligned with `snapshots`.
    universes: Vec<Vec<crowdnet::ids::StockId>>,
}

fn load(opts: &PipelineOpts) -> Result<Loaded> {
    let paths = DataDir::new(&opts.data_dir);
    let snapshots = load_quarters(&paths).context("loading holdings data")?;
    if snapshots.is_empty() {
        bail!("no quarters found in {}", paths.holdings.display());
    }
    let panel =
        load_returns(&paths.returns, &paths.market, &paths.factors).context("loading returns")?;
    let universes = snapshots
        .iter()
        .map(|snap| {
            let report = validate_universe(snap, &panel, opts.lag_months);
            for (stock, reason) in &report.excluded {
                eprintln!("note: {} excluded at {}: {reason}", stock, snap.as_of_date);
            }
            report.scoring_universe(snap, opts.universe)
        })
        .collect();
    Ok(Loaded {
        paths,
        snapshots,
        panel,
        universes,
    })
}

fn all_scores(
    loaded: &Loaded,
    kinds: &[CentralityKind],
    eigen: EigenSettings,
) -> Result<BTreeMap<crowdnet::NaiveDate, BTreeMap<CentralityKind, CrowdingScores>>> {
    let with_universes: Vec<(HoldingsSnapshot, Vec<crowdnet::ids::StockId>)> = loaded
        .snapshots
        .iter()
        .cloned()
        .zip(loaded.universes.iter().cloned())
        .collect();
    score_quarters(&with_universes, kinds, eigen).context("computing crowding scores")
}

fn cmd_synth(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = match &config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let data = generate(&cfg).context("generating synthetic data")?;
    write_dataset(&data, &out).context("writing dataset")?;
    println!(
        "wrote {} quarters × {} stocks × {} funds (seed {}) to {}",
        cfg.n_quarters,
        cfg.n_stocks,
        cfg.n_funds,
        cfg.seed,
        out.display()
    );
    Ok(())
}

fn cmd_score(opts: &PipelineOpts, dump_centrality: bool) -> Result<()> {
    let loaded = load(opts)?;
    let meta = opts.meta("score", &loaded.paths)?;

    let mut scores = Vec::new();
    let mut centrality_rows = Vec::new();
    for (snap, universe) in loaded.snapshots.iter().zip(&loaded.universes) {
        let (s, over, under) = score_pipeline_detailed(snap, opts.kind, universe, opts.eigen())
            .with_context(|| format!("scoring {}", snap.as_of_date))?;
        scores.push(s);
        centrality_rows.push((snap.as_of_date, Side::Overweight, over));
        centrality_rows.push((snap.as_of_date, Side::Underweight, under));
    }

    let score_refs: Vec<&CrowdingScores> = scores.iter().collect();
    let path = opts.out_dir.join("scores.csv");
    write_scores_csv(&path, &score_refs, &meta).context("writing scores.csv")?;
    println!("wrote {}", path.display());

    if dump_centrality {
        let rows: Vec<(crowdnet::NaiveDate, Side, &crowdnet::graph::CentralityVector)> =
            centrality_rows
                .iter()
                .map(|(d, side, cv)| (*d, *side, cv))
                .collect();
        let path = opts.out_dir.join("centrality.csv");
        write_centrality_csv(&path, &rows, &meta).context("writing centrality.csv")?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_quintiles(opts: &PipelineOpts) -> Result<()> {
    let loaded = load(opts)?;
    let meta = opts.meta("quintiles", &loaded.paths)?;
    let scores = all_scores(&loaded, &[opts.kind], opts.eigen())?;

    let mut sets: Vec<QuintileSet> = Vec::new();
    for (as_of, by_kind) in &scores {
        let construction = add_months_clamped(*as_of, opts.lag_months);
        match quintile_portfolios(&by_kind[&opts.kind], construction) {
            Ok(set) => sets.push(set),
            Err(e) => eprintln!("warning: skipping {as_of}: {e}"),
        }
    }
    if sets.is_empty() {
        bail!("no quarter produced quintiles");
    }
    let set_refs: Vec<&QuintileSet> = sets.iter().collect();
    let path = opts.out_dir.join("quintiles.csv");
    write_quintiles_csv(&path, &set_refs, &meta).context("writing quintiles.csv")?;
    println!("wrote {} ({} quarters)", path.display(), sets.len());
    Ok(())
}

fn cmd_hedge(opts: &PipelineOpts) -> Result<()> {
    let loaded = load(opts)?;
    let meta = opts.meta("hedge", &loaded.paths)?;
    let scores = all_scores(&loaded, &[opts.kind], opts.eigen())?;

    let mut books: Vec<Portfolio> = Vec::new();
    for (as_of, by_kind) in &scores {
        let construction = add_months_clamped(*as_of, opts.lag_months);
        match build_longshort(
            &by_kind[&opts.kind],
            &loaded.panel,
            construction,
            opts.n_per_side,
            opts.factor_bound,
        ) {
            Ok(port) => books.push(port),
            Err(e) => eprintln!("warning: skipping {as_of}: {e}"),
        }
    }
    if books.is_empty() {
        bail!("no quarter produced a long/short book");
    }
    let book_refs: Vec<&Portfolio> = books.iter().collect();
    let path = opts.out_dir.join("hedge.csv");
    write_hedge_csv(&path, &book_refs, &meta).context("writing hedge.csv")?;
    println!("wrote {} ({} quarters)", path.display(), books.len());
    Ok(())
}

fn cmd_backtest(opts: &PipelineOpts) -> Result<()> {
    let loaded = load(opts)?;
    let meta = opts.meta("backtest", &loaded.paths)?;
    let scores = all_scores(&loaded, &CentralityKind::ALL, opts.eigen())?;

    let holdings_dates: Vec<crowdnet::NaiveDate> =
        loaded.snapshots.iter().map(|s| s.as_of_date).collect();
    let schedule = build_schedule(&holdings_dates, opts.lag_months, &opts.horizons.0)
        .context("building rebalance schedule")?;
    let output = run_backtest(
        &scores,
        &loaded.panel,
        &schedule,
        &BacktestConfig {
            kind: opts.kind,
            n_per_side: opts.n_per_side,
            factor_bound: opts.factor_bound,
        },
    );

    write_backtest_reports(&opts.out_dir, &output, &meta).context("writing reports")?;
    for name in [
        "metrics.csv",
        "quintile_alpha.csv",
        "factor_tilts.csv",
        "ls_scatter.csv",
    ] {
        println!("wrote {}", opts.out_dir.join(name).display());
    }

    if let Some(&h) = schedule.horizons.first() {
        println!("\nlong/short signal comparison ({h}-month horizon):");
        println!("{:<18} {:>9} {:>9} {:>12} {:>15}", "kind", "mean", "skew", "correlation", "quadratic beta");
        for row in output.comparison_table(h) {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            println!(
                "{:<18} {:>9} {:>9} {:>12} {:>15}",
                row.kind.to_string(),
                f(row.metrics.mean),
                f(row.metrics.skewness),
                f(row.metrics.market_correlation),
                f(row.metrics.quadratic_beta),
            );
        }
    }
    if !output.skipped.is_empty() {
        eprintln!("{} quarter×item combinations skipped:", output.skipped.len());
        for s in &output.skipped {
            eprintln!("  {} {}: {}", s.holdings_date, s.context, s.reason);
        }
    }
    Ok(())
}

fn cmd_report(out_dir: &Path, svg: bool) -> Result<()> {
    let metrics_path = out_dir.join("metrics.csv");
    let text = std::fs::read_to_string(&metrics_path)
        .with_context(|| format!("reading {}", metrics_path.display()))?;
    println!("{}", metrics_path.display());
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        println!("  {line}");
    }

    if svg {
        let scatter_path = out_dir.join("ls_scatter.csv");
        let (points, fit) = read_ls_scatter_csv(&scatter_path)
            .with_context(|| format!("reading {}", scatter_path.display()))?;
        let svg_path = out_dir.join("ls_scatter.svg");
        write_scatter_svg(&svg_path, &points, fit).context("writing SVG")?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}

fn init_threads() {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        } else {
            eprintln!("warning: ignoring non-numeric {THREADS_ENV}={value:?}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out, seed } => cmd_synth(config, out, seed),
        Command::Score {
            opts,
            dump_centrality,
        } => cmd_score(&opts, dump_centrality),
        Command::Quintiles { opts } => cmd_quintiles(&opts),
        Command::Hedge { opts } => cmd_hedge(&opts),
        Command::Backtest { opts } => cmd_backtest(&opts),
        Command::Report { out_dir, svg } => cmd_report(&out_dir, svg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                0
            } else {
                2
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
