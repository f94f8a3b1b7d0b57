#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ordermem_core::experiment::{self, spectrum_table};
use ordermem_core::recurrence::{self, DEFAULT_BINS_PER_DECADE, DEFAULT_FIT_MIN};
use ordermem_core::regression::{fit_beta_surface, permutation_p_values};
use ordermem_core::scaling::{self, default_fit_window, default_q_grid, dyadic_scales, log_scales, q_grid};
use ordermem_core::simulator::{self, DEFAULT_CANCEL_RATE, DEFAULT_TICK, DEFAULT_WARMUP};
use ordermem_core::stochastic::{self, rng_from_seed};
use ordermem_core::textio::{self, render_series, render_table};
use ordermem_core::{
    BetaPoint, Error, IntervalSeries, ModelParams, Result, ReturnSampling, StudentParams, SweepConfig,
};

/// Order-book simulation with long-memory order flow and recurrence-interval analysis.
#[derive(Parser)]
#[command(name = "ordermem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its standardized returns.
    Simulate(SimulateArgs),
    /// Recurrence intervals of a return series above a threshold.
    Intervals(IntervalsArgs),
    /// Pool interval files, bin the scaled PDF and fit the generalized Gamma law.
    FitGamma(FitGammaArgs),
    /// Detrended fluctuation analysis of a series file.
    Dfa(DfaArgs),
    /// Multifractal DFA of a series file.
    Mfdfa(MfdfaArgs),
    /// Parameter sweep over the (H_s, H_x) grid.
    Sweep(SweepArgs),
    /// Fit beta = a + b H_x + c H_s to a table of exponents.
    FitSurface(FitSurfaceArgs),
    /// Build report tables from a sweep directory.
    Report(ReportArgs),
    /// Debug: dump a generated input series, one value per line.
    Gen(GenArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Master seed of the run (required).
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    hurst_s: f64,
    #[arg(long, default_value_t = 0.5)]
    hurst_x: f64,
    #[arg(long, default_value_t = experiment::DESK_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = DEFAULT_CANCEL_RATE)]
    cancel_rate: f64,
    #[arg(long, default_value_t = DEFAULT_TICK)]
    tick: f64,
    #[arg(long, default_value_t = StudentParams::default().degrees_of_freedom)]
    student_dof: f64,
    #[arg(long, default_value_t = StudentParams::default().scale)]
    student_scale: f64,
    /// `mid-change` or `trade`.
    #[arg(long, default_value = "mid-change")]
    sampling: ReturnSampling,
    /// Use the full-length run.
    #[arg(long)]
    paper_scale: bool,
    /// Returns file; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Per-event log (event,type,side,tick,best_bid,best_ask).
    #[arg(long)]
    event_log: Option<PathBuf>,
}

#[derive(Args)]
struct IntervalsArgs {
    /// Returns file written by `simulate`.
    input: PathBuf,
    #[arg(short, long)]
    q: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitGammaArgs {
    /// Interval files of one threshold; each is scaled by its own mean.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS_PER_DECADE)]
    bins_per_decade: usize,
    #[arg(long, default_value_t = DEFAULT_FIT_MIN)]
    fit_min: f64,
    /// Also write the binned PDF here.
    #[arg(long)]
    pdf: Option<PathBuf>,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long, default_value_t = scaling::DEFAULT_MIN_SCALE)]
    min_scale: usize,
    #[arg(long, default_value_t = scaling::DEFAULT_SCALE_COUNT)]
    scale_count: usize,
    /// Powers of two from 2^min_exp instead of the log grid.
    #[arg(long)]
    dyadic: bool,
    #[arg(long, default_value_t = 4)]
    min_exp: u32,
}

impl ScaleArgs {
    fn scales(&self, n: usize) -> Result<Vec<usize>> {
        if self.dyadic {
            dyadic_scales(n, self.min_exp)
        } else {
            log_scales(n, self.min_scale, self.scale_count)
        }
    }
}

#[derive(Args)]
struct DfaArgs {
    input: PathBuf,
    /// Detrending polynomial order.
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[command(flatten)]
    scales: ScaleArgs,
    /// Shuffle the series with this seed first.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Write `scale, F` here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MfdfaArgs {
    input: PathBuf,
    #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
    q_min: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    q_max: f64,
    #[arg(long, default_value_t = 41)]
    q_count: usize,
    #[command(flatten)]
    scales: ScaleArgs,
    /// Write `q, h, tau, alpha, f` here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    h_s_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    h_x_grid: Option<Vec<f64>>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    cancel_rate: Option<f64>,
    #[arg(long)]
    tick: Option<f64>,
    #[arg(long)]
    student_dof: Option<f64>,
    #[arg(long)]
    student_scale: Option<f64>,
    #[arg(long)]
    sampling: Option<ReturnSampling>,
    #[arg(long)]
    bins_per_decade: Option<usize>,
    #[arg(long)]
    fit_min: Option<f64>,
    #[arg(long)]
    keep_returns: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Full-length runs (overrides `steps`).
    #[arg(long)]
    paper_scale: bool,
    /// Run `report` once the sweep is done.
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct FitSurfaceArgs {
    /// Either columns `h_x, h_s, beta` or a grid with rows H_x and columns H_s
    /// as written by `report`. `NA` entries are skipped.
    input: PathBuf,
    /// Also compute permutation p-values.
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    results_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Fgn,
    Signs,
    Student,
    Aaft,
}

#[derive(Args)]
struct GenArgs {
    kind: GenKind,
    #[arg(short, long)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    hurst: f64,
    #[arg(long)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) => 2,
        Error::BookState(_) | Error::DegenerateRun(_) => 3,
        Error::EmptyIntervals { .. } | Error::Fit(_) | Error::RankDeficient(_) => 4,
        Error::Parse { .. } | Error::Io { .. } => 5,
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => textio::write_atomic(p, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::Io { path: "<stdout>".into(), source: e })
        }
    }
}

fn json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let params = ModelParams {
        hurst_s: a.hurst_s,
        hurst_x: a.hurst_x,
        student: StudentParams {
            degrees_of_freedom: a.student_dof,
            scale: a.student_scale,
        },
        steps: if a.paper_scale { simulator::PAPER_STEPS } else { a.steps },
        cancel_rate: a.cancel_rate,
        tick: a.tick,
        warmup: a.warmup,
        seed: a.seed,
        sampling: a.sampling,
    };
    let (series, diag) = match &a.event_log {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            let mut w = BufWriter::new(file);
            let out = simulator::simulate(&params, Some(&mut w))?;
            w.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
            out
        }
        None => simulator::simulate(&params, None)?,
    };
    emit(a.output.as_deref(), &series.render())?;
    eprintln!(
        "{} returns from {} events ({} trades, {} cancelled, mean depth {:.1})",
        diag.recorded_returns, diag.events, diag.trades, diag.cancelled, diag.mean_depth
    );
    Ok(())
}

fn intervals(a: IntervalsArgs) -> Result<()> {
    let file = textio::read_series(&a.input)?;
    let s = recurrence::extract_intervals(&file.values, a.q)?;
    let header = [
        ("q", a.q.to_string()),
        ("source", a.input.display().to_string()),
        ("mean_interval", s.mean_interval.to_string()),
        ("count", s.intervals.len().to_string()),
    ];
    emit(a.output.as_deref(), &render_series("ordermem intervals v1", &header, &s.as_f64()))
}

fn read_intervals(path: &Path) -> Result<IntervalSeries> {
    let file = textio::read_series(path)?;
    let q = file.parse_key::<f64>("q", path)?;
    let mut ints = Vec::with_capacity(file.values.len());
    for &v in &file.values {
        if !(v >= 1.0 && v.fract() == 0.0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                msg: format!("`{v}` is not a positive integer interval"),
            });
        }
        ints.push(v as u64);
    }
    IntervalSeries::new(q, ints)
}

fn fit_gamma(a: FitGammaArgs) -> Result<()> {
    let runs = a.inputs.iter().map(|p| read_intervals(p)).collect::<Result<Vec<_>>>()?;
    let pooled = recurrence::pool_and_scale(&runs)?;
    let pdf = recurrence::scaled_pdf(&pooled, a.bins_per_decade)?;
    if let Some(path) = &a.pdf {
        let rows: Vec<Vec<String>> = (0..pdf.bin_centers.len())
            .map(|i| vec![pdf.bin_centers[i].to_string(), pdf.densities[i].to_string(), pdf.counts[i].to_string()])
            .collect();
        textio::write_atomic(path, render_table(&["x", "density", "count"], &rows).as_bytes())?;
    }
    let fit = recurrence::fit_generalized_gamma(&pdf, a.fit_min)?;
    let record = serde_json::json!({
        "q": runs[0].q_threshold,
        "runs": runs.len(),
        "pooled_intervals": pooled.len(),
        "fit": fit,
    });
    emit(None, &json(&record))
}

fn load_values(path: &Path, shuffle_seed: Option<u64>) -> Result<Vec<f64>> {
    let mut values = textio::read_series(path)?.values;
    if let Some(seed) = shuffle_seed {
        use rand::seq::SliceRandom;
        values.shuffle(&mut rng_from_seed(seed));
    }
    Ok(values)
}

fn dfa(a: DfaArgs) -> Result<()> {
    let values = load_values(&a.input, a.shuffle_seed)?;
    let scales = a.scales.scales(values.len())?;
    let r = scaling::dfa(&values, a.order, &scales)?;
    if let Some(path) = &a.output {
        let rows: Vec<Vec<String>> =
            r.scales.iter().zip(&r.fluctuations).map(|(s, f)| vec![s.to_string(), f.to_string()]).collect();
        textio::write_atomic(path, render_table(&["scale", "F"], &rows).as_bytes())?;
    }
    let record = serde_json::json!({
        "n": values.len(),
        "order": a.order,
        "exponent": r.exponent,
        "fit_window": r.fit_window,
    });
    emit(None, &json(&record))
}

fn mfdfa(a: MfdfaArgs) -> Result<()> {
    let values = load_values(&a.input, None)?;
    let scales = a.scales.scales(values.len())?;
    let qs = if (a.q_min, a.q_max, a.q_count) == (-4.0, 4.0, 41) {
        default_q_grid()
    } else {
        if a.q_count < 2 || !(a.q_min < a.q_max) {
            return Err(Error::Parameter("need q_min < q_max and at least 2 q values".into()));
        }
        q_grid(a.q_min, a.q_max, a.q_count)
    };
    let r = scaling::mfdfa_with(&values, 1, &qs, &scales, default_fit_window(&scales))?;
    if let Some(path) = &a.output {
        textio::write_atomic(path, spectrum_table(&r).as_bytes())?;
    }
    let h2 = r.q_values.iter().position(|&q| q == 2.0).map(|i| r.h_of_q[i]);
    let record = serde_json::json!({
        "n": values.len(),
        "width": r.width,
        "h2": h2,
        "fit_window": r.fit_window,
    });
    emit(None, &json(&record))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut c = match &a.config {
        Some(p) => SweepConfig::load(p)?,
        None => SweepConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { c.$f = v; })* };
    }
    set!(
        h_s_grid, h_x_grid, rounds, thresholds, master_seed, output_dir, steps, warmup, cancel_rate, tick,
        student_dof, student_scale, sampling, bins_per_decade, fit_min, workers
    );
    if a.keep_returns {
        c.keep_returns = true;
    }
    if a.paper_scale {
        c = c.paper_scale();
    }
    let cells = experiment::run_sweep(&c)?;
    let mut missing = 0;
    for cell in &cells {
        missing += cell.thresholds.iter().filter(|t| t.gamma.is_none()).count();
    }
    eprintln!(
        "{} cells in {} ({} cell/threshold pairs without a fit)",
        cells.len(),
        c.output_dir.display(),
        missing
    );
    if a.report {
        experiment::report(&c.output_dir)?;
    }
    Ok(())
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), msg: msg.into() }
}

fn parse_cell(path: &Path, s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s == "NA" || s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| parse_err(path, format!("`{s}` is not a number")))
}

/// Points from a long table (`h_x h_s beta`) or a grid (rows H_x, columns H_s).
fn read_points(path: &Path) -> Result<Vec<BetaPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or_else(|| parse_err(path, "empty file"))?.split('\t').collect();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut points = Vec::new();
    if let (Some(ix), Some(is), Some(ib)) = (col("h_x"), col("h_s"), col("beta")) {
        for line in lines {
            let f: Vec<&str> = line.split('\t').collect();
            let get = |i: usize| f.get(i).copied().ok_or_else(|| parse_err(path, format!("short row `{line}`")));
            let (Some(h_x), Some(h_s)) = (parse_cell(path, get(ix)?)?, parse_cell(path, get(is)?)?) else {
                return Err(parse_err(path, format!("missing coordinate in `{line}`")));
            };
            if let Some(beta) = parse_cell(path, get(ib)?)? {
                points.push(BetaPoint { h_x, h_s, beta });
            }
        }
    } else {
        let hs = header[1..].iter().map(|h| parse_cell(path, h)).collect::<Result<Vec<_>>>()?;
        for line in lines {
            let f: Vec<&str> = line.split('\t').collect();
            let h_x = parse_cell(path, f[0])?.ok_or_else(|| parse_err(path, "missing H_x"))?;
            if f.len() != header.len() {
                return Err(parse_err(path, format!("row `{line}` has {} fields, expected {}", f.len(), header.len())));
            }
            for (cell, h_s) in f[1..].iter().zip(&hs) {
                let h_s = h_s.ok_or_else(|| parse_err(path, "missing H_s in header"))?;
                if let Some(beta) = parse_cell(path, cell)? {
                    points.push(BetaPoint { h_x, h_s, beta });
                }
            }
        }
    }
    Ok(points)
}

fn fit_surface(a: FitSurfaceArgs) -> Result<()> {
    let points = read_points(&a.input)?;
    let fit = fit_beta_surface(&points)?;
    let perm = a.permutations.map(|n| permutation_p_values(&points, n, a.seed)).transpose()?;
    let record = serde_json::json!({
        "fit": fit,
        "permutation_p_values": perm,
    });
    emit(None, &json(&record))
}

fn report(a: ReportArgs) -> Result<()> {
    let files = experiment::report(&a.results_dir)?;
    let mut out = String::new();
    for f in &files.files {
        out.push_str(&f.display().to_string());
        out.push('\n');
    }
    emit(None, &out)
}

fn generate(a: GenArgs) -> Result<()> {
    let values: Vec<f64> = match a.kind {
        GenKind::Fgn => stochastic::gen_fgn(a.n, a.hurst, a.seed)?.values,
        GenKind::Signs => stochastic::gen_order_signs(a.n, a.hurst, a.seed)?.into_iter().map(f64::from).collect(),
        GenKind::Student => stochastic::sample_student(a.n, StudentParams::default(), a.seed)?,
        GenKind::Aaft => {
            let raw = stochastic::sample_student(a.n, StudentParams::default(), a.seed)?;
            stochastic::aaft_correlate(&raw, a.hurst, a.seed.wrapping_add(1))?.values
        }
    };
    let kind = a.kind.to_possible_value().expect("no skipped variants");
    let header = [
        ("kind", kind.get_name().to_string()),
        ("n", a.n.to_string()),
        ("hurst", a.hurst.to_string()),
        ("seed", a.seed.to_string()),
    ];
    emit(a.output.as_deref(), &render_series("ordermem generated series v1", &header, &values))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Intervals(a) => intervals(a),
        Command::FitGamma(a) => fit_gamma(a),
        Command::Dfa(a) => dfa(a),
        Command::Mfdfa(a) => mfdfa(a),
        Command::Sweep(a) => sweep(a),
        Command::FitSurface(a) => fit_surface(a),
        Command::Report(a) => report(a),
        Command::Gen(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
