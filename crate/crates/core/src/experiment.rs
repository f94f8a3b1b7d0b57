//! Parameter sweeps over `(H_s, H_x)`, per-cell persistence with resume, and
//! report generation from the persisted results.
//!
//! Layout of an output directory:
//!
//! ```text
//! <output_dir>/
//!   sweep.toml                      resolved configuration
//!   hs0.5_hx0.9/
//!     provenance.json               config hash, seeds, code version
//!     round0.json                   per-round summary
//!     round0_q2.intervals.txt       recurrence intervals
//!     round0_q2.dfa.tsv             F(s) of intervals and shuffled intervals
//!     round0_q2.mfdfa.tsv           h, tau, alpha, f per q
//!     q2.pdf.tsv                    pooled scaled PDF
//!     cell.json                     CellResult, written last
//!   report/                         written by `report`
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::recurrence::{
    extract_intervals, fit_generalized_gamma, pool_and_scale, scaled_pdf, GammaFit, IntervalSeries, ScaledPdf,
    DEFAULT_BINS_PER_DECADE, DEFAULT_FIT_MIN,
};
use crate::regression::{fit_beta_surface, BetaPoint, SurfaceFit};
use crate::scaling::{average_exponent, average_spectra, default_q_grid, default_scales, dfa, mfdfa, MfdfaResult};
use crate::simulator::{
    simulate, ModelParams, ReturnSampling, RunDiagnostics, DEFAULT_CANCEL_RATE, DEFAULT_TICK, DEFAULT_WARMUP,
    PAPER_STEPS,
};
use crate::stochastic::{derive_seed, rng_from_seed, StudentParams};
use crate::textio::{self, render_table};

/// Default number of events per run for sweeps.
pub const DESK_STEPS: usize = 200_000;
/// Interval series shorter than this are not passed to DFA or MFDFA.
pub const MIN_ANALYSIS_LENGTH: usize = 100;

const STREAM_SHUFFLE: u64 = 11;
const CELL_FILE: &str = "cell.json";
const REPORT_DIR: &str = "report";

/// Flat sweep configuration; every model parameter can be overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub h_s_grid: Vec<f64>,
    pub h_x_grid: Vec<f64>,
    pub rounds: usize,
    pub thresholds: Vec<f64>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub steps: usize,
    pub warmup: usize,
    pub cancel_rate: f64,
    pub tick: f64,
    pub student_dof: f64,
    pub student_scale: f64,
    pub sampling: ReturnSampling,
    pub bins_per_decade: usize,
    pub fit_min: f64,
    /// Write each round's standardized returns as well.
    pub keep_returns: bool,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let grid = vec![0.5, 0.6, 0.7, 0.8, 0.9];
        let student = StudentParams::default();
        SweepConfig {
            h_s_grid: grid.clone(),
            h_x_grid: grid,
            rounds: 5,
            thresholds: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            master_seed: 0,
            output_dir: PathBuf::from("results"),
            steps: DESK_STEPS,
            warmup: DEFAULT_WARMUP,
            cancel_rate: DEFAULT_CANCEL_RATE,
            tick: DEFAULT_TICK,
            student_dof: student.degrees_of_freedom,
            student_scale: student.scale,
            sampling: ReturnSampling::default(),
            bins_per_decade: DEFAULT_BINS_PER_DECADE,
            fit_min: DEFAULT_FIT_MIN,
            keep_returns: false,
            workers: 0,
        }
    }
}

impl SweepConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sweep config is always serializable")
    }

    /// Switch to the full-length runs.
    pub fn paper_scale(mut self) -> Self {
        self.steps = PAPER_STEPS;
        self
    }

    /// Model parameters shared by every run (Hurst exponents and seed are
    /// filled in per run).
    pub fn model_template(&self) -> ModelParams {
        ModelParams {
            hurst_s: 0.5,
            hurst_x: 0.5,
            student: StudentParams {
                degrees_of_freedom: self.student_dof,
                scale: self.student_scale,
            },
            steps: self.steps,
            cancel_rate: self.cancel_rate,
            tick: self.tick,
            warmup: self.warmup,
            seed: 0,
            sampling: self.sampling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::param("rounds must be at least 1"));
        }
        for (name, grid) in [("h_s_grid", &self.h_s_grid), ("h_x_grid", &self.h_x_grid)] {
            if grid.is_empty() {
                return Err(Error::param(format!("{name} is empty")));
            }
            if let Some(h) = grid.iter().find(|h| !(**h > 0.0 && **h < 1.0)) {
                return Err(Error::param(format!("{name} entry {h} is outside (0, 1)")));
            }
            let distinct: BTreeSet<u64> = grid.iter().map(|h| h.to_bits()).collect();
            if distinct.len() != grid.len() {
                return Err(Error::param(format!("{name} has duplicate entries")));
            }
        }
        if self.thresholds.is_empty() {
            return Err(Error::param("no thresholds given"));
        }
        if let Some(q) = self.thresholds.iter().find(|q| !(**q > 0.0 && q.is_finite())) {
            return Err(Error::param(format!("threshold {q} must be positive")));
        }
        if self.bins_per_decade == 0 {
            return Err(Error::param("bins_per_decade must be positive"));
        }
        if !(self.fit_min > 0.0) {
            return Err(Error::param("fit_min must be positive"));
        }
        self.model_template().validate()
    }

    /// SHA-256 over everything that affects results (not the output
    /// directory or the worker count).
    pub fn config_hash(&self) -> String {
        let canonical = SweepConfig {
            output_dir: PathBuf::new(),
            workers: 0,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("serializable");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed of round `i` in cell `(j, k)`, where `j` indexes `h_s_grid` and
    /// `k` indexes `h_x_grid`.
    pub fn round_seed(&self, j: usize, k: usize, i: usize) -> u64 {
        derive_seed(self.master_seed, &[j as u64, k as u64, i as u64])
    }
}

/// Return-level statistics of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub seed: u64,
    /// Set when the simulation failed; the round then contributes nothing.
    pub failure: Option<String>,
    pub returns: usize,
    pub raw_std: f64,
    pub return_dfa: Option<f64>,
    pub abs_return_dfa: Option<f64>,
    pub excess_kurtosis: f64,
    pub diagnostics: RunDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundFluctuation {
    pub round: usize,
    pub intervals: usize,
    pub scales: Vec<usize>,
    pub fluctuations: Vec<f64>,
    pub shuffled: Vec<f64>,
    pub exponent: f64,
    pub shuffled_exponent: f64,
}

/// Everything computed at one threshold for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub q: f64,
    /// Number of pooled intervals the PDF and the fit were built from.
    pub pooled_intervals: usize,
    pub rounds_with_intervals: usize,
    pub pdf: Option<ScaledPdf>,
    pub gamma: Option<GammaFit>,
    /// Average of the per-round interval DFA exponents.
    pub h_q: Option<f64>,
    pub h_shuffled: Option<f64>,
    pub dfa_rounds: Vec<RoundFluctuation>,
    /// Spectrum from the per-round generalized Hurst curves averaged over rounds.
    pub mfdfa: Option<MfdfaResult>,
    pub mfdfa_rounds: usize,
    /// Why parts of this record are absent.
    pub missing: Vec<String>,
}

impl ThresholdResult {
    pub fn beta(&self) -> Option<f64> {
        self.gamma.map(|g| g.beta)
    }

    pub fn width(&self) -> Option<f64> {
        self.mfdfa.as_ref().map(|m| m.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub h_s: f64,
    pub h_x: f64,
    /// `(j, k)`: positions in `h_s_grid` and `h_x_grid`.
    pub index: (usize, usize),
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rounds: Vec<RoundSummary>,
    pub mean_return_dfa: Option<f64>,
    pub mean_abs_return_dfa: Option<f64>,
    pub mean_excess_kurtosis: Option<f64>,
    pub thresholds: Vec<ThresholdResult>,
}

impl CellResult {
    pub fn at(&self, q: f64) -> Option<&ThresholdResult> {
        self.thresholds.iter().find(|t| t.q == q)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Provenance {
    config_hash: String,
    code_version: String,
    h_s: f64,
    h_x: f64,
    index: (usize, usize),
    master_seed: u64,
    seeds: Vec<u64>,
}

pub fn cell_dir_name(h_s: f64, h_x: f64) -> String {
    format!("hs{h_s}_hx{h_x}")
}

fn q_label(q: f64) -> String {
    format!("q{q}")
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("finite values serialize");
    s.push('\n');
    s
}

fn mean(v: &[f64]) -> Option<f64> {
    average_exponent(v).ok()
}

fn excess_kurtosis(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Per-round output kept in memory until the cell is aggregated.
struct RoundOutput {
    summary: RoundSummary,
    intervals: Vec<Option<IntervalSeries>>,
    missing: Vec<Option<String>>,
}

fn run_round(config: &SweepConfig, dir: &Path, h_s: f64, h_x: f64, seed: u64, round: usize) -> Result<RoundOutput> {
    let params = ModelParams {
        hurst_s: h_s,
        hurst_x: h_x,
        seed,
        ..config.model_template()
    };
    let nq = config.thresholds.len();
    let (series, diag) = match simulate(&params, None) {
        Ok(v) => v,
        Err(e @ Error::DegenerateRun(_)) => {
            let reason = e.to_string();
            let summary = RoundSummary {
                round,
                seed,
                failure: Some(reason.clone()),
                returns: 0,
                raw_std: 0.0,
                return_dfa: None,
                abs_return_dfa: None,
                excess_kurtosis: 0.0,
                diagnostics: RunDiagnostics::default(),
            };
            textio::write_atomic(&dir.join(format!("round{round}.json")), to_json(&summary).as_bytes())?;
            return Ok(RoundOutput {
                summary,
                intervals: vec![None; nq],
                missing: vec![Some(format!("round {round}: {reason}")); nq],
            });
        }
        Err(e) => return Err(e),
    };
    if config.keep_returns {
        series.write(&dir.join(format!("round{round}.returns.txt")))?;
    }
    let r = &series.values;
    let abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    let dfa_of = |x: &[f64]| default_scales(x.len()).and_then(|s| dfa(x, 1, &s)).ok().map(|d| d.exponent);
    let summary = RoundSummary {
        round,
        seed,
        failure: None,
        returns: r.len(),
        raw_std: series.raw_std,
        return_dfa: dfa_of(r),
        abs_return_dfa: dfa_of(&abs),
        excess_kurtosis: excess_kurtosis(r),
        diagnostics: diag,
    };

    let mut intervals = Vec::with_capacity(nq);
    let mut missing = Vec::with_capacity(nq);
    for &q in &config.thresholds {
        match extract_intervals(r, q) {
            Ok(s) => {
                let header = vec![
                    ("h_s", h_s.to_string()),
                    ("h_x", h_x.to_string()),
                    ("q", q.to_string()),
                    ("round", round.to_string()),
                    ("seed", seed.to_string()),
                    ("mean_interval", s.mean_interval.to_string()),
                    ("count", s.intervals.len().to_string()),
                ];
                let text = textio::render_series("ordermem intervals v1", &header, &s.as_f64());
                let path = dir.join(format!("round{round}_{}.intervals.txt", q_label(q)));
                textio::write_atomic(&path, text.as_bytes())?;
                intervals.push(Some(s));
                missing.push(None);
            }
            Err(Error::EmptyIntervals { exceedances, .. }) => {
                intervals.push(None);
                missing.push(Some(format!("round {round}: {exceedances} exceedance(s) of q={q}")));
            }
            Err(e) => return Err(e),
        }
    }
    textio::write_atomic(&dir.join(format!("round{round}.json")), to_json(&summary).as_bytes())?;
    Ok(RoundOutput { summary, intervals, missing })
}

fn analyze_threshold(
    config: &SweepConfig,
    dir: &Path,
    qi: usize,
    rounds: &[RoundOutput],
) -> Result<ThresholdResult> {
    let q = config.thresholds[qi];
    let mut missing: Vec<String> = rounds.iter().filter_map(|r| r.missing[qi].clone()).collect();
    let series: Vec<(usize, u64, &IntervalSeries)> = rounds
        .iter()
        .filter_map(|r| r.intervals[qi].as_ref().map(|s| (r.summary.round, r.summary.seed, s)))
        .collect();

    let mut result = ThresholdResult {
        q,
        pooled_intervals: series.iter().map(|(_, _, s)| s.intervals.len()).sum(),
        rounds_with_intervals: series.len(),
        pdf: None,
        gamma: None,
        h_q: None,
        h_shuffled: None,
        dfa_rounds: Vec::new(),
        mfdfa: None,
        mfdfa_rounds: 0,
        missing: Vec::new(),
    };

    if series.is_empty() {
        missing.push(format!("no round has recurrence intervals at q={q}"));
        result.missing = missing;
        return Ok(result);
    }

    let owned: Vec<IntervalSeries> = series.iter().map(|(_, _, s)| (*s).clone()).collect();
    let pooled = pool_and_scale(&owned)?;
    let pdf = scaled_pdf(&pooled, config.bins_per_decade)?;
    let rows: Vec<Vec<String>> = pdf
        .bin_centers
        .iter()
        .zip(&pdf.densities)
        .zip(&pdf.counts)
        .map(|((x, d), c)| vec![x.to_string(), d.to_string(), c.to_string()])
        .collect();
    textio::write_atomic(
        &dir.join(format!("{}.pdf.tsv", q_label(q))),
        render_table(&["x", "density", "count"], &rows).as_bytes(),
    )?;
    match fit_generalized_gamma(&pdf, config.fit_min) {
        Ok(fit) => result.gamma = Some(fit),
        Err(e @ Error::Fit(_)) => missing.push(format!("gamma fit at q={q}: {e}")),
        Err(e) => return Err(e),
    }
    result.pdf = Some(pdf);

    let q_grid = default_q_grid();
    let mut spectra = Vec::new();
    for (round, seed, s) in &series {
        let x = s.as_f64();
        if x.len() < MIN_ANALYSIS_LENGTH {
            missing.push(format!(
                "round {round}: {} intervals at q={q}, fewer than {MIN_ANALYSIS_LENGTH} for DFA/MFDFA",
                x.len()
            ));
            continue;
        }
        let scales = default_scales(x.len())?;
        let mut shuffled = x.clone();
        shuffled.shuffle(&mut rng_from_seed(derive_seed(*seed, &[STREAM_SHUFFLE, qi as u64])));
        match (dfa(&x, 1, &scales), dfa(&shuffled, 1, &scales)) {
            (Ok(d), Ok(ds)) => {
                let rows: Vec<Vec<String>> = (0..scales.len())
                    .map(|i| {
                        vec![
                            scales[i].to_string(),
                            d.fluctuations[i].to_string(),
                            ds.fluctuations[i].to_string(),
                        ]
                    })
                    .collect();
                textio::write_atomic(
                    &dir.join(format!("round{round}_{}.dfa.tsv", q_label(q))),
                    render_table(&["s", "F", "F_shuffled"], &rows).as_bytes(),
                )?;
                result.dfa_rounds.push(RoundFluctuation {
                    round: *round,
                    intervals: x.len(),
                    scales: scales.clone(),
                    fluctuations: d.fluctuations,
                    shuffled: ds.fluctuations,
                    exponent: d.exponent,
                    shuffled_exponent: ds.exponent,
                });
            }
            (Err(e), _) | (_, Err(e)) => missing.push(format!("round {round}: DFA at q={q}: {e}")),
        }
        match mfdfa(&x, &q_grid, &scales) {
            Ok(m) => {
                write_spectrum(&dir.join(format!("round{round}_{}.mfdfa.tsv", q_label(q))), &m)?;
                spectra.push(m);
            }
            Err(e) => missing.push(format!("round {round}: MFDFA at q={q}: {e}")),
        }
    }
    let ex: Vec<f64> = result.dfa_rounds.iter().map(|d| d.exponent).collect();
    let sh: Vec<f64> = result.dfa_rounds.iter().map(|d| d.shuffled_exponent).collect();
    result.h_q = mean(&ex);
    result.h_shuffled = mean(&sh);
    result.mfdfa_rounds = spectra.len();
    if !spectra.is_empty() {
        let avg = average_spectra(&spectra)?;
        write_spectrum(&dir.join(format!("{}.mfdfa.tsv", q_label(q))), &avg)?;
        result.mfdfa = Some(avg);
    }
    result.missing = missing;
    Ok(result)
}

fn write_spectrum(path: &Path, m: &MfdfaResult) -> Result<()> {
    textio::write_atomic(path, spectrum_table(m).as_bytes())
}

/// `q, h, tau, alpha, f` table of a spectrum.
pub fn spectrum_table(m: &MfdfaResult) -> String {
    let rows: Vec<Vec<String>> = (0..m.q_values.len())
        .map(|i| {
            vec![
                m.q_values[i].to_string(),
                m.h_of_q[i].to_string(),
                m.tau_of_q[i].to_string(),
                m.alpha[i].to_string(),
                m.f_of_alpha[i].to_string(),
            ]
        })
        .collect();
    render_table(&["q", "h", "tau", "alpha", "f"], &rows)
}

/// Run (or reuse) one cell.
pub fn run_cell(config: &SweepConfig, j: usize, k: usize) -> Result<CellResult> {
    let (h_s, h_x) = (config.h_s_grid[j], config.h_x_grid[k]);
    let dir = config.output_dir.join(cell_dir_name(h_s, h_x));
    let hash = config.config_hash();
    let cell_path = dir.join(CELL_FILE);
    if let Ok(done) = CellResult::read(&cell_path) {
        if done.config_hash == hash && done.index == (j, k) {
            return Ok(done);
        }
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let seeds: Vec<u64> = (0..config.rounds).map(|i| config.round_seed(j, k, i)).collect();
    let provenance = Provenance {
        config_hash: hash.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        h_s,
        h_x,
        index: (j, k),
        master_seed: config.master_seed,
        seeds: seeds.clone(),
    };
    textio::write_atomic(&dir.join("provenance.json"), to_json(&provenance).as_bytes())?;

    let rounds: Vec<RoundOutput> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| run_round(config, &dir, h_s, h_x, seed, i))
        .collect::<Result<_>>()?;

    let thresholds = (0..config.thresholds.len())
        .map(|qi| analyze_threshold(config, &dir, qi, &rounds))
        .collect::<Result<Vec<_>>>()?;

    let ok: Vec<&RoundSummary> = rounds.iter().map(|r| &r.summary).filter(|s| s.failure.is_none()).collect();
    let h: Vec<f64> = ok.iter().filter_map(|s| s.return_dfa).collect();
    let ha: Vec<f64> = ok.iter().filter_map(|s| s.abs_return_dfa).collect();
    let kurt: Vec<f64> = ok.iter().map(|s| s.excess_kurtosis).collect();
    let cell = CellResult {
        h_s,
        h_x,
        index: (j, k),
        config_hash: hash,
        seeds,
        rounds: rounds.into_iter().map(|r| r.summary).collect(),
        mean_return_dfa: mean(&h),
        mean_abs_return_dfa: mean(&ha),
        mean_excess_kurtosis: mean(&kurt),
        thresholds,
    };
    textio::write_atomic(&cell_path, to_json(&cell).as_bytes())?;
    Ok(cell)
}

/// Run every cell of the grid, skipping cells already completed with the
/// same configuration. Results come back in grid order (`h_s` major).
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<CellResult>> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    textio::write_atomic(&config.output_dir.join("sweep.toml"), config.to_toml().as_bytes())?;
    let cells: Vec<(usize, usize)> = (0..config.h_s_grid.len())
        .flat_map(|j| (0..config.h_x_grid.len()).map(move |k| (j, k)))
        .collect();
    let work = || -> Result<Vec<CellResult>> {
        cells.par_iter().map(|&(j, k)| run_cell(config, j, k)).collect()
    };
    if config.workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::param(format!("worker pool: {e}")))?
            .install(work)
    }
}

/// Every `cell.json` below `dir`, sorted by `(h_s, h_x)`.
pub fn load_results(dir: &Path) -> Result<Vec<CellResult>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut cells = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path().join(CELL_FILE);
        if path.is_file() {
            cells.push(CellResult::read(&path)?);
        }
    }
    cells.sort_by(|a, b| a.h_s.total_cmp(&b.h_s).then(a.h_x.total_cmp(&b.h_x)));
    Ok(cells)
}

/// Files written by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct SurfaceRecord {
    q: f64,
    points: usize,
    fit: Option<SurfaceFit>,
    error: Option<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "NA".to_string())
}

fn sorted_unique(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Matrix with rows `H_x` and columns `H_s`.
fn grid_table(cells: &[CellResult], value: impl Fn(&CellResult) -> Option<f64>) -> String {
    let hs = sorted_unique(cells.iter().map(|c| c.h_s));
    let hx = sorted_unique(cells.iter().map(|c| c.h_x));
    let mut columns = vec!["h_x \\ h_s".to_string()];
    columns.extend(hs.iter().map(|h| h.to_string()));
    let rows: Vec<Vec<String>> = hx
        .iter()
        .map(|&x| {
            let mut row = vec![x.to_string()];
            for &s in &hs {
                let cell = cells.iter().find(|c| c.h_s == s && c.h_x == x);
                row.push(fmt_opt(cell.and_then(&value)));
            }
            row
        })
        .collect();
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    render_table(&cols, &rows)
}

/// Build all report tables from persisted cell results.
pub fn report(results_dir: &Path) -> Result<ReportFiles> {
    let cells = load_results(results_dir)?;
    if cells.is_empty() {
        return Err(Error::param(format!("no cell results under {}", results_dir.display())));
    }
    let out = results_dir.join(REPORT_DIR);
    let mut files = Vec::new();
    let mut emit = |name: String, text: String| -> Result<()> {
        let path = out.join(name);
        textio::write_atomic(&path, text.as_bytes())?;
        files.push(path);
        Ok(())
    };

    let thresholds = sorted_unique(cells.iter().flat_map(|c| c.thresholds.iter().map(|t| t.q)));
    let beta_at = |q: f64| move |c: &CellResult| c.at(q).and_then(ThresholdResult::beta);

    emit(
        "returns.tsv".into(),
        render_table(
            &["h_s", "h_x", "rounds_ok", "mean_returns", "return_dfa", "abs_return_dfa", "excess_kurtosis"],
            &cells
                .iter()
                .map(|c| {
                    let ok: Vec<&RoundSummary> = c.rounds.iter().filter(|r| r.failure.is_none()).collect();
                    let n = ok.iter().map(|r| r.returns as f64).sum::<f64>() / ok.len().max(1) as f64;
                    vec![
                        c.h_s.to_string(),
                        c.h_x.to_string(),
                        ok.len().to_string(),
                        n.to_string(),
                        fmt_opt(c.mean_return_dfa),
                        fmt_opt(c.mean_abs_return_dfa),
                        fmt_opt(c.mean_excess_kurtosis),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    )?;

    let mut surfaces = Vec::new();
    for &q in &thresholds {
        let ql = q_label(q);
        emit(format!("beta_{ql}.tsv"), grid_table(&cells, beta_at(q)))?;
        emit(format!("hq_{ql}.tsv"), grid_table(&cells, |c| c.at(q).and_then(|t| t.h_q)))?;
        emit(format!("hq_shuffled_{ql}.tsv"), grid_table(&cells, |c| c.at(q).and_then(|t| t.h_shuffled)))?;
        emit(format!("delta_alpha_{ql}.tsv"), grid_table(&cells, |c| c.at(q).and_then(ThresholdResult::width)))?;

        let points: Vec<BetaPoint> = cells
            .iter()
            .filter_map(|c| beta_at(q)(c).map(|beta| BetaPoint { h_x: c.h_x, h_s: c.h_s, beta }))
            .collect();
        let (fit, error) = match fit_beta_surface(&points) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        surfaces.push(SurfaceRecord { q, points: points.len(), fit, error });

        let mut pdf_rows = Vec::new();
        let mut fs_rows = Vec::new();
        let mut spec_rows = Vec::new();
        let mut fit_rows = Vec::new();
        for c in &cells {
            let Some(t) = c.at(q) else { continue };
            let key = [c.h_s.to_string(), c.h_x.to_string()];
            if let Some(pdf) = &t.pdf {
                for i in 0..pdf.bin_centers.len() {
                    let mut row = key.to_vec();
                    row.extend([pdf.bin_centers[i].to_string(), pdf.densities[i].to_string(), pdf.counts[i].to_string()]);
                    pdf_rows.push(row);
                }
            }
            let g = t.gamma;
            fit_rows.push({
                let mut row = key.to_vec();
                row.extend([
                    t.pooled_intervals.to_string(),
                    fmt_opt(g.map(|g| g.beta)),
                    fmt_opt(g.map(|g| g.gamma)),
                    fmt_opt(g.map(|g| g.delta)),
                    fmt_opt(g.map(|g| g.norm_a)),
                    fmt_opt(g.map(|g| g.goodness)),
                ]);
                row
            });
            for d in &t.dfa_rounds {
                for i in 0..d.scales.len() {
                    let mut row = key.to_vec();
                    row.extend([
                        d.round.to_string(),
                        d.scales[i].to_string(),
                        d.fluctuations[i].to_string(),
                        d.shuffled[i].to_string(),
                    ]);
                    fs_rows.push(row);
                }
            }
            if let Some(m) = &t.mfdfa {
                for i in 0..m.q_values.len() {
                    let mut row = key.to_vec();
                    row.extend([
                        m.q_values[i].to_string(),
                        m.h_of_q[i].to_string(),
                        m.tau_of_q[i].to_string(),
                        m.alpha[i].to_string(),
                        m.f_of_alpha[i].to_string(),
                    ]);
                    spec_rows.push(row);
                }
            }
        }
        emit(format!("pdf_{ql}.tsv"), render_table(&["h_s", "h_x", "x", "density", "count"], &pdf_rows))?;
        emit(
            format!("gamma_fit_{ql}.tsv"),
            render_table(&["h_s", "h_x", "intervals", "beta", "gamma", "delta", "norm_a", "rms_residual"], &fit_rows),
        )?;
        emit(format!("fluctuation_{ql}.tsv"), render_table(&["h_s", "h_x", "round", "s", "F", "F_shuffled"], &fs_rows))?;
        emit(format!("spectrum_{ql}.tsv"), render_table(&["h_s", "h_x", "q", "h", "tau", "alpha", "f"], &spec_rows))?;
    }
    emit("surface_fit.json".into(), to_json(&surfaces))?;
    Ok(ReportFiles { dir: out, files })
}
