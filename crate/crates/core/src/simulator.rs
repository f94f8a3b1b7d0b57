//! The modified Mike-Farmer model: order signs from fGn with Hurst `H_s`,
//! Student relative prices re-ordered to carry Hurst `H_x` memory, unit order
//! size and per-order Bernoulli cancellation after every placement.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{OrderBook, PlaceOutcome, Side};
use crate::stochastic::{
    aaft_correlate, derive_seed, gen_order_signs, rng_from_seed, sample_student, StudentParams,
};
use crate::textio;

/// Per-order cancellation probability per event. Calibrated with
/// [`calibrate_cancel_rate`] (target 55) so that a `10^5`-event pilot at
/// `H_s = H_x = 0.5`, seed 0, holds about 55 resting orders on average.
pub const DEFAULT_CANCEL_RATE: f64 = 0.007;
/// Target mean depth used for [`DEFAULT_CANCEL_RATE`].
pub const CALIBRATION_TARGET_DEPTH: f64 = 55.0;
pub const CALIBRATION_PILOT_STEPS: usize = 100_000;
pub const DEFAULT_TICK: f64 = 0.0001;
pub const DEFAULT_WARMUP: usize = 10_000;
pub const PAPER_STEPS: usize = 2_000_000;
/// Log-price offset of the two bootstrap orders from zero.
pub const BOOTSTRAP_HALF_SPREAD: f64 = 0.01;

const STREAM_SIGNS: u64 = 1;
const STREAM_STUDENT: u64 = 2;
const STREAM_AAFT: u64 = 3;
const STREAM_CANCEL: u64 = 4;

/// When a return is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnSampling {
    /// Whenever the mid price differs from its previous value.
    #[default]
    MidChange,
    /// After every trade, as the mid-price change since the previous trade
    /// (zero returns included).
    Trade,
}

impl ReturnSampling {
    pub fn as_str(self) -> &'static str {
        match self {
            ReturnSampling::MidChange => "mid-change",
            ReturnSampling::Trade => "trade",
        }
    }
}

impl std::str::FromStr for ReturnSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mid-change" => Ok(ReturnSampling::MidChange),
            "trade" => Ok(ReturnSampling::Trade),
            other => Err(Error::param(format!("unknown return sampling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hurst_s: f64,
    pub hurst_x: f64,
    pub student: StudentParams,
    pub steps: usize,
    pub cancel_rate: f64,
    pub tick: f64,
    pub warmup: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampling: ReturnSampling,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            hurst_s: 0.5,
            hurst_x: 0.5,
            student: StudentParams::default(),
            steps: PAPER_STEPS,
            cancel_rate: DEFAULT_CANCEL_RATE,
            tick: DEFAULT_TICK,
            warmup: DEFAULT_WARMUP,
            seed: 0,
            sampling: ReturnSampling::default(),
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, h) in [("hurst_s", self.hurst_s), ("hurst_x", self.hurst_x)] {
            if !(h > 0.0 && h < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1), got {h}")));
            }
        }
        self.student.validate()?;
        if self.steps <= self.warmup {
            return Err(Error::param(format!(
                "steps ({}) must exceed warmup ({})",
                self.steps, self.warmup
            )));
        }
        if self.steps < 4 {
            return Err(Error::param("at least 4 steps are required"));
        }
        if !(0.0..=1.0).contains(&self.cancel_rate) {
            return Err(Error::param(format!(
                "cancel_rate must be in [0, 1], got {}",
                self.cancel_rate
            )));
        }
        if !(self.tick > 0.0 && self.tick <= self.student.scale) {
            return Err(Error::param(format!(
                "tick must lie in (0, student scale = {}], got {}",
                self.student.scale, self.tick
            )));
        }
        Ok(())
    }

    fn header(&self) -> Vec<(&'static str, String)> {
        vec![
            ("hurst_s", self.hurst_s.to_string()),
            ("hurst_x", self.hurst_x.to_string()),
            ("student_dof", self.student.degrees_of_freedom.to_string()),
            ("student_scale", self.student.scale.to_string()),
            ("steps", self.steps.to_string()),
            ("cancel_rate", self.cancel_rate.to_string()),
            ("tick", self.tick.to_string()),
            ("warmup", self.warmup.to_string()),
            ("seed", self.seed.to_string()),
            ("sampling", self.sampling.as_str().to_string()),
        ]
    }

    fn from_header(file: &textio::SeriesFile, path: &Path) -> Result<Self> {
        Ok(ModelParams {
            hurst_s: file.parse_key("hurst_s", path)?,
            hurst_x: file.parse_key("hurst_x", path)?,
            student: StudentParams {
                degrees_of_freedom: file.parse_key("student_dof", path)?,
                scale: file.parse_key("student_scale", path)?,
            },
            steps: file.parse_key("steps", path)?,
            cancel_rate: file.parse_key("cancel_rate", path)?,
            tick: file.parse_key("tick", path)?,
            warmup: file.parse_key("warmup", path)?,
            seed: file.parse_key("seed", path)?,
            sampling: file.parse_key("sampling", path)?,
        })
    }
}

/// Standardized mid-price log returns of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub values: Vec<f64>,
    /// Sample standard deviation of the raw returns.
    pub raw_std: f64,
    pub params: ModelParams,
}

const RETURNS_TITLE: &str = "ordermem return series v1";

impl ReturnSeries {
    pub fn render(&self) -> String {
        let mut header = self.params.header();
        header.push(("raw_std", self.raw_std.to_string()));
        header.push(("count", self.values.len().to_string()));
        textio::render_series(RETURNS_TITLE, &header, &self.values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        textio::write_atomic(path, self.render().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = textio::read_series(path)?;
        let params = ModelParams::from_header(&file, path)?;
        let raw_std = file.parse_key("raw_std", path)?;
        Ok(ReturnSeries {
            values: file.values,
            raw_std,
            params,
        })
    }
}

/// Bookkeeping of one run, for diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub events: usize,
    pub recorded_returns: usize,
    pub trades: u64,
    pub cancelled: u64,
    /// Placements whose own-side quote was missing and that were anchored to
    /// the last trade price or last mid instead.
    pub fallback_anchors: usize,
    /// Average resting depth after each event, warm-up included.
    pub mean_depth: f64,
    pub final_depth: usize,
}

/// Divide by the sample (n - 1) standard deviation. The mean is not removed.
pub fn standardize(raw: &[f64]) -> Result<(Vec<f64>, f64)> {
    if raw.len() < 2 {
        return Err(Error::param("standardization needs at least 2 values"));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::param("series has zero (or non-finite) variance"));
    }
    Ok((raw.iter().map(|v| v / std).collect(), std))
}

/// Run the model and return standardized returns.
pub fn run_simulation(params: &ModelParams) -> Result<ReturnSeries> {
    Ok(simulate(params, None)?.0)
}

/// Run the model, optionally writing one line per event to `event_log`:
/// `event,type,side,tick,best_bid,best_ask` with empty fields for absent quotes.
pub fn simulate(
    params: &ModelParams,
    event_log: Option<&mut dyn Write>,
) -> Result<(ReturnSeries, RunDiagnostics)> {
    let (raw, diag) = simulate_raw(params, event_log)?;
    if raw.len() < 2 {
        return Err(Error::DegenerateRun(format!(
            "only {} return(s) recorded after warm-up in {} events (trades {}, fallback anchors {}, final depth {})",
            raw.len(),
            diag.events,
            diag.trades,
            diag.fallback_anchors,
            diag.final_depth
        )));
    }
    let (values, raw_std) = standardize(&raw).map_err(|_| {
        Error::DegenerateRun(format!("all {} recorded returns are identical", raw.len()))
    })?;
    Ok((
        ReturnSeries {
            values,
            raw_std,
            params: *params,
        },
        diag,
    ))
}

/// Raw (unstandardized) mid-price log returns after warm-up.
pub fn simulate_raw(
    params: &ModelParams,
    mut event_log: Option<&mut dyn Write>,
) -> Result<(Vec<f64>, RunDiagnostics)> {
    params.validate()?;
    let n = params.steps;
    let signs = gen_order_signs(n, params.hurst_s, derive_seed(params.seed, &[STREAM_SIGNS]))?;
    let raw_x = sample_student(n, params.student, derive_seed(params.seed, &[STREAM_STUDENT]))?;
    let rel = aaft_correlate(&raw_x, params.hurst_x, derive_seed(params.seed, &[STREAM_AAFT]))?.values;
    drop(raw_x);
    let mut rng = rng_from_seed(derive_seed(params.seed, &[STREAM_CANCEL]));

    let mut book = OrderBook::bootstrap(params.tick, BOOTSTRAP_HALF_SPREAD)?;
    let mut diag = RunDiagnostics::default();
    let mut returns = Vec::with_capacity(n / 3);
    // mids are tracked as bid + ask in ticks so change detection is exact
    let mut last_mid2: Option<i64> = mid2(&book);
    let mut last_trade: Option<i64> = None;
    let mut last_trade_mid2: Option<i64> = last_mid2;
    let mut depth_sum = 0.0;

    for t in 0..n {
        let side = Side::from_sign(signs[t]);
        let x = rel[t];
        let time = t as u64 + 1;
        let outcome = match book.best_tick(side) {
            Some(anchor) => book.place_order_anchored(side, x, anchor as f64, time),
            None => {
                diag.fallback_anchors += 1;
                let anchor = last_trade
                    .map(|p| p as f64)
                    .or(last_mid2.map(|m| m as f64 / 2.0))
                    .unwrap_or(0.0);
                book.place_order_anchored(side, x, anchor, time)
            }
        };
        let traded = matches!(outcome, PlaceOutcome::Executed(_));
        if let PlaceOutcome::Executed(trade) = outcome {
            last_trade = Some(trade.price_tick);
        }
        if let Some(log) = event_log.as_deref_mut() {
            log_event(log, t, &book, side, outcome)?;
        }

        let cancelled = book.cancel_sweep(params.cancel_rate, &mut rng)?;
        if !cancelled.is_empty() {
            if let Some(log) = event_log.as_deref_mut() {
                for id in &cancelled {
                    let line = format!("{t},cancel,,{id},{},{}\n", fmt_opt(book.best_bid_tick()), fmt_opt(book.best_ask_tick()));
                    log.write_all(line.as_bytes())
                        .map_err(|e| Error::io("event log", e))?;
                }
            }
        }
        depth_sum += book.depth() as f64;

        match params.sampling {
            ReturnSampling::MidChange => {
                if let Some(m) = mid2(&book) {
                    if let Some(prev) = last_mid2 {
                        if m != prev && t >= params.warmup {
                            returns.push((m - prev) as f64 * 0.5 * params.tick);
                        }
                    }
                    last_mid2 = Some(m);
                }
            }
            ReturnSampling::Trade => {
                let m = mid2(&book);
                if traded {
                    if let (Some(m), Some(prev)) = (m, last_trade_mid2) {
                        if t >= params.warmup {
                            returns.push((m - prev) as f64 * 0.5 * params.tick);
                        }
                    }
                    if m.is_some() {
                        last_trade_mid2 = m;
                    }
                }
                if m.is_some() {
                    last_mid2 = m;
                }
            }
        }
    }

    let c = book.counters();
    diag.events = n;
    diag.recorded_returns = returns.len();
    diag.trades = c.trades;
    diag.cancelled = c.cancelled;
    diag.mean_depth = depth_sum / n as f64;
    diag.final_depth = book.depth();
    Ok((returns, diag))
}

fn mid2(book: &OrderBook) -> Option<i64> {
    match (book.best_bid_tick(), book.best_ask_tick()) {
        (Some(b), Some(a)) => Some(b + a),
        _ => None,
    }
}

fn fmt_opt(v: Option<i64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn log_event(log: &mut dyn Write, t: usize, book: &OrderBook, side: Side, outcome: PlaceOutcome) -> Result<()> {
    let (kind, tick) = match outcome {
        PlaceOutcome::Rested(id) => ("rest", book.order(id).map(|o| o.tick)),
        PlaceOutcome::Executed(tr) => ("trade", Some(tr.price_tick)),
    };
    let line = format!(
        "{t},{kind},{},{},{},{}\n",
        side.as_str(),
        fmt_opt(tick),
        fmt_opt(book.best_bid_tick()),
        fmt_opt(book.best_ask_tick())
    );
    log.write_all(line.as_bytes()).map_err(|e| Error::io("event log", e))
}

/// Find the cancellation rate whose pilot run holds `target_depth` resting
/// orders on average, by bisection on `ln(rate)`.
///
/// Returns the rate and the pilot's mean depth.
pub fn calibrate_cancel_rate(pilot: &ModelParams, target_depth: f64) -> Result<(f64, f64)> {
    if !(target_depth > 1.0) {
        return Err(Error::param("target depth must exceed 1"));
    }
    let depth_at = |rate: f64| -> Result<f64> {
        let p = ModelParams {
            cancel_rate: rate,
            ..*pilot
        };
        Ok(simulate_raw(&p, None)?.1.mean_depth)
    };
    let (mut lo, mut hi) = (1e-5f64.ln(), 0.5f64.ln());
    let mut best = (hi.exp(), depth_at(hi.exp())?);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        let rate = mid.exp();
        let depth = depth_at(rate)?;
        if (depth.ln() - target_depth.ln()).abs() < (best.1.ln() - target_depth.ln()).abs() {
            best = (rate, depth);
        }
        if (depth / target_depth).ln().abs() < 0.02 {
            break;
        }
        // depth falls as the rate grows
        if depth > target_depth {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ModelParams {
        ModelParams {
            steps: 20_000,
            warmup: 2_000,
            seed,
            ..ModelParams::default()
        }
    }

    #[test]
    fn standardize_examples() {
        // sample convention: std of [1, -1, 1, -1] is sqrt(4/3)
        let (v, s) = standardize(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert!((s - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((v[0] - 0.75f64.sqrt()).abs() < 1e-15);
        let (v, s) = standardize(&[2.0, -2.0]).unwrap();
        assert!((s - 8.0f64.sqrt()).abs() < 1e-15);
        assert!((v[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((v[1] + 0.5f64.sqrt()).abs() < 1e-15);
        assert!(standardize(&[3.0; 10]).is_err());
        assert!(standardize(&[1.0]).is_err());
    }

    #[test]
    fn standardized_output_has_unit_sample_std() {
        let raw: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 - 20.0).collect();
        let (v, _) = standardize(&raw).unwrap();
        let (_, s) = standardize(&v).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::default().validate().is_ok());
        let bad = [
            ModelParams { hurst_s: 1.0, ..Default::default() },
            ModelParams { hurst_x: 0.0, ..Default::default() },
            ModelParams { steps: 100, warmup: 100, ..Default::default() },
            ModelParams { cancel_rate: -0.1, ..Default::default() },
            ModelParams { tick: 0.01, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_simulation(&small(5)).unwrap();
        let b = run_simulation(&small(5)).unwrap();
        assert_eq!(a, b);
        let c = run_simulation(&small(6)).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn returns_are_sparse_and_standardized() {
        let (r, d) = simulate(&small(1), None).unwrap();
        assert!(r.values.len() < r.params.steps);
        assert_eq!(d.recorded_returns, r.values.len());
        let (_, s) = standardize(&r.values).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(r.values.iter().all(|v| *v != 0.0));
    }

    #[test]
    fn zero_cancellation_with_only_deep_orders_is_degenerate() {
        // every order rests far from the quotes: mid never moves
        let p = ModelParams {
            student: StudentParams { degrees_of_freedom: 1.3, scale: 1e-12 },
            tick: 1e-12,
            cancel_rate: 0.0,
            ..small(1)
        };
        match run_simulation(&p) {
            Err(Error::DegenerateRun(_)) | Ok(_) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn event_log_has_one_line_per_placement() {
        let p = ModelParams { steps: 500, warmup: 10, cancel_rate: 0.0, ..small(2) };
        let mut buf = Vec::new();
        simulate(&p, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 500);
        let first: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        assert_eq!(first.len(), 6);
        assert_eq!(first[0], "0");
    }

    #[test]
    fn default_rate_keeps_pilot_depth_in_band() {
        let pilot = ModelParams { steps: CALIBRATION_PILOT_STEPS, ..ModelParams::default() };
        let (_, d) = simulate_raw(&pilot, None).unwrap();
        assert!((50.0..=500.0).contains(&d.mean_depth), "{}", d.mean_depth);
    }

    #[test]
    fn calibration_reproduces_default_rate() {
        let pilot = ModelParams { steps: CALIBRATION_PILOT_STEPS, ..ModelParams::default() };
        let (rate, depth) = calibrate_cancel_rate(&pilot, CALIBRATION_TARGET_DEPTH).unwrap();
        assert!((rate / DEFAULT_CANCEL_RATE - 1.0).abs() < 0.03, "{rate}");
        assert!((depth / CALIBRATION_TARGET_DEPTH - 1.0).abs() < 0.03, "{depth}");
    }

    #[test]
    fn trade_sampling_records_once_per_trade() {
        let p = ModelParams { sampling: ReturnSampling::Trade, ..small(4) };
        let (r, d) = simulate(&p, None).unwrap();
        assert!(r.values.len() as u64 <= d.trades);
        assert!(r.values.contains(&0.0));
        assert_eq!("trade".parse::<ReturnSampling>().unwrap(), ReturnSampling::Trade);
        assert!("tick".parse::<ReturnSampling>().is_err());
    }

    #[test]
    fn file_round_trip() {
        let r = run_simulation(&small(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        r.write(&path).unwrap();
        assert_eq!(ReturnSeries::read(&path).unwrap(), r);
    }
}
