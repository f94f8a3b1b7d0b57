//! Recurrence intervals between threshold exceedances of a standardized
//! return series, their scaled PDFs, and the generalized Gamma law
//! `p(x) = A x^-beta exp(-gamma x^delta)`.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::stochastic::rng_from_seed;

pub const DEFAULT_BINS_PER_DECADE: usize = 10;
pub const DEFAULT_FIT_MIN: f64 = 1e-2;
/// Fewest occupied bins at or above `fit_min` accepted by the fit.
pub const MIN_FIT_BINS: usize = 8;
/// Search box of the fit: `beta` in `[BETA_MIN, 1)`, `gamma` and `delta`
/// within the given ranges.
pub const BETA_MIN: f64 = -3.0;
pub const GAMMA_RANGE: (f64, f64) = (1e-3, 1e3);
pub const DELTA_RANGE: (f64, f64) = (0.05, 5.0);

/// Waiting times (in return-index units) between successive returns above `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSeries {
    pub q_threshold: f64,
    pub intervals: Vec<u64>,
    pub mean_interval: f64,
}

impl IntervalSeries {
    pub fn new(q_threshold: f64, intervals: Vec<u64>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::EmptyIntervals { q: q_threshold, exceedances: 0 });
        }
        if intervals.contains(&0) {
            return Err(Error::param("recurrence intervals must be at least 1"));
        }
        let mean_interval = intervals.iter().map(|&r| r as f64).sum::<f64>() / intervals.len() as f64;
        Ok(IntervalSeries { q_threshold, intervals, mean_interval })
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.intervals.iter().map(|&r| r as f64).collect()
    }
}

/// Indices `t` with `r[t] > q` (strict).
pub fn exceedances(r: &[f64], q: f64) -> Vec<usize> {
    r.iter()
        .enumerate()
        .filter(|(_, v)| **v > q)
        .map(|(i, _)| i)
        .collect()
}

/// Gaps between consecutive exceedances of `q`. Head and tail stretches are dropped.
pub fn extract_intervals(r: &[f64], q: f64) -> Result<IntervalSeries> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::param(format!("threshold must be positive, got {q}")));
    }
    if r.is_empty() {
        return Err(Error::param("return series is empty"));
    }
    let hits = exceedances(r, q);
    if hits.len() < 2 {
        return Err(Error::EmptyIntervals { q, exceedances: hits.len() });
    }
    let intervals = hits.windows(2).map(|w| (w[1] - w[0]) as u64).collect();
    IntervalSeries::new(q, intervals)
}

/// Divide each run by its own mean interval, then concatenate.
pub fn pool_and_scale(runs: &[IntervalSeries]) -> Result<Vec<f64>> {
    let first = runs.first().ok_or_else(|| Error::param("no interval series to pool"))?;
    let mut out = Vec::with_capacity(runs.iter().map(|r| r.intervals.len()).sum());
    for run in runs {
        if run.q_threshold != first.q_threshold {
            return Err(Error::param(format!(
                "cannot pool thresholds {} and {}",
                first.q_threshold, run.q_threshold
            )));
        }
        if run.intervals.is_empty() {
            return Err(Error::EmptyIntervals { q: run.q_threshold, exceedances: 0 });
        }
        out.extend(run.intervals.iter().map(|&r| r as f64 / run.mean_interval));
    }
    Ok(out)
}

/// Log-binned density estimate. Only occupied bins are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledPdf {
    /// Geometric bin centers.
    pub bin_centers: Vec<f64>,
    pub densities: Vec<f64>,
    pub counts: Vec<u64>,
    pub widths: Vec<f64>,
    pub bins_per_decade: usize,
    /// Number of bins in the covering grid, occupied or not.
    pub grid_bins: usize,
    pub total: u64,
}

impl ScaledPdf {
    /// `sum density * width`; 1 up to rounding for any input.
    pub fn mass(&self) -> f64 {
        self.densities.iter().zip(&self.widths).map(|(d, w)| d * w).sum()
    }
}

/// Bins are `[10^(k/b), 10^((k+1)/b))` for the integer range of `k` covering
/// the data; a value on the top edge of the range joins the last bin.
pub fn scaled_pdf(scaled: &[f64], bins_per_decade: usize) -> Result<ScaledPdf> {
    if bins_per_decade == 0 {
        return Err(Error::param("bins_per_decade must be positive"));
    }
    if scaled.is_empty() {
        return Err(Error::param("no values to bin"));
    }
    if let Some(bad) = scaled.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::param(format!("values must be positive and finite, got {bad}")));
    }
    let b = bins_per_decade as f64;
    let (min, max) = scaled
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let lo = (min.log10() * b).floor() as i64;
    let hi = ((max.log10() * b).ceil() as i64).max(lo + 1);
    let nbins = (hi - lo) as usize;
    let edge = |k: i64| 10f64.powf(k as f64 / b);

    let mut counts = vec![0u64; nbins];
    for &v in scaled {
        let mut k = ((v.log10() * b).floor() as i64).clamp(lo, hi - 1);
        // guard against log10 rounding at the edges
        if k > lo && v < edge(k) {
            k -= 1;
        } else if k + 1 < hi && v >= edge(k + 1) {
            k += 1;
        }
        counts[(k - lo) as usize] += 1;
    }

    let total = scaled.len() as u64;
    let mut pdf = ScaledPdf {
        bin_centers: Vec::new(),
        densities: Vec::new(),
        counts: Vec::new(),
        widths: Vec::new(),
        bins_per_decade,
        grid_bins: nbins,
        total,
    };
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let k = lo + i as i64;
        let (a, z) = (edge(k), edge(k + 1));
        pdf.bin_centers.push((a * z).sqrt());
        pdf.widths.push(z - a);
        pdf.densities.push(c as f64 / (total as f64 * (z - a)));
        pdf.counts.push(c);
    }
    Ok(pdf)
}

fn check_gamma_params(beta: f64, gamma: f64, delta: f64) -> Result<()> {
    if !(beta < 1.0 && beta.is_finite()) {
        return Err(Error::param(format!("beta must be below 1, got {beta}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param(format!("gamma must be positive, got {gamma}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::param(format!("delta must be positive, got {delta}")));
    }
    Ok(())
}

/// `ln A` with `A = delta / (gamma^((beta-1)/delta) Gamma((1-beta)/delta))`.
pub fn ln_gamma_norm(beta: f64, gamma: f64, delta: f64) -> Result<f64> {
    check_gamma_params(beta, gamma, delta)?;
    let shape = (1.0 - beta) / delta;
    Ok(delta.ln() + shape * gamma.ln() - ln_gamma(shape))
}

pub fn gamma_norm(beta: f64, gamma: f64, delta: f64) -> Result<f64> {
    Ok(ln_gamma_norm(beta, gamma, delta)?.exp())
}

fn ln_gamma_pdf_unchecked(ln_a: f64, x: f64, beta: f64, gamma: f64, delta: f64) -> f64 {
    ln_a - beta * x.ln() - gamma * x.powf(delta)
}

/// Normalized generalized Gamma density at `x > 0`.
pub fn gamma_pdf(x: f64, beta: f64, gamma: f64, delta: f64) -> Result<f64> {
    let ln_a = ln_gamma_norm(beta, gamma, delta)?;
    if !(x > 0.0) {
        return Err(Error::param(format!("x must be positive, got {x}")));
    }
    Ok(ln_gamma_pdf_unchecked(ln_a, x, beta, gamma, delta).exp())
}

/// Exact draws: `x = (G / gamma)^(1/delta)` with `G ~ Gamma((1 - beta)/delta, 1)`.
pub fn sample_generalized_gamma(n: usize, beta: f64, gamma: f64, delta: f64, seed: u64) -> Result<Vec<f64>> {
    check_gamma_params(beta, gamma, delta)?;
    let g = Gamma::new((1.0 - beta) / delta, 1.0).map_err(|e| Error::param(format!("gamma sampler: {e}")))?;
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| {
            let v: f64 = g.sample(&mut rng);
            (v / gamma).powf(1.0 / delta)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub norm_a: f64,
    /// Smallest and largest bin center used.
    pub fit_range: (f64, f64),
    /// RMS residual of the log density.
    pub goodness: f64,
    pub bins_used: usize,
}

struct LogDensityResidual<'a> {
    ln_x: &'a [f64],
    ln_p: &'a [f64],
}

// parameters are (ln(1 - beta), ln gamma, ln delta) so every point is valid
fn unpack(p: &[f64]) -> (f64, f64, f64) {
    (1.0 - p[0].exp(), p[1].exp(), p[2].exp())
}

impl LogDensityResidual<'_> {
    fn sse(&self, beta: f64, gamma: f64, delta: f64) -> f64 {
        let inside = beta >= BETA_MIN
            && (GAMMA_RANGE.0..=GAMMA_RANGE.1).contains(&gamma)
            && (DELTA_RANGE.0..=DELTA_RANGE.1).contains(&delta);
        if !inside {
            return f64::INFINITY;
        }
        let Ok(ln_a) = ln_gamma_norm(beta, gamma, delta) else {
            return f64::INFINITY;
        };
        let mut s = 0.0;
        for (&lx, &lp) in self.ln_x.iter().zip(self.ln_p) {
            let model = ln_a - beta * lx - gamma * (delta * lx).exp();
            s += (model - lp).powi(2);
        }
        if s.is_finite() {
            s
        } else {
            f64::INFINITY
        }
    }
}

impl CostFunction for LogDensityResidual<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let (beta, gamma, delta) = unpack(p);
        Ok(self.sse(beta, gamma, delta))
    }
}

/// Least-squares fit of `ln p` over bins with center `>= fit_min`.
///
/// Nelder-Mead is restarted from a grid of `(beta, delta)` starting points and
/// the best finite optimum is kept. The search is confined to the box given
/// by [`BETA_MIN`], [`GAMMA_RANGE`] and [`DELTA_RANGE`].
pub fn fit_generalized_gamma(pdf: &ScaledPdf, fit_min: f64) -> Result<GammaFit> {
    let (mut ln_x, mut ln_p) = (Vec::new(), Vec::new());
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for (&c, &d) in pdf.bin_centers.iter().zip(&pdf.densities) {
        if c >= fit_min && d > 0.0 {
            ln_x.push(c.ln());
            ln_p.push(d.ln());
            range = (range.0.min(c), range.1.max(c));
        }
    }
    if ln_x.len() < MIN_FIT_BINS {
        return Err(Error::Fit(format!(
            "only {} occupied bins at or above {fit_min}; need {MIN_FIT_BINS}",
            ln_x.len()
        )));
    }
    let problem = LogDensityResidual { ln_x: &ln_x, ln_p: &ln_p };

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut failures = Vec::new();
    for beta0 in [-0.5f64, 0.0, 0.4, 0.7, 0.9] {
        for delta0 in [0.3f64, 0.6, 1.0, 1.6] {
            let start = vec![(1.0 - beta0).ln(), 0.0, delta0.ln()];
            let mut simplex = vec![start.clone()];
            for i in 0..3 {
                let mut v = start.clone();
                v[i] += 0.3;
                simplex.push(v);
            }
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(1e-12)
                .map_err(|e| Error::Fit(e.to_string()))?;
            let run = Executor::new(
                LogDensityResidual { ln_x: &ln_x, ln_p: &ln_p },
                solver,
            )
            .configure(|s| s.max_iters(4000))
            .run();
            match run {
                Ok(res) => {
                    let state = res.state();
                    let cost = state.get_best_cost();
                    if let (Some(p), true) = (state.get_best_param(), cost.is_finite()) {
                        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                            best = Some((cost, p.clone()));
                        }
                    }
                }
                Err(e) => failures.push(format!("start (beta {beta0}, delta {delta0}): {e}")),
            }
        }
    }
    let (cost, p) = best.ok_or_else(|| {
        Error::Fit(format!("no start converged; {}", failures.join("; ")))
    })?;
    let (beta, gamma, delta) = unpack(&p);
    let norm_a = gamma_norm(beta, gamma, delta)?;
    if !norm_a.is_finite() {
        return Err(Error::Fit(format!(
            "normalization overflows at beta {beta}, gamma {gamma}, delta {delta}"
        )));
    }
    debug_assert!((problem.sse(beta, gamma, delta) - cost).abs() <= 1e-9 * cost.max(1.0));
    Ok(GammaFit {
        beta,
        gamma,
        delta,
        norm_a,
        fit_range: range,
        goodness: (cost / ln_x.len() as f64).sqrt(),
        bins_used: ln_x.len(),
    })
}
