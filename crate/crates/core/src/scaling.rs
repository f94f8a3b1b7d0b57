//! Detrended fluctuation analysis and its multifractal generalization.
//!
//! The profile of a series is the cumulative sum of its mean-removed values.
//! For each scale `s` the profile is cut into `floor(N/s)` windows from the
//! start and again from the end, a polynomial of the requested order is
//! removed from every window, and the mean squared residual of window `v`
//! gives `F2(v, s)`. DFA reports `F(s) = sqrt(mean_v F2(v, s))`; MFDFA
//! reports the q-th order average of the same per-window quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scales in the default logarithmic grid.
pub const DEFAULT_SCALE_COUNT: usize = 20;
/// Smallest scale of the default grid.
pub const DEFAULT_MIN_SCALE: usize = 10;
/// The largest scales are noisy; the default fit drops this many from the top.
pub const DROPPED_TOP_SCALES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfaResult {
    pub scales: Vec<usize>,
    pub fluctuations: Vec<f64>,
    pub exponent: f64,
    pub fit_window: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfdfaResult {
    pub q_values: Vec<f64>,
    pub h_of_q: Vec<f64>,
    pub tau_of_q: Vec<f64>,
    pub alpha: Vec<f64>,
    pub f_of_alpha: Vec<f64>,
    pub width: f64,
    pub scales: Vec<usize>,
    /// `log_fq[i][j]` is `ln F_q(s)` for `q_values[i]` and `scales[j]`.
    pub log_fq: Vec<Vec<f64>>,
    pub fit_window: (usize, usize),
}

/// Logarithmically spaced integer scales from `min_scale` to `n / 4`.
///
/// Duplicates after rounding are removed, so fewer than `count` scales may
/// come back for short series.
pub fn log_scales(n: usize, min_scale: usize, count: usize) -> Result<Vec<usize>> {
    let max_scale = n / 4;
    if min_scale < 3 || max_scale < min_scale || count < 2 {
        return Err(Error::param(format!(
            "series of length {n} is too short for scales starting at {min_scale}"
        )));
    }
    let (lo, hi) = ((min_scale as f64).ln(), (max_scale as f64).ln());
    let mut scales: Vec<usize> = (0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    scales[count - 1] = max_scale;
    scales.dedup();
    Ok(scales)
}

/// Powers of two from `2^min_exp` up to `n / 4`.
pub fn dyadic_scales(n: usize, min_exp: u32) -> Result<Vec<usize>> {
    let scales: Vec<usize> = (min_exp..usize::BITS)
        .map(|e| 1usize << e)
        .take_while(|&s| 4 * s <= n)
        .collect();
    if scales.len() < 2 {
        return Err(Error::param(format!("series of length {n} is too short for dyadic scales")));
    }
    Ok(scales)
}

/// Default grid for a series of length `n`.
pub fn default_scales(n: usize) -> Result<Vec<usize>> {
    log_scales(n, DEFAULT_MIN_SCALE, DEFAULT_SCALE_COUNT)
}

/// Default fit window: everything but the largest [`DROPPED_TOP_SCALES`]
/// scales, when at least three scales remain.
pub fn default_fit_window(scales: &[usize]) -> (usize, usize) {
    let n = scales.len();
    let last = if n >= DROPPED_TOP_SCALES + 3 { n - 1 - DROPPED_TOP_SCALES } else { n - 1 };
    (scales[0], scales[last])
}

fn validate_scales(len: usize, scales: &[usize], order: usize) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::param("no scales given"));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("scales must be strictly increasing"));
    }
    if scales[0] < order + 2 {
        return Err(Error::param(format!(
            "smallest scale {} is too small for detrending order {order}",
            scales[0]
        )));
    }
    let max = *scales.last().expect("non-empty");
    if len < 4 * max {
        return Err(Error::param(format!(
            "series of length {len} is shorter than 4 x largest scale {max}"
        )));
    }
    Ok(())
}

fn profile(series: &[f64]) -> Vec<f64> {
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let mut acc = 0.0;
    series
        .iter()
        .map(|v| {
            acc += v - mean;
            acc
        })
        .collect()
}

/// Orthonormal polynomial basis of degree `order` on `s` equally spaced points.
fn poly_basis(s: usize, order: usize) -> Vec<Vec<f64>> {
    let mid = (s as f64 - 1.0) / 2.0;
    let half = mid.max(1.0);
    let t: Vec<f64> = (0..s).map(|i| (i as f64 - mid) / half).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(order + 1);
    for d in 0..=order {
        let mut v: Vec<f64> = t.iter().map(|x| x.powi(d as i32)).collect();
        // modified Gram-Schmidt, twice for stability at higher orders
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
}

fn window_variance(segment: &[f64], basis: &[Vec<f64>], resid: &mut Vec<f64>) -> f64 {
    resid.clear();
    resid.extend_from_slice(segment);
    for b in basis {
        let dot: f64 = segment.iter().zip(b).map(|(x, y)| x * y).sum();
        resid.iter_mut().zip(b).for_each(|(r, y)| *r -= dot * y);
    }
    resid.iter().map(|r| r * r).sum::<f64>() / segment.len() as f64
}

/// Per-window detrended variances `F2(v, s)` for every scale, windows taken
/// from both ends of the profile.
pub fn window_variances(series: &[f64], order: usize, scales: &[usize]) -> Result<Vec<Vec<f64>>> {
    validate_scales(series.len(), scales, order)?;
    let y = profile(series);
    let n = y.len();
    let mut resid = Vec::new();
    Ok(scales
        .iter()
        .map(|&s| {
            let basis = poly_basis(s, order);
            let count = n / s;
            let mut out = Vec::with_capacity(2 * count);
            for v in 0..count {
                out.push(window_variance(&y[v * s..(v + 1) * s], &basis, &mut resid));
            }
            for v in 0..count {
                let end = n - v * s;
                out.push(window_variance(&y[end - s..end], &basis, &mut resid));
            }
            out
        })
        .collect())
}

/// The DFA fluctuation function `F(s)` at each scale.
pub fn fluctuation_function(series: &[f64], order: usize, scales: &[usize]) -> Result<Vec<f64>> {
    Ok(window_variances(series, order, scales)?
        .iter()
        .map(|f2| (f2.iter().sum::<f64>() / f2.len() as f64).sqrt())
        .collect())
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn window_range(scales: &[usize], fit_window: (usize, usize)) -> Result<std::ops::RangeInclusive<usize>> {
    let lo = scales.iter().position(|&s| s >= fit_window.0);
    let hi = scales.iter().rposition(|&s| s <= fit_window.1);
    match (lo, hi) {
        (Some(lo), Some(hi)) if hi > lo => Ok(lo..=hi),
        _ => Err(Error::param(format!(
            "fit window {fit_window:?} covers fewer than two scales"
        ))),
    }
}

fn log_slope(scales: &[usize], log_f: &[f64], range: std::ops::RangeInclusive<usize>) -> f64 {
    let x: Vec<f64> = scales[range.clone()].iter().map(|&s| (s as f64).ln()).collect();
    ols_line(&x, &log_f[range]).0
}

/// DFA with the default fit window.
pub fn dfa(series: &[f64], detrend_order: usize, scales: &[usize]) -> Result<DfaResult> {
    validate_scales(series.len(), scales, detrend_order)?;
    dfa_with_window(series, detrend_order, scales, default_fit_window(scales))
}

/// DFA fitting the exponent only over scales within `fit_window` (inclusive).
pub fn dfa_with_window(
    series: &[f64],
    detrend_order: usize,
    scales: &[usize],
    fit_window: (usize, usize),
) -> Result<DfaResult> {
    let fluctuations = fluctuation_function(series, detrend_order, scales)?;
    if fluctuations.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::param("fluctuation function vanishes; series has no variability at some scale"));
    }
    let log_f: Vec<f64> = fluctuations.iter().map(|f| f.ln()).collect();
    let range = window_range(scales, fit_window)?;
    Ok(DfaResult {
        scales: scales.to_vec(),
        exponent: log_slope(scales, &log_f, range),
        fluctuations,
        fit_window,
    })
}

/// DFA-1 on the default scale grid.
pub fn dfa_default(series: &[f64]) -> Result<DfaResult> {
    dfa(series, 1, &default_scales(series.len())?)
}

/// Arithmetic mean of per-run exponents.
pub fn average_exponent(exponents: &[f64]) -> Result<f64> {
    if exponents.is_empty() {
        return Err(Error::param("no exponents to average"));
    }
    Ok(exponents.iter().sum::<f64>() / exponents.len() as f64)
}

/// `count` points uniformly spaced on `[lo, hi]`.
pub fn q_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| {
            let q = lo + (hi - lo) * i as f64 / (count - 1) as f64;
            // snap to the nearest multiple of 1e-12 so q = 0 is exact
            (q * 1e12).round() / 1e12
        })
        .collect()
}

/// Default MFDFA moment grid: 41 points on [-4, 4].
pub fn default_q_grid() -> Vec<f64> {
    q_grid(-4.0, 4.0, 41)
}

/// Relative floor on per-window variances, applied before the q/2 power.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

fn log_fq(f2: &[f64], q: f64) -> f64 {
    if q == 0.0 {
        0.5 * f2.iter().map(|v| v.ln()).sum::<f64>() / f2.len() as f64
    } else {
        // log-sum-exp keeps large |q| moments in range
        let terms: Vec<f64> = f2.iter().map(|v| 0.5 * q * v.ln()).collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = terms.iter().map(|t| (t - m).exp()).sum::<f64>() / f2.len() as f64;
        (m + mean.ln()) / q
    }
}

/// Multifractal DFA (order-1 detrending) with the default fit window.
pub fn mfdfa(series: &[f64], q_values: &[f64], scales: &[usize]) -> Result<MfdfaResult> {
    validate_scales(series.len(), scales, 1)?;
    mfdfa_with(series, 1, q_values, scales, default_fit_window(scales))
}

pub fn mfdfa_with(
    series: &[f64],
    detrend_order: usize,
    q_values: &[f64],
    scales: &[usize],
    fit_window: (usize, usize),
) -> Result<MfdfaResult> {
    if q_values.len() < 2 {
        return Err(Error::param("MFDFA needs at least two q values"));
    }
    if q_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("q values must be strictly increasing"));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let floor = RESIDUAL_FLOOR * var;
    if !(floor > 0.0) {
        return Err(Error::param("series has zero variance"));
    }

    let mut variances = window_variances(series, detrend_order, scales)?;
    for f2 in &mut variances {
        f2.iter_mut().for_each(|v| *v = v.max(floor));
    }
    let range = window_range(scales, fit_window)?;

    let log_fq: Vec<Vec<f64>> = q_values
        .iter()
        .map(|&q| variances.iter().map(|f2| log_fq(f2, q)).collect())
        .collect();
    let h_of_q: Vec<f64> = log_fq
        .iter()
        .map(|lf| log_slope(scales, lf, range.clone()))
        .collect();

    let mut result = spectrum_from_h(q_values, &h_of_q);
    result.scales = scales.to_vec();
    result.log_fq = log_fq;
    result.fit_window = fit_window;
    Ok(result)
}

/// Mass exponents and singularity spectrum from a generalized Hurst curve.
///
/// `h'(q)` uses central differences, one-sided at the ends of the grid.
pub fn spectrum_from_h(q_values: &[f64], h_of_q: &[f64]) -> MfdfaResult {
    let m = q_values.len();
    let tau_of_q: Vec<f64> = q_values.iter().zip(h_of_q).map(|(q, h)| q * h - 1.0).collect();
    let deriv: Vec<f64> = (0..m)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                _ if i == m - 1 => (m - 2, m - 1),
                _ => (i - 1, i + 1),
            };
            (h_of_q[b] - h_of_q[a]) / (q_values[b] - q_values[a])
        })
        .collect();
    let alpha: Vec<f64> = (0..m).map(|i| h_of_q[i] + q_values[i] * deriv[i]).collect();
    let f_of_alpha: Vec<f64> = (0..m)
        .map(|i| q_values[i] * (alpha[i] - h_of_q[i]) + 1.0)
        .collect();
    let mut result = MfdfaResult {
        q_values: q_values.to_vec(),
        h_of_q: h_of_q.to_vec(),
        tau_of_q,
        alpha,
        f_of_alpha,
        width: 0.0,
        scales: Vec::new(),
        log_fq: Vec::new(),
        fit_window: (0, 0),
    };
    result.width = singularity_width(&result);
    result
}

/// `max(alpha) - min(alpha)`.
pub fn singularity_width(result: &MfdfaResult) -> f64 {
    let max = result.alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = result.alpha.iter().cloned().fold(f64::INFINITY, f64::min);
    if result.alpha.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// Mean of several generalized Hurst curves on the same q grid, turned back
/// into a full spectrum.
pub fn average_spectra(results: &[MfdfaResult]) -> Result<MfdfaResult> {
    let first = results.first().ok_or_else(|| Error::param("no MFDFA results to average"))?;
    if results.iter().any(|r| r.q_values != first.q_values) {
        return Err(Error::param("MFDFA results use different q grids"));
    }
    let m = first.q_values.len();
    let h: Vec<f64> = (0..m)
        .map(|i| results.iter().map(|r| r.h_of_q[i]).sum::<f64>() / results.len() as f64)
        .collect();
    Ok(spectrum_from_h(&first.q_values, &h))
}
