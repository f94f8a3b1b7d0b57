//! Seeded generators for the random inputs of the market model.
//!
//! Everything here is a pure function of its arguments: each call builds its
//! own ChaCha stream from the seed it is given, so identical inputs always
//! produce bit-identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Build the RNG used by every generator in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of indices into an independent sub-seed.
///
/// Used both for the per-stream seeds inside one run and for the
/// `(cell, round)` seeds of a sweep.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0xA5A5_A5A5))))
}

/// Increments of a fractional Brownian motion with unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct FgnSeries {
    pub values: Vec<f64>,
    pub hurst: f64,
    pub seed: u64,
}

/// Parameters of the scaled Student distribution used for relative prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentParams {
    pub degrees_of_freedom: f64,
    pub scale: f64,
}

impl Default for StudentParams {
    fn default() -> Self {
        StudentParams {
            degrees_of_freedom: 1.3,
            scale: 0.0024,
        }
    }
}

impl StudentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.degrees_of_freedom > 0.0 && self.degrees_of_freedom.is_finite()) {
            return Err(Error::param(format!(
                "degrees of freedom must be positive, got {}",
                self.degrees_of_freedom
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::param(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Relative order prices carrying an imposed long-range correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePriceSeries {
    pub values: Vec<f64>,
    pub hurst_x: f64,
}

fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("hurst exponent must lie in (0, 1), got {hurst}")))
    }
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Fractional Gaussian noise by circulant embedding (Davies-Harte).
///
/// The covariance of the output is exact. If the embedding ever produced a
/// materially negative eigenvalue the generator falls back to a Cholesky
/// factorization, which is only affordable for short series.
pub fn gen_fgn(n: usize, hurst: f64, seed: u64) -> Result<FgnSeries> {
    check_hurst(hurst)?;
    if n < 2 {
        return Err(Error::param(format!("fGn length must be at least 2, got {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let values = match davies_harte(n, hurst, &mut rng) {
        Some(v) => v,
        None => fgn_cholesky(n, hurst, &mut rng)?,
    };
    Ok(FgnSeries { values, hurst, seed })
}

fn davies_harte(n: usize, hurst: f64, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let half = n.next_power_of_two();
    let m = 2 * half;

    // first row of the circulant: c_0..c_half, then mirrored
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let lag = if j <= half { j } else { m - j };
            Complex::new(fgn_autocovariance(lag, hurst), 0.0)
        })
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);

    let tol = 1e-9 * row[0].re.abs().max(1.0);
    let mut spectrum = Vec::with_capacity(m);
    for eig in &row {
        if eig.re < -tol {
            return None;
        }
        spectrum.push((eig.re.max(0.0) / m as f64).sqrt());
    }

    let mut work: Vec<Complex<f64>> = spectrum
        .iter()
        .map(|&s| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Complex::new(s * a, s * b)
        })
        .collect();
    fft.process(&mut work);

    Some(work.iter().take(n).map(|z| z.re).collect())
}

/// Exact fGn through the Cholesky factor of the Toeplitz covariance. O(n^3).
pub fn fgn_cholesky(n: usize, hurst: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_hurst(hurst)?;
    if n > 4096 {
        return Err(Error::param(format!(
            "Cholesky fGn is limited to n <= 4096, got {n}"
        )));
    }
    let mut lower = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = fgn_autocovariance(i - j, hurst);
            for k in 0..j {
                sum -= lower[i * n + k] * lower[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::param("fGn covariance is not positive definite"));
                }
                lower[i * n + i] = sum.sqrt();
            } else {
                lower[i * n + j] = sum / lower[j * n + j];
            }
        }
    }
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok((0..n)
        .map(|i| (0..=i).map(|k| lower[i * n + k] * z[k]).sum())
        .collect())
}

/// Order directions: +1 (buy) or -1 (sell) from the signs of an fGn.
///
/// A sample that is exactly zero maps to +1.
pub fn gen_order_signs(n: usize, hurst_s: f64, seed: u64) -> Result<Vec<i8>> {
    let fgn = gen_fgn(n, hurst_s, seed)?;
    Ok(fgn
        .values
        .iter()
        .map(|&v| if v < 0.0 { -1 } else { 1 })
        .collect())
}

/// `n` iid draws of `scale * t(dof)`.
pub fn sample_student(n: usize, params: StudentParams, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::param("sample count must be at least 1"));
    }
    let dist = StudentT::new(params.degrees_of_freedom)
        .map_err(|e| Error::param(format!("student distribution: {e}")))?;
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| params.scale * dist.sample(&mut rng)).collect())
}

/// Impose the rank ordering of a fresh fGn reference (Hurst `hurst_x`) onto
/// the amplitudes of `raw`.
///
/// The output is an exact permutation of `raw`: the k-th smallest raw value
/// lands where the reference series has its k-th smallest value.
pub fn aaft_correlate(raw: &[f64], hurst_x: f64, seed: u64) -> Result<RelativePriceSeries> {
    check_hurst(hurst_x)?;
    if raw.len() < 4 {
        return Err(Error::param(format!(
            "AAFT needs at least 4 values, got {}",
            raw.len()
        )));
    }
    let reference = gen_fgn(raw.len(), hurst_x, seed)?;

    let mut sorted = raw.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut order: Vec<usize> = (0..raw.len()).collect();
    // ties in the reference are broken by position so the result stays deterministic
    order.sort_by(|&a, &b| {
        reference.values[a]
            .total_cmp(&reference.values[b])
            .then(a.cmp(&b))
    });

    let mut values = vec![0.0; raw.len()];
    for (rank, &pos) in order.iter().enumerate() {
        values[pos] = sorted[rank];
    }
    Ok(RelativePriceSeries { values, hurst_x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn autocorr(x: &[f64], lag: usize) -> f64 {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
        cov / var
    }

    #[test]
    fn white_fgn_has_no_lag_one_correlation() {
        let x = gen_fgn(1 << 16, 0.5, 7).unwrap();
        assert!(autocorr(&x.values, 1).abs() < 0.02);
    }

    #[test]
    fn white_fgn_passes_whiteness_check() {
        let n = 1 << 16;
        let x = gen_fgn(n, 0.5, 7).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        for lag in 1..=10 {
            let r = autocorr(&x.values, lag);
            assert!(r.abs() < bound, "lag {lag}: {r}");
        }
    }

    #[test]
    fn fgn_lag_correlations_match_theory() {
        // sample autocorrelation of long fGn against the closed form
        let x = gen_fgn(1 << 17, 0.8, 11).unwrap();
        for lag in [1, 2, 5, 10] {
            let want = fgn_autocovariance(lag, 0.8);
            let got = autocorr(&x.values, lag);
            assert!((got - want).abs() < 0.05, "lag {lag}: {got} vs {want}");
        }
    }

    #[test]
    fn fgn_seeds_differ_but_share_variance() {
        let a = gen_fgn(1 << 16, 0.9, 1).unwrap();
        let b = gen_fgn(1 << 16, 0.9, 2).unwrap();
        assert_ne!(a.values, b.values);
        // One H = 0.9 path pins its own second moment only to about 20%, so the
        // marginal variance is compared over odd- and even-seeded ensembles.
        let second_moment = |parity: u64| {
            let mut acc = 0.0;
            let reps = 200;
            for r in 0..reps {
                let v = gen_fgn(1 << 16, 0.9, 2 * r + parity).unwrap().values;
                acc += v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
            }
            acc / reps as f64
        };
        let (va, vb) = (second_moment(1), second_moment(2));
        assert!((va / vb - 1.0).abs() < 0.05, "{va} vs {vb}");
        assert!((va - 1.0).abs() < 0.05 && (vb - 1.0).abs() < 0.05);
    }

    #[test]
    fn fgn_rejects_bad_parameters() {
        assert!(gen_fgn(100, 0.0, 1).is_err());
        assert!(gen_fgn(100, 1.0, 1).is_err());
        assert!(gen_fgn(1, 0.5, 1).is_err());
    }

    #[test]
    fn davies_harte_and_cholesky_agree_on_covariance() {
        // ensemble covariance of short series from both routes
        let n = 6;
        let reps = 20_000;
        let mut dh = vec![0.0; n];
        let mut ch = vec![0.0; n];
        let mut rng = rng_from_seed(99);
        for r in 0..reps {
            let a = gen_fgn(n, 0.7, r as u64).unwrap().values;
            let b = fgn_cholesky(n, 0.7, &mut rng).unwrap();
            for lag in 0..n {
                dh[lag] += a[0] * a[lag] / reps as f64;
                ch[lag] += b[0] * b[lag] / reps as f64;
            }
        }
        for lag in 0..n {
            let want = fgn_autocovariance(lag, 0.7);
            assert!((dh[lag] - want).abs() < 0.04, "dh lag {lag}: {}", dh[lag]);
            assert!((ch[lag] - want).abs() < 0.04, "chol lag {lag}: {}", ch[lag]);
        }
    }

    #[test]
    fn signs_are_balanced_for_white_noise() {
        let s = gen_order_signs(100_000, 0.5, 3).unwrap();
        let frac = s.iter().filter(|&&v| v == 1).count() as f64 / s.len() as f64;
        assert!((0.49..=0.51).contains(&frac), "{frac}");
    }

    #[test]
    fn short_sign_series_is_reproducible() {
        let a = gen_order_signs(4, 0.5, 17).unwrap();
        let b = gen_order_signs(4, 0.5, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|&v| v == 1 || v == -1));
    }

    #[test]
    fn student_median_near_zero() {
        let p = StudentParams::default();
        let mut x = sample_student(1_000_000, p, 5).unwrap();
        x.sort_by(f64::total_cmp);
        let median = 0.5 * (x[499_999] + x[500_000]);
        assert!(median.abs() < 0.0002, "{median}");
    }

    #[test]
    fn student_tail_fraction_matches_density_integral() {
        // P(|T| > 10) for t(1.3) by Simpson quadrature of the density on [0, 10]
        let nu: f64 = 1.3;
        let ln_c = statrs::function::gamma::ln_gamma((nu + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln();
        let dens = |t: f64| (ln_c - (nu + 1.0) / 2.0 * (1.0 + t * t / nu).ln()).exp();
        let m = 20_000;
        let h = 10.0 / m as f64;
        let mut s = dens(0.0) + dens(10.0);
        for i in 1..m {
            s += dens(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let tail = 1.0 - 2.0 * s * h / 3.0;

        let p = StudentParams::default();
        let x = sample_student(1_000_000, p, 5).unwrap();
        let emp = x.iter().filter(|v| v.abs() > 10.0 * p.scale).count() as f64 / x.len() as f64;
        assert!(emp > 0.0);
        assert!((emp - tail).abs() < 0.003, "empirical {emp} vs quadrature {tail}");
    }

    #[test]
    fn single_student_draw_is_finite() {
        let x = sample_student(1, StudentParams { degrees_of_freedom: 3.0, scale: 2.0 }, 0).unwrap();
        assert_eq!(x.len(), 1);
        assert!(x[0].is_finite());
    }

    #[test]
    fn student_rejects_bad_params() {
        let bad = StudentParams { degrees_of_freedom: 0.0, scale: 1.0 };
        assert!(sample_student(10, bad, 0).is_err());
        let bad = StudentParams { degrees_of_freedom: 1.0, scale: -1.0 };
        assert!(sample_student(10, bad, 0).is_err());
    }

    #[test]
    fn aaft_is_a_permutation() {
        let raw: Vec<f64> = (1..=64).map(f64::from).collect();
        let out = aaft_correlate(&raw, 0.5, 4).unwrap();
        let mut sorted = out.values.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, raw);
    }

    #[test]
    fn aaft_rejects_short_input() {
        assert!(aaft_correlate(&[1.0, 2.0, 3.0], 0.5, 0).is_err());
    }

    #[test]
    fn aaft_follows_reference_ranks() {
        let raw: Vec<f64> = (0..32).map(|i| (i * 7 % 32) as f64).collect();
        let out = aaft_correlate(&raw, 0.7, 9).unwrap();
        let reference = gen_fgn(32, 0.7, 9).unwrap().values;
        for i in 0..32 {
            for j in 0..32 {
                if reference[i] < reference[j] {
                    assert!(out.values[i] <= out.values[j]);
                }
            }
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_fgn(1000, 0.6, 3).unwrap(), gen_fgn(1000, 0.6, 3).unwrap());
        let p = StudentParams::default();
        let raw = sample_student(500, p, 8).unwrap();
        assert_eq!(raw, sample_student(500, p, 8).unwrap());
        assert_eq!(
            aaft_correlate(&raw, 0.8, 1).unwrap(),
            aaft_correlate(&raw, 0.8, 1).unwrap()
        );
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for j in 0..5 {
            for k in 0..5 {
                for i in 0..5 {
                    assert!(seen.insert(derive_seed(42, &[j, k, i])));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn aaft_preserves_multiset(raw in prop::collection::vec(-1e3f64..1e3, 4..200), h in 0.05f64..0.95, seed in any::<u64>()) {
            let out = aaft_correlate(&raw, h, seed).unwrap();
            let mut a = raw.clone();
            let mut b = out.values.clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn signs_are_plus_minus_one(n in 2usize..300, h in 0.05f64..0.95, seed in any::<u64>()) {
            let s = gen_order_signs(n, h, seed).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.iter().all(|&v| v == 1 || v == -1));
        }
    }
}
