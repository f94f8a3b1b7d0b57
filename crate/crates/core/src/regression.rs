//! Planar least-squares fit `beta = a + b H_x + c H_s` with two-sided t-test
//! p-values, plus a permutation cross-check.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::stochastic::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPoint {
    pub h_x: f64,
    pub h_s: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub std_errors: [f64; 3],
    pub t_values: [f64; 3],
    /// Two-sided, for `(a, b, c)`.
    pub p_values: [f64; 3],
    pub r_squared: f64,
    pub n_points: usize,
    pub residual_df: usize,
    /// Residuals vanished: p-values are reported as exactly 0.
    pub degenerate: bool,
}

impl SurfaceFit {
    pub fn coefficients(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn predict(&self, h_x: f64, h_s: f64) -> f64 {
        self.a + self.b * h_x + self.c * h_s
    }
}

// singular values below this fraction of the largest count as zero
const RANK_TOL: f64 = 1e-10;

fn design(points: &[BetaPoint]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => points[i].h_x,
        _ => points[i].h_s,
    })
}

/// Ordinary least squares over all points.
pub fn fit_beta_surface(points: &[BetaPoint]) -> Result<SurfaceFit> {
    if points.len() < 4 {
        return Err(Error::param(format!(
            "surface fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.h_x.is_finite() && p.h_s.is_finite() && p.beta.is_finite()))
    {
        return Err(Error::param(format!("non-finite point {p:?}")));
    }
    let x = design(points);
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.beta));

    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if sv.iter().any(|&s| s <= RANK_TOL * smax) {
        return Err(Error::RankDeficient(
            "design points are collinear in the (H_x, H_s) plane".into(),
        ));
    }

    let xtx = x.transpose() * &x;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("normal matrix is singular".into()))?;
    let coef = &xtx_inv * x.transpose() * &y;
    let resid = &y - &x * &coef;

    let n = points.len();
    let df = n - 3;
    let sse = resid.norm_squared();
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };

    let sigma2 = sse / df as f64;
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let degenerate = sse.sqrt() <= 1e-12 * scale * (n as f64).sqrt();

    let mut std_errors = [0.0; 3];
    let mut t_values = [0.0; 3];
    let mut p_values = [0.0; 3];
    let tdist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Fit(e.to_string()))?;
    for j in 0..3 {
        if degenerate {
            t_values[j] = f64::INFINITY * coef[j].signum();
            continue;
        }
        std_errors[j] = (sigma2 * xtx_inv[(j, j)]).sqrt();
        t_values[j] = coef[j] / std_errors[j];
        p_values[j] = (2.0 * tdist.sf(t_values[j].abs())).clamp(0.0, 1.0);
    }

    Ok(SurfaceFit {
        a: coef[0],
        b: coef[1],
        c: coef[2],
        std_errors,
        t_values,
        p_values,
        r_squared,
        n_points: n,
        residual_df: df,
        degenerate,
    })
}

/// Permutation p-values: `beta` labels are shuffled over the design points
/// `permutations` times and each coefficient's `|t|` is compared with the
/// observed one. Returns `(1 + hits) / (1 + permutations)` per coefficient.
pub fn permutation_p_values(points: &[BetaPoint], permutations: usize, seed: u64) -> Result<[f64; 3]> {
    if permutations == 0 {
        return Err(Error::param("at least one permutation is required"));
    }
    let observed = fit_beta_surface(points)?;
    if observed.degenerate {
        return Err(Error::Fit("zero-residual fit has no finite t statistics".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut betas: Vec<f64> = points.iter().map(|p| p.beta).collect();
    let mut shuffled = points.to_vec();
    let mut hits = [0usize; 3];
    for _ in 0..permutations {
        betas.shuffle(&mut rng);
        for (p, &b) in shuffled.iter_mut().zip(&betas) {
            p.beta = b;
        }
        let fit = fit_beta_surface(&shuffled)?;
        // a degenerate permuted fit has infinite |t| and counts as a hit
        for (h, (t, o)) in hits.iter_mut().zip(fit.t_values.iter().zip(&observed.t_values)) {
            if t.abs() >= o.abs() {
                *h += 1;
            }
        }
    }
    Ok(hits.map(|h| (1 + h) as f64 / (1 + permutations) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GRID: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];
    // rows H_x, columns H_s
    const BETA: [[f64; 5]; 5] = [
        [0.466, 0.509, 0.619, 0.629, 0.610],
        [0.567, 0.646, 0.638, 0.643, 0.606],
        [0.694, 0.717, 0.730, 0.643, 0.677],
        [0.774, 0.803, 0.773, 0.759, 0.744],
        [0.835, 0.868, 0.858, 0.823, 0.785],
    ];

    fn grid_points() -> Vec<BetaPoint> {
        let mut v = Vec::new();
        for (i, &h_x) in GRID.iter().enumerate() {
            for (j, &h_s) in GRID.iter().enumerate() {
                v.push(BetaPoint { h_x, h_s, beta: BETA[i][j] });
            }
        }
        v
    }

    #[test]
    fn grid_fit_matches_statsmodels() {
        // reference values from statsmodels OLS on the same 25 points
        let f = fit_beta_surface(&grid_points()).unwrap();
        assert!((f.a - 0.1995).abs() < 1e-10, "{f:?}");
        assert!((f.b - 0.685).abs() < 1e-10);
        assert!((f.c - 0.0252).abs() < 1e-10);
        for se in f.std_errors {
            assert!((se - 0.058_668_359_135_366_65).abs() < 1e-12);
        }
        assert!((f.p_values[0] - 2.568_429_586_481_905_7e-3).abs() < 1e-10);
        assert!((f.p_values[1] - 6.714_780_242_123_252e-11).abs() < 1e-16);
        assert!((f.p_values[2] - 0.671_712_872_477_078_6).abs() < 1e-10);
        assert!((f.r_squared - 0.861_206_438_200_332_7).abs() < 1e-12);
        assert_eq!(f.residual_df, 22);
        assert!(!f.degenerate);
    }

    #[test]
    fn exact_plane_is_recovered() {
        let pts: Vec<BetaPoint> = grid_points()
            .into_iter()
            .map(|p| BetaPoint { beta: 1.0 + 2.0 * p.h_x - 3.0 * p.h_s, ..p })
            .collect();
        let f = fit_beta_surface(&pts).unwrap();
        assert!((f.a - 1.0).abs() < 1e-10 && (f.b - 2.0).abs() < 1e-10 && (f.c + 3.0).abs() < 1e-10);
        assert!(f.degenerate);
        assert_eq!(f.p_values, [0.0; 3]);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_is_rejected() {
        let pts: Vec<BetaPoint> = (0..6)
            .map(|i| {
                let h = 0.5 + 0.05 * i as f64;
                BetaPoint { h_x: h, h_s: h, beta: i as f64 }
            })
            .collect();
        assert!(matches!(fit_beta_surface(&pts), Err(Error::RankDeficient(_))));
        let constant_hs: Vec<BetaPoint> = GRID
            .iter()
            .map(|&h_x| BetaPoint { h_x, h_s: 0.5, beta: h_x })
            .collect();
        assert!(matches!(fit_beta_surface(&constant_hs), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn too_few_points() {
        let pts = &grid_points()[..3];
        assert!(matches!(fit_beta_surface(pts), Err(Error::Parameter(_))));
    }

    #[test]
    fn residuals_add_back_to_inputs() {
        let pts = grid_points();
        let f = fit_beta_surface(&pts).unwrap();
        for p in &pts {
            let resid = p.beta - f.predict(p.h_x, p.h_s);
            assert!((f.predict(p.h_x, p.h_s) + resid - p.beta).abs() < 1e-10);
        }
        // residuals are orthogonal to the regressors
        let dot: f64 = pts.iter().map(|p| (p.beta - f.predict(p.h_x, p.h_s)) * p.h_s).sum();
        assert!(dot.abs() < 1e-10);
    }

    #[test]
    fn permutation_agrees_on_significance() {
        let p = permutation_p_values(&grid_points(), 1000, 3).unwrap();
        assert!(p[1] < 0.01, "{p:?}");
        assert!(p[2] > 0.1, "{p:?}");
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn order_does_not_matter(seed in any::<u64>()) {
            let pts = grid_points();
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut rng_from_seed(seed));
            let a = fit_beta_surface(&pts).unwrap();
            let b = fit_beta_surface(&shuffled).unwrap();
            for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.p_values.iter().zip(b.p_values) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
