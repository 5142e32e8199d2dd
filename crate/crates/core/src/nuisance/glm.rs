use serde::{Deserialize, Serialize};

use super::irls::{self, Design, Family, IrlsConfig};
use crate::error::{Error, Result};
use crate::linalg;

/// Log-linear working model `E(Y | z) = exp(βᵀz̃)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonGlmModel {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl PoissonGlmModel {
    #[inline]
    pub fn log_predict(&self, z: &[f64]) -> f64 {
        linalg::affine(&self.coefficients, z)
    }

    #[inline]
    pub fn predict(&self, z: &[f64]) -> f64 {
        self.log_predict(z).min(700.0).exp()
    }
}

/// Weighted Poisson regression of `y` on `[1, z]` over the selected rows of a
/// row-major covariate buffer. `weights`, when given, is indexed like `rows`.
pub fn fit_poisson_glm(
    z: &[f64],
    d: usize,
    rows: &[usize],
    y: &[f64],
    weights: Option<&[f64]>,
    config: &IrlsConfig,
) -> Result<PoissonGlmModel> {
    if rows.is_empty() {
        return Err(Error::input("Poisson regression on an empty sample"));
    }
    let x = Design::with_intercept(z, d, rows);
    let yy: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    if let Some(w) = weights {
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::input("Poisson regression weights must be positive"));
        }
    }
    let fit = irls::irls(Family::Poisson, &x, &yy, weights, config)?;
    Ok(PoissonGlmModel {
        coefficients: fit.coefficients,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;
    use rand_distr::{Distribution, Normal, Poisson};

    #[test]
    fn intercept_only_is_log_mean() {
        let m = fit_poisson_glm(&[], 0, &[0, 1, 2], &[1.0, 2.0, 3.0], None, &IrlsConfig::default()).unwrap();
        assert!((m.coefficients[0] - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn doubled_weights_leave_coefficients_unchanged() {
        let mut rng = seed::rng(11);
        let n = 500;
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = z
            .iter()
            .map(|&v| Poisson::new((0.3 + 0.7 * v as f64).exp()).unwrap().sample(&mut rng))
            .collect();
        let rows: Vec<usize> = (0..n).collect();
        let w1 = vec![1.0; n];
        let w2 = vec![2.0; n];
        let cfg = IrlsConfig::default();
        let a = fit_poisson_glm(&z, 1, &rows, &y, Some(&w1), &cfg).unwrap();
        let b = fit_poisson_glm(&z, 1, &rows, &y, Some(&w2), &cfg).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn score_equation_holds_at_solution() {
        let mut rng = seed::rng(5);
        let n = 2000;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let z: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let rate: f64 = (0.2 + 0.4 * z[2 * i] - 0.3 * z[2 * i + 1]).exp();
                Poisson::new(rate).unwrap().sample(&mut rng)
            })
            .collect();
        let rows: Vec<usize> = (0..n).collect();
        let cfg = IrlsConfig::default();
        let m = fit_poisson_glm(&z, 2, &rows, &y, None, &cfg).unwrap();
        let x = Design::with_intercept(&z, 2, &rows);
        let s = irls::score(Family::Poisson, &x, &y, None, &m.coefficients);
        assert!(linalg::inf_norm(&s) <= 10.0 * cfg.tol);
    }

    #[test]
    fn all_zero_outcomes_rejected() {
        let err = fit_poisson_glm(&[0.0, 1.0], 1, &[0, 1], &[0.0, 0.0], None, &IrlsConfig::default());
        assert!(err.is_err());
    }
}
