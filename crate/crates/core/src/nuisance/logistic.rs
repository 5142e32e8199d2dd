use log::warn;
use serde::{Deserialize, Serialize};

use super::irls::{self, expit, Design, Family, IrlsConfig};
use crate::error::{Error, Result};
use crate::linalg;

/// Logistic propensity model `π₁(z) = expit(βᵀz̃)` with predictions clipped
/// to `[clip_eps, 1 − clip_eps]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub coefficients: Vec<f64>,
    pub clip_eps: f64,
    /// Set when the unpenalized fit diverged and a ridge refit was used.
    pub ridge_fallback: bool,
    pub iterations: usize,
}

impl PropensityModel {
    #[inline]
    pub fn predict(&self, z: &[f64]) -> f64 {
        expit(linalg::affine(&self.coefficients, z)).clamp(self.clip_eps, 1.0 - self.clip_eps)
    }
}

/// Magnitude beyond which a logistic coefficient is taken as diverging.
const SEPARATION_COEF: f64 = 25.0;

/// Ridge penalty used after separation, per observation. Equivalent to adding
/// `1e-4 · n` to the unnormalized Hessian.
pub const SEPARATION_RIDGE: f64 = 1e-4;

/// Logistic regression of `r` on `[1, z]` over the selected rows.
pub fn fit_logistic(
    z: &[f64],
    d: usize,
    rows: &[usize],
    r: &[u8],
    clip_eps: f64,
    config: &IrlsConfig,
) -> Result<PropensityModel> {
    if !(clip_eps > 0.0 && clip_eps < 0.5) {
        return Err(Error::input("clip_eps must lie in (0, 0.5)"));
    }
    let x = Design::with_intercept(z, d, rows);
    let y: Vec<f64> = rows.iter().map(|&i| r[i] as f64).collect();
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::input("logistic regression needs both classes"));
    }
    let plain = irls::irls(Family::Binomial, &x, &y, None, config);
    match plain {
        Ok(fit) if linalg::inf_norm(&fit.coefficients) < SEPARATION_COEF => Ok(PropensityModel {
            coefficients: fit.coefficients,
            clip_eps,
            ridge_fallback: false,
            iterations: fit.iterations,
        }),
        _ => {
            warn!("logistic regression diverged (separation or collinearity); refitting with ridge penalty");
            let ridge_cfg = IrlsConfig {
                ridge: SEPARATION_RIDGE,
                ..config.clone()
            };
            let fit = irls::irls(Family::Binomial, &x, &y, None, &ridge_cfg)?;
            Ok(PropensityModel {
                coefficients: fit.coefficients,
                clip_eps,
                ridge_fallback: true,
                iterations: fit.iterations,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_is_logit_of_share() {
        let n = 100;
        let r: Vec<u8> = (0..n).map(|i| (i < 30) as u8).collect();
        let rows: Vec<usize> = (0..n).collect();
        let m = fit_logistic(&[], 0, &rows, &r, 0.01, &IrlsConfig::default()).unwrap();
        assert!((m.coefficients[0] - (0.3f64 / 0.7).ln()).abs() < 1e-9);
        assert!((m.coefficients[0] + 0.8473).abs() < 1e-4);
        assert!(!m.ridge_fallback);
    }

    #[test]
    fn perfect_separation_falls_back_to_ridge() {
        let n = 40;
        let z: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
        let r: Vec<u8> = z.iter().map(|&v| (v > 0.0) as u8).collect();
        let rows: Vec<usize> = (0..n).collect();
        let m = fit_logistic(&z, 1, &rows, &r, 0.01, &IrlsConfig::default()).unwrap();
        assert!(m.ridge_fallback);
        for i in 0..n {
            let p = m.predict(&z[i..i + 1]);
            assert!((0.01..=0.99).contains(&p));
        }
    }

    #[test]
    fn single_class_rejected() {
        let rows: Vec<usize> = (0..5).collect();
        assert!(fit_logistic(&[], 0, &rows, &[1; 5], 0.01, &IrlsConfig::default()).is_err());
    }
}
