//! Calibrated two-regression estimator and the naive per-arm baseline.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::nuisance::irls::{self, Design, Family, IrlsConfig};
use crate::nuisance::{fit_poisson_glm, NuisanceBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoRegressionConfig {
    pub irls: IrlsConfig,
    /// Condition number of the standardized weighted Gram matrix above which
    /// the `log μ̂` column is treated as collinear with `z̃` and dropped.
    pub collinearity_threshold: f64,
}

impl Default for TwoRegressionConfig {
    fn default() -> Self {
        TwoRegressionConfig {
            irls: IrlsConfig::default(),
            collinearity_threshold: 1e8,
        }
    }
}

/// Calibration `μ̃_r(z) = exp(α·log μ̂_r(z) + γᵀz̃)` for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCalibration {
    pub arm: u8,
    pub alpha: f64,
    /// Intercept first.
    pub gamma: Vec<f64>,
    /// Set when `log μ̂_r` was collinear with `z̃` and removed (`alpha = 0`).
    pub log_column_dropped: bool,
    pub condition: f64,
}

impl ArmCalibration {
    #[inline]
    pub fn apply(&self, mu_hat: f64, z: &[f64]) -> f64 {
        (self.alpha * mu_hat.ln() + linalg::affine(&self.gamma, z)).min(700.0).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub arm0: ArmCalibration,
    pub arm1: ArmCalibration,
    /// Initial learner that produced `μ̂_r`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoRegressionFit {
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    /// Absent for the naive fit.
    pub calibration: Option<CalibrationFit>,
    /// `β̂₁ − β̂₀`, the log-CATE coefficients.
    pub delta_implied: Vec<f64>,
}

impl TwoRegressionFit {
    fn new(beta0: Vec<f64>, beta1: Vec<f64>, calibration: Option<CalibrationFit>) -> Self {
        let delta_implied = beta1.iter().zip(&beta0).map(|(a, b)| a - b).collect();
        TwoRegressionFit {
            beta0,
            beta1,
            calibration,
            delta_implied,
        }
    }

    /// Log-scale CATE score `(β̂₁ − β̂₀)ᵀz̃`.
    pub fn log_score(&self, z: &[f64]) -> f64 {
        linalg::affine(&self.delta_implied, z)
    }
}

/// Inputs to one arm's calibration step.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationInput<'a> {
    pub y: &'a [f64],
    pub r: &'a [u8],
    pub z: &'a [f64],
    pub d: usize,
    /// Cross-fitted initial predictions `μ̂_r(Zᵢ)`, all rows.
    pub mu_hat: &'a [f64],
    /// Cross-fitted propensities `π̂₁(Zᵢ)`, all rows.
    pub pi1: &'a [f64],
    /// Extra per-row weight multiplying `Ŵᵢ(r)` (censoring weights).
    pub extra_weight: Option<&'a [f64]>,
}

/// Solves the weighted calibration equation for arm `arm`.
pub fn calibrate_with(input: &CalibrationInput, arm: u8, config: &TwoRegressionConfig) -> Result<ArmCalibration> {
    let d = input.d;
    let mut rows = Vec::new();
    let mut w = Vec::new();
    for i in 0..input.y.len() {
        if input.r[i] != arm {
            continue;
        }
        let p = if arm == 1 { input.pi1[i] } else { 1.0 - input.pi1[i] };
        let wi = input.extra_weight.map_or(1.0, |e| e[i]) / p;
        if wi > 0.0 {
            rows.push(i);
            w.push(wi);
        }
    }
    if rows.len() <= d + 2 {
        return Err(Error::input(format!("arm {arm} has too few weighted rows to calibrate")));
    }
    if rows.iter().any(|&i| !(input.mu_hat[i] > 0.0)) {
        return Err(Error::input("initial predictions must be positive"));
    }
    let p = d + 2;
    let mut data = Vec::with_capacity(rows.len() * p);
    for &i in &rows {
        data.push(1.0);
        data.extend_from_slice(&input.z[i * d..(i + 1) * d]);
        data.push(input.mu_hat[i].ln());
    }
    let full = Design::new(rows.len(), p, data);
    let y: Vec<f64> = rows.iter().map(|&i| input.y[i]).collect();

    let condition = standardized_condition(&full, &w);
    let dropped = !(condition <= config.collinearity_threshold);
    let x = if dropped {
        warn!("arm {arm}: log initial prediction is collinear with the covariates (condition {condition:.2e}); dropping it");
        full.drop_column(p - 1)
    } else {
        full
    };
    let fit = irls::irls(Family::Poisson, &x, &y, Some(&w), &config.irls)?;
    let (gamma, alpha) = if dropped {
        (fit.coefficients, 0.0)
    } else {
        (fit.coefficients[..d + 1].to_vec(), fit.coefficients[d + 1])
    };
    Ok(ArmCalibration {
        arm,
        alpha,
        gamma,
        log_column_dropped: dropped,
        condition,
    })
}

/// Condition number of the weighted Gram matrix after scaling every column
/// to unit weighted second moment, with the non-intercept columns centred.
fn standardized_condition(x: &Design, w: &[f64]) -> f64 {
    let (n, p) = (x.n(), x.p());
    let total: f64 = w.iter().sum();
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += w[i] * v / total;
        }
    }
    mean[0] = 0.0;
    let mut centred = Vec::with_capacity(n * p);
    for i in 0..n {
        centred.extend(x.row(i).iter().zip(&mean).map(|(v, m)| v - m));
    }
    let gram = Design::new(n, p, centred).gram(Some(w));
    let scale: Vec<f64> = (0..p).map(|j| gram[(j, j)].sqrt()).collect();
    if scale.iter().any(|&s| !(s > 0.0)) {
        return f64::INFINITY;
    }
    let std = nalgebra::DMatrix::from_fn(p, p, |a, b| gram[(a, b)] / (scale[a] * scale[b]));
    linalg::condition_number_sym(&std)
}

/// Calibrates arm `arm` using the cross-fitted nuisances of `bundle`.
pub fn calibrate(
    ds: &ObservationalDataset,
    bundle: &NuisanceBundle,
    arm: u8,
    config: &TwoRegressionConfig,
) -> Result<ArmCalibration> {
    if bundle.n() != ds.n() {
        return Err(Error::input("nuisance bundle does not match the dataset"));
    }
    let input = CalibrationInput {
        y: ds.y(),
        r: ds.r(),
        z: ds.z(),
        d: ds.d(),
        mu_hat: bundle.mu(arm),
        pi1: bundle.pi1(),
        extra_weight: None,
    };
    calibrate_with(&input, arm, config)
}

/// Calibrated predictions `μ̃_r(Zᵢ)` for every row.
pub fn calibrated_means(z: &[f64], d: usize, mu_hat: &[f64], cal: &ArmCalibration) -> Vec<f64> {
    (0..mu_hat.len())
        .map(|i| cal.apply(mu_hat[i], &z[i * d..(i + 1) * d]))
        .collect()
}

/// Unweighted Poisson-score projection of `mu_tilde` onto `exp(βᵀz̃)` over
/// all rows.
pub fn project(z: &[f64], d: usize, mu_tilde: &[f64], config: &TwoRegressionConfig) -> Result<Vec<f64>> {
    if mu_tilde.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::input("calibrated means must be positive and finite"));
    }
    let rows: Vec<usize> = (0..mu_tilde.len()).collect();
    let x = Design::with_intercept(z, d, &rows);
    Ok(irls::irls(Family::Poisson, &x, mu_tilde, None, &config.irls)?.coefficients)
}

/// Calibrates and projects both arms with cross-fitted nuisances.
pub fn fit_two_regression(
    ds: &ObservationalDataset,
    bundle: &NuisanceBundle,
    source: &str,
    config: &TwoRegressionConfig,
) -> Result<TwoRegressionFit> {
    let fits = [0u8, 1].map(|arm| -> Result<(ArmCalibration, Vec<f64>)> {
        let cal = calibrate(ds, bundle, arm, config)?;
        let mu_tilde = calibrated_means(ds.z(), ds.d(), bundle.mu(arm), &cal);
        let beta = project(ds.z(), ds.d(), &mu_tilde, config)?;
        Ok((cal, beta))
    });
    let [f0, f1] = fits;
    let ((arm0, beta0), (arm1, beta1)) = (f0?, f1?);
    Ok(TwoRegressionFit::new(
        beta0,
        beta1,
        Some(CalibrationFit {
            arm0,
            arm1,
            source: source.to_string(),
        }),
    ))
}

/// Per-arm unweighted Poisson regressions on the observed data.
pub fn fit_naive(ds: &ObservationalDataset, config: &TwoRegressionConfig) -> Result<TwoRegressionFit> {
    let treated = ds.arm_indices(1);
    let control = ds.arm_indices(0);
    if treated.is_empty() || control.is_empty() {
        return Err(Error::input("naive regression needs both arms nonempty"));
    }
    let b1 = fit_poisson_glm(ds.z(), ds.d(), &treated, ds.y(), None, &config.irls)?;
    let b0 = fit_poisson_glm(ds.z(), ds.d(), &control, ds.y(), None, &config.irls)?;
    Ok(TwoRegressionFit::new(b0.coefficients, b1.coefficients, None))
}
