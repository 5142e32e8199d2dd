//! Censored time-to-event outcomes through the ratio of restricted mean time
//! lost (RMTL), `E[τ − T∧τ | R = 1, z] / E[τ − T∧τ | R = 0, z]`.
//!
//! Censoring is handled by inverse probability of censoring weights built
//! from per-arm Kaplan–Meier estimates of the censoring distribution.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::{ContrastConfig, ContrastFit, ContrastProblem};
use crate::data::{FoldPlan, ObservationalDataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::nuisance::bundle::fit_propensity;
use crate::nuisance::irls::{self, Design, Family, IrlsConfig};
use crate::nuisance::{
    fit_boosted_poisson, fit_poisson_glm, BoostConfig, FoldNuisance, NuisanceBundle, NuisanceConfig, OutcomeModel,
};
use crate::seed::{self, Stream};
use crate::tworeg::{self, CalibrationFit, CalibrationInput, TwoRegressionConfig, TwoRegressionFit};
use crate::validate::{self, augmented_means, ValidationConfig, ValidationCurve};

/// Right-continuous Kaplan–Meier survival curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    /// Distinct times at which the curve drops.
    pub times: Vec<f64>,
    /// Survival just after each entry of `times`.
    pub surv: Vec<f64>,
}

impl KaplanMeier {
    /// Fits the curve of the time to `event`; other rows are censored.
    pub fn fit(time: &[f64], event: &[bool]) -> Result<Self> {
        if time.is_empty() {
            return Err(Error::input("Kaplan-Meier fit on no observations"));
        }
        let mut order: Vec<usize> = (0..time.len()).collect();
        order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
        let mut at_risk = time.len();
        let mut s = 1.0;
        let mut times = Vec::new();
        let mut surv = Vec::new();
        let mut k = 0;
        while k < order.len() {
            let t = time[order[k]];
            let (mut events, mut total) = (0usize, 0usize);
            while k < order.len() && time[order[k]] == t {
                events += event[order[k]] as usize;
                total += 1;
                k += 1;
            }
            if events > 0 {
                s *= 1.0 - events as f64 / at_risk as f64;
                times.push(t);
                surv.push(s);
            }
            at_risk -= total;
        }
        Ok(KaplanMeier { times, surv })
    }

    /// `S(t)`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.surv[k - 1]
        }
    }

    /// `S(t−)`.
    pub fn before(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x < t);
        if k == 0 {
            1.0
        } else {
            self.surv[k - 1]
        }
    }
}

/// Per-arm Kaplan–Meier curves of the censoring time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringModel {
    pub arm0: KaplanMeier,
    pub arm1: KaplanMeier,
    pub floor_eps: f64,
}

impl CensoringModel {
    pub fn arm(&self, r: u8) -> &KaplanMeier {
        if r == 1 {
            &self.arm1
        } else {
            &self.arm0
        }
    }
}

fn survival_fields(ds: &ObservationalDataset) -> Result<(&[f64], &[u8])> {
    let s = ds
        .survival()
        .ok_or_else(|| Error::input("dataset has no time/status columns"))?;
    Ok((&s.time, &s.status))
}

/// Kaplan–Meier of the censoring time (roles of event and censoring
/// swapped) among the rows of arm `arm`, optionally restricted to `rows`.
pub fn fit_censoring_km(ds: &ObservationalDataset, arm: u8, rows: Option<&[usize]>) -> Result<KaplanMeier> {
    let (time, status) = survival_fields(ds)?;
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..ds.n()).collect();
            &all
        }
    };
    let (t, c): (Vec<f64>, Vec<bool>) = rows
        .iter()
        .filter(|&&i| ds.r()[i] == arm)
        .map(|&i| (time[i], status[i] == 0))
        .unzip();
    if t.is_empty() {
        return Err(Error::input(format!("arm {arm} has no observations for the censoring model")));
    }
    KaplanMeier::fit(&t, &c)
}

pub fn fit_censoring(ds: &ObservationalDataset, rows: Option<&[usize]>, floor_eps: f64) -> Result<CensoringModel> {
    if !(floor_eps > 0.0 && floor_eps < 1.0) {
        return Err(Error::input("censoring floor must lie in (0, 1)"));
    }
    Ok(CensoringModel {
        arm0: fit_censoring_km(ds, 0, rows)?,
        arm1: fit_censoring_km(ds, 1, rows)?,
        floor_eps,
    })
}

/// `1{T∧τ observed} / K(T∧τ)` for a censoring survival function `k`; the
/// numerator is `Δ + (1 − Δ)·1{X ≥ τ}`. Returns the weight and whether `k`
/// had to be floored.
pub fn ipcw_weight_with(time: f64, status: u8, tau: f64, floor_eps: f64, k: impl Fn(f64) -> f64) -> (f64, bool) {
    let observed = status == 1 || time >= tau;
    if !observed {
        return (0.0, false);
    }
    let kv = k(time.min(tau));
    if kv < floor_eps {
        (1.0 / floor_eps, true)
    } else {
        (1.0 / kv, false)
    }
}

/// IPCW weight of one row using the Kaplan–Meier censoring curve of its arm
/// evaluated just before `T∧τ`.
pub fn ipcw_weight(time: f64, status: u8, arm: u8, censoring: &CensoringModel, tau: f64) -> (f64, bool) {
    let km = censoring.arm(arm);
    ipcw_weight_with(time, status, tau, censoring.floor_eps, |t| km.before(t))
}

/// Weights for every row; also returns how many were floored.
pub fn ipcw_weights(ds: &ObservationalDataset, censoring: &CensoringModel, tau: f64) -> Result<(Vec<f64>, usize)> {
    let (time, status) = survival_fields(ds)?;
    let mut floored = 0;
    let w = (0..ds.n())
        .map(|i| {
            let (w, f) = ipcw_weight(time[i], status[i], ds.r()[i], censoring, tau);
            floored += f as usize;
            w
        })
        .collect();
    if floored > 0 {
        warn!("{floored} censoring-survival evaluations were floored");
    }
    Ok((w, floored))
}

/// Replaces the outcome by the restricted time lost `τ − X∧τ`.
pub fn with_rmtl_outcome(ds: &ObservationalDataset, tau: f64) -> Result<ObservationalDataset> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::input("tau must be positive"));
    }
    let (time, _) = survival_fields(ds)?;
    let y = time.iter().map(|&t| tau - t.min(tau)).collect();
    ds.clone().with_outcome(y)
}

/// RMST working model `E(T∧τ | z) = τ·expit(ηᵀz̃)`; predicts the
/// restricted time lost `τ / (1 + exp(ηᵀz̃))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmtlModel {
    pub coefficients: Vec<f64>,
    pub tau: f64,
    /// Coefficients held at the magnitude cap.
    pub at_bound: Vec<usize>,
}

impl RmtlModel {
    pub fn predict(&self, z: &[f64]) -> f64 {
        self.tau * irls::expit(-linalg::affine(&self.coefficients, z))
    }

    pub fn predict_rmst(&self, z: &[f64]) -> f64 {
        self.tau - self.predict(z)
    }
}

/// Magnitude cap on RMST-regression coefficients.
pub const RMST_COEF_BOUND: f64 = 20.0;

/// Solves `Σ L̂ᵢ z̃ᵢ {Tᵢ∧τ − τ·expit(ηᵀz̃ᵢ)} = 0` over `rows`. `weights` is
/// indexed like `rows`.
pub fn fit_rmst_regression(
    ds: &ObservationalDataset,
    rows: &[usize],
    weights: &[f64],
    tau: f64,
    config: &IrlsConfig,
) -> Result<RmtlModel> {
    let (time, _) = survival_fields(ds)?;
    if weights.len() != rows.len() {
        return Err(Error::input("one weight per selected row is required"));
    }
    let keep: Vec<usize> = (0..rows.len()).filter(|&k| weights[k] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::input("no uncensored-by-tau mass to fit the RMST regression"));
    }
    let sel: Vec<usize> = keep.iter().map(|&k| rows[k]).collect();
    let w: Vec<f64> = keep.iter().map(|&k| weights[k]).collect();
    let y: Vec<f64> = sel.iter().map(|&i| time[i].min(tau) / tau).collect();
    let x = Design::with_intercept(ds.z(), ds.d(), &sel);
    let cfg = IrlsConfig {
        coef_bound: Some(RMST_COEF_BOUND),
        ..config.clone()
    };
    let fit = irls::irls(Family::Binomial, &x, &y, Some(&w), &cfg)?;
    if !fit.at_bound.is_empty() {
        warn!("RMST regression coefficients {:?} reached the bound {RMST_COEF_BOUND}", fit.at_bound);
    }
    Ok(RmtlModel {
        coefficients: fit.coefficients,
        tau,
        at_bound: fit.at_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalLearner {
    /// Logistic RMST working model.
    Rmst,
    /// IPCW-weighted log-linear model on the time lost.
    Poisson,
    /// IPCW-weighted boosting on the time lost.
    Boosted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmtlConfig {
    pub tau: f64,
    pub floor_eps: f64,
    pub learner: SurvivalLearner,
    /// Propensity learner, clipping, solver and boosting settings.
    pub nuisance: NuisanceConfig,
}

impl Default for RmtlConfig {
    fn default() -> Self {
        RmtlConfig {
            tau: 0.75,
            floor_eps: 0.05,
            learner: SurvivalLearner::Rmst,
            nuisance: NuisanceConfig::default(),
        }
    }
}

impl RmtlConfig {
    fn check(&self, ds: &ObservationalDataset) -> Result<()> {
        let (time, _) = survival_fields(ds)?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::input("tau must be positive"));
        }
        let max = time.iter().cloned().fold(0.0, f64::max);
        if self.tau > max {
            return Err(Error::input(format!("tau = {} exceeds the largest observed time {max}", self.tau)));
        }
        Ok(())
    }
}

/// Fits the outcome model for one arm on `rows` (already restricted to the
/// arm) with IPCW weights `w` indexed like `rows`. `rmtl` is the dataset
/// with the time-lost outcome installed.
fn fit_time_lost(
    rmtl: &ObservationalDataset,
    rows: &[usize],
    w: &[f64],
    config: &RmtlConfig,
    seed: u64,
) -> Result<OutcomeModel> {
    let (sel, ws): (Vec<usize>, Vec<f64>) = rows.iter().zip(w).filter(|(_, &w)| w > 0.0).map(|(&i, &w)| (i, w)).unzip();
    if sel.is_empty() {
        return Err(Error::input("no uncensored-by-tau rows in arm"));
    }
    Ok(match config.learner {
        SurvivalLearner::Rmst => OutcomeModel::Rmtl(fit_rmst_regression(rmtl, &sel, &ws, config.tau, &config.nuisance.irls)?),
        SurvivalLearner::Poisson => OutcomeModel::Glm(fit_poisson_glm(
            rmtl.z(),
            rmtl.d(),
            &sel,
            rmtl.y(),
            Some(&ws),
            &config.nuisance.irls,
        )?),
        SurvivalLearner::Boosted => {
            let boost = BoostConfig {
                seed,
                ..config.nuisance.boost.clone()
            };
            OutcomeModel::Boosted(fit_boosted_poisson(rmtl.z(), rmtl.d(), &sel, rmtl.y(), Some(&ws), &boost)?)
        }
    })
}

/// Cross-fitted survival nuisances: outcome and propensity models per fold,
/// plus per-row censoring weights from the fold-complement censoring curves.
#[derive(Debug, Clone)]
pub struct SurvivalBundle {
    /// The dataset with outcome `τ − X∧τ`.
    pub rmtl: ObservationalDataset,
    pub bundle: NuisanceBundle,
    pub ipcw: Vec<f64>,
    pub floored: usize,
    pub tau: f64,
}

pub fn fit_survival_bundle(ds: &ObservationalDataset, plan: &FoldPlan, config: &RmtlConfig) -> Result<SurvivalBundle> {
    config.check(ds)?;
    if plan.n() != ds.n() {
        return Err(Error::input("fold plan does not match the dataset"));
    }
    let rmtl = with_rmtl_outcome(ds, config.tau)?;
    let (time, status) = survival_fields(ds)?;
    let r = ds.r();
    let per_fold = (0..plan.k())
        .into_par_iter()
        .map(|k| -> Result<(FoldNuisance, Vec<(usize, f64, bool)>)> {
            let train = plan.complement(k);
            let censoring = fit_censoring(ds, Some(&train), config.floor_eps)?;
            let weight = |i: usize| ipcw_weight(time[i], status[i], r[i], &censoring, config.tau);
            let base = seed::derive(config.nuisance.seed ^ plan.seed(), Stream::Boosting, k as u64);
            let mut arms = Vec::with_capacity(2);
            for arm in [0u8, 1] {
                let rows: Vec<usize> = train.iter().copied().filter(|&i| r[i] == arm).collect();
                let w: Vec<f64> = rows.iter().map(|&i| weight(i).0).collect();
                arms.push(fit_time_lost(&rmtl, &rows, &w, config, seed::derive(base, Stream::Boosting, arm as u64))?);
            }
            let pi1 = fit_propensity(ds, &train, &config.nuisance)?;
            let mu1 = arms.pop().expect("two arms");
            let mu0 = arms.pop().expect("two arms");
            let held: Vec<(usize, f64, bool)> = plan
                .members(k)
                .into_iter()
                .map(|i| {
                    let (w, f) = weight(i);
                    (i, w, f)
                })
                .collect();
            Ok((FoldNuisance { mu0, mu1, pi1 }, held))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ipcw = vec![0.0; ds.n()];
    let mut floored = 0;
    let mut folds = Vec::with_capacity(per_fold.len());
    for (fold, held) in per_fold {
        for (i, w, f) in held {
            ipcw[i] = w;
            floored += f as usize;
        }
        folds.push(fold);
    }
    let bundle = NuisanceBundle::from_fold_models(&rmtl, plan.clone(), folds, config.nuisance.clip_eps, config.nuisance.clip_mu)?;
    Ok(SurvivalBundle {
        rmtl,
        bundle,
        ipcw,
        floored,
        tau: config.tau,
    })
}

/// Contrast regression for the RMTL ratio: the contrast equation on the
/// time-lost outcome with every row multiplied by its censoring weight.
pub fn solve_rmtl_contrast(sb: &SurvivalBundle, config: &ContrastConfig) -> Result<ContrastFit> {
    solve_rmtl_contrast_replicates(std::slice::from_ref(sb), config)
}

pub fn solve_rmtl_contrast_replicates(bundles: &[SurvivalBundle], config: &ContrastConfig) -> Result<ContrastFit> {
    if bundles.is_empty() {
        return Err(Error::input("at least one survival bundle is required"));
    }
    let problem = |sb| weighted_problem(sb, config);
    let solutions = bundles
        .iter()
        .map(|sb| problem(sb)?.solve(&config.solver))
        .collect::<Result<Vec<_>>>()?;
    let cov = problem(&bundles[0])?.sandwich(&solutions[0].0)?;
    Ok(crate::contrast::average_solutions(solutions, cov, config.symmetric))
}

fn weighted_problem<'a>(sb: &'a SurvivalBundle, config: &ContrastConfig) -> Result<ContrastProblem<'a>> {
    let mut p = ContrastProblem::from_bundle(&sb.rmtl, &sb.bundle, config)?;
    p.weights = Some(&sb.ipcw);
    Ok(p)
}

/// Two-regression estimator for the RMTL ratio: calibration weights are
/// inverse propensities times censoring weights.
pub fn fit_rmtl_two_regression(sb: &SurvivalBundle, config: &TwoRegressionConfig) -> Result<TwoRegressionFit> {
    let ds = &sb.rmtl;
    let mut cals = Vec::with_capacity(2);
    let mut betas = Vec::with_capacity(2);
    for arm in [0u8, 1] {
        let input = CalibrationInput {
            y: ds.y(),
            r: ds.r(),
            z: ds.z(),
            d: ds.d(),
            mu_hat: sb.bundle.mu(arm),
            pi1: sb.bundle.pi1(),
            extra_weight: Some(&sb.ipcw),
        };
        let cal = tworeg::calibrate_with(&input, arm, config)?;
        let mu_tilde = tworeg::calibrated_means(ds.z(), ds.d(), sb.bundle.mu(arm), &cal);
        betas.push(tworeg::project(ds.z(), ds.d(), &mu_tilde, config)?);
        cals.push(cal);
    }
    let arm1 = cals.pop().expect("two arms");
    let arm0 = cals.pop().expect("two arms");
    let beta1 = betas.pop().expect("two arms");
    let beta0 = betas.pop().expect("two arms");
    let delta_implied = beta1.iter().zip(&beta0).map(|(a, b)| a - b).collect();
    Ok(TwoRegressionFit {
        beta0,
        beta1,
        calibration: Some(CalibrationFit {
            arm0,
            arm1,
            source: "survival".to_string(),
        }),
        delta_implied,
    })
}

/// Per-arm log-linear regressions of the time lost, weighted by censoring
/// weights from the full-sample censoring curves; no confounding adjustment.
pub fn fit_rmtl_naive(ds: &ObservationalDataset, config: &RmtlConfig) -> Result<TwoRegressionFit> {
    config.check(ds)?;
    let rmtl = with_rmtl_outcome(ds, config.tau)?;
    let censoring = fit_censoring(ds, None, config.floor_eps)?;
    let (w, _) = ipcw_weights(ds, &censoring, config.tau)?;
    let mut betas = Vec::with_capacity(2);
    for arm in [0u8, 1] {
        let (rows, ws): (Vec<usize>, Vec<f64>) = (0..ds.n())
            .filter(|&i| ds.r()[i] == arm && w[i] > 0.0)
            .map(|i| (i, w[i]))
            .unzip();
        betas.push(fit_poisson_glm(rmtl.z(), rmtl.d(), &rows, rmtl.y(), Some(&ws), &config.nuisance.irls)?.coefficients);
    }
    let beta1 = betas.pop().expect("two arms");
    let beta0 = betas.pop().expect("two arms");
    let delta_implied = beta1.iter().zip(&beta0).map(|(a, b)| a - b).collect();
    Ok(TwoRegressionFit {
        beta0,
        beta1,
        calibration: None,
        delta_implied,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmtlValidationConfig {
    pub rmtl: RmtlConfig,
    pub base: ValidationConfig,
}

impl Default for RmtlValidationConfig {
    fn default() -> Self {
        RmtlValidationConfig {
            rmtl: RmtlConfig::default(),
            base: ValidationConfig::default(),
        }
    }
}

/// IPCW-augmented doubly robust RMTL ratio in the rows of a subgroup.
pub fn estimate_rmtl_ad(
    ds: &ObservationalDataset,
    rows: &[usize],
    c: f64,
    config: &RmtlValidationConfig,
) -> Result<validate::SubgroupAdEstimate> {
    let base = &config.base;
    if rows.len() < base.min_subgroup_size {
        return Err(Error::input(format!("subgroup has {} rows, below the minimum", rows.len())));
    }
    let sub = ds.subset(rows)?;
    let treated = sub.treated_count();
    if treated.min(sub.n() - treated) < base.min_per_arm.max(1) {
        return Err(Error::input("subgroup lacks enough rows in one arm"));
    }
    let cfg = RmtlConfig {
        nuisance: base.nuisance.clone(),
        ..config.rmtl.clone()
    };
    let rmtl = with_rmtl_outcome(&sub, cfg.tau)?;
    let censoring = fit_censoring(&sub, None, cfg.floor_eps)?;
    let (w, _) = ipcw_weights(&sub, &censoring, cfg.tau)?;
    let all: Vec<usize> = (0..sub.n()).collect();
    let pi = fit_propensity(&sub, &all, &cfg.nuisance)?;
    let mut models = Vec::with_capacity(2);
    for arm in [0u8, 1] {
        let arm_rows = sub.arm_indices(arm);
        let aw: Vec<f64> = arm_rows.iter().map(|&i| w[i]).collect();
        models.push(fit_time_lost(&rmtl, &arm_rows, &aw, &cfg, cfg.nuisance.seed ^ arm as u64)?);
    }
    let nc = &cfg.nuisance;
    let clip = |v: f64| v.clamp(nc.clip_mu, 1.0 / nc.clip_mu);
    let pi1: Vec<f64> = all.iter().map(|&i| pi.predict(sub.z_row(i)).clamp(nc.clip_eps, 1.0 - nc.clip_eps)).collect();
    let mu0: Vec<f64> = all.iter().map(|&i| clip(models[0].predict(sub.z_row(i)))).collect();
    let mu1: Vec<f64> = all.iter().map(|&i| clip(models[1].predict(sub.z_row(i)))).collect();
    let (m1, m0, se) = augmented_means(rmtl.y(), rmtl.r(), &pi1, &mu0, &mu1, Some(&w));
    validate::finish_estimate(c, rows.len(), m1, m0, se)
}

/// Validation curve for the RMTL ratio.
pub fn rmtl_validation_curve(
    ds: &ObservationalDataset,
    scores: &[f64],
    score_name: &str,
    q_grid: &[f64],
    config: &RmtlValidationConfig,
) -> Result<ValidationCurve> {
    config.rmtl.check(ds)?;
    if scores.len() != ds.n() {
        return Err(Error::input("one score per validation row is required"));
    }
    validate::build_curve(scores, q_grid, score_name, "rmtl_ratio", |c| {
        estimate_rmtl_ad(ds, &validate::subgroup_rows(scores, c), c, config)
    })
}

/// RMTL ratios in the two halves of a median split of the score.
pub fn rmtl_median_split(
    ds: &ObservationalDataset,
    scores: &[f64],
    config: &RmtlValidationConfig,
) -> Result<validate::SplitSummary> {
    config.rmtl.check(ds)?;
    if scores.len() != ds.n() {
        return Err(Error::input("one score per validation row is required"));
    }
    validate::split_with(scores, |rows, c| estimate_rmtl_ad(ds, rows, c, config))
}

/// Newton solver for the Cox partial likelihood with one covariate and no
/// ties (Breslow handling if ties occur).
pub fn cox_single_covariate(time: &[f64], event: &[bool], x: &[f64]) -> Result<f64> {
    let n = time.len();
    if n == 0 || event.iter().all(|e| !e) {
        return Err(Error::input("Cox fit needs at least one event"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
    let mut beta = 0.0;
    for iter in 0..100 {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        let (mut u, mut info) = (0.0, 0.0);
        let mut k = 0;
        while k < n {
            let t = time[order[k]];
            let start = k;
            while k < n && time[order[k]] == t {
                let i = order[k];
                let e = (beta * x[i]).exp();
                s0 += e;
                s1 += e * x[i];
                s2 += e * x[i] * x[i];
                k += 1;
            }
            for &i in &order[start..k] {
                if event[i] {
                    let m = s1 / s0;
                    u += x[i] - m;
                    info += s2 / s0 - m * m;
                }
            }
        }
        let step = u / info;
        beta += step;
        if step.abs() < 1e-12 {
            return Ok(beta);
        }
        if !beta.is_finite() {
            return Err(Error::NonConvergence {
                solver: "Cox partial likelihood",
                iterations: iter,
                score_norm: u.abs(),
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "Cox partial likelihood",
        iterations: 100,
        score_norm: f64::NAN,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousHrReport {
    pub n: usize,
    pub beta1: f64,
    pub beta0: f64,
}

/// Draws from the piecewise-constant hazard
/// `λ₀(t | Z) = m·{Z⁻¹ 1(t<1) + Z⁻² 1(1≤t<2) + Z⁻³ 1(t≥2)}`, `λ₁ = λ₀ / 2`,
/// `Z ~ U(0, 2)`, with arms of size `n / 2` and no censoring, and fits a
/// one-covariate Cox model in each arm. The hazard ratio is constant, yet
/// the two slopes differ.
pub fn check_spurious_hr(n: usize, seed_: u64, multiplier: f64) -> Result<SpuriousHrReport> {
    if n < 4 {
        return Err(Error::input("need at least four subjects"));
    }
    let fit_arm = |arm: u64, scale: f64, size: usize| -> Result<f64> {
        let mut rng = seed::stream_rng(seed_, Stream::Dgp, arm);
        let mut time = Vec::with_capacity(size);
        let mut z = Vec::with_capacity(size);
        for _ in 0..size {
            let zi: f64 = loop {
                let v: f64 = rng.random_range(0.0..2.0);
                if v > 0.0 {
                    break v;
                }
            };
            let e: f64 = -(1.0 - rng.random::<f64>()).ln();
            let a1 = scale * multiplier / zi;
            let a2 = scale * multiplier / (zi * zi);
            let a3 = scale * multiplier / (zi * zi * zi);
            let t = if e < a1 {
                e / a1
            } else if e < a1 + a2 {
                1.0 + (e - a1) / a2
            } else {
                2.0 + (e - a1 - a2) / a3
            };
            time.push(t);
            z.push(zi);
        }
        cox_single_covariate(&time, &vec![true; size], &z)
    };
    let beta1 = fit_arm(1, 0.5, n / 2)?;
    let beta0 = fit_arm(0, 1.0, n - n / 2)?;
    Ok(SpuriousHrReport { n, beta1, beta0 })
}
