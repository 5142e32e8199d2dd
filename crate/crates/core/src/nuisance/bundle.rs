use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boost::{fit_boosted_poisson, BoostConfig, BoostedPoissonModel};
use super::glm::{fit_poisson_glm, PoissonGlmModel};
use super::irls::IrlsConfig;
use super::logistic::{fit_logistic, PropensityModel};
use crate::data::{FoldPlan, ObservationalDataset};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};
use crate::survival::RmtlModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeLearner {
    Glm,
    #[serde(alias = "boost")]
    Boosted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityLearner {
    Logistic,
    /// Ignore covariates and use a fixed propensity.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    pub outcome_learner: OutcomeLearner,
    pub propensity_learner: PropensityLearner,
    pub clip_eps: f64,
    pub clip_mu: f64,
    pub irls: IrlsConfig,
    pub boost: BoostConfig,
    /// Root seed for learners that consume randomness.
    pub seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            outcome_learner: OutcomeLearner::Boosted,
            propensity_learner: PropensityLearner::Logistic,
            clip_eps: 0.01,
            clip_mu: 1e-3,
            irls: IrlsConfig::default(),
            boost: BoostConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum OutcomeModel {
    Glm(PoissonGlmModel),
    Boosted(BoostedPoissonModel),
    Rmtl(RmtlModel),
    Constant { value: f64 },
}

impl OutcomeModel {
    pub fn predict(&self, z: &[f64]) -> f64 {
        match self {
            OutcomeModel::Glm(m) => m.predict(z),
            OutcomeModel::Boosted(m) => m.predict(z),
            OutcomeModel::Rmtl(m) => m.predict(z),
            OutcomeModel::Constant { value } => *value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum PropensityFit {
    Logistic(PropensityModel),
    Constant { value: f64 },
}

impl PropensityFit {
    pub fn predict(&self, z: &[f64]) -> f64 {
        match self {
            PropensityFit::Logistic(m) => m.predict(z),
            PropensityFit::Constant { value } => *value,
        }
    }
}

/// Models trained on the complement of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldNuisance {
    pub mu0: OutcomeModel,
    pub mu1: OutcomeModel,
    pub pi1: PropensityFit,
}

/// Fold models plus their cross-fitted, clipped predictions: row `i` is
/// predicted by the models trained without fold `fold_of(i)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuisanceBundle {
    fold_plan: FoldPlan,
    folds: Vec<FoldNuisance>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    pi1: Vec<f64>,
    clip_eps: f64,
    clip_mu: f64,
}

impl NuisanceBundle {
    /// Builds a bundle from already-fitted fold models.
    pub fn from_fold_models(
        ds: &ObservationalDataset,
        fold_plan: FoldPlan,
        folds: Vec<FoldNuisance>,
        clip_eps: f64,
        clip_mu: f64,
    ) -> Result<Self> {
        if fold_plan.n() != ds.n() {
            return Err(Error::input(format!(
                "fold plan covers {} rows but the dataset has {}",
                fold_plan.n(),
                ds.n()
            )));
        }
        if folds.len() != fold_plan.k() {
            return Err(Error::input(format!(
                "expected {} fold models, got {}",
                fold_plan.k(),
                folds.len()
            )));
        }
        check_clips(clip_eps, clip_mu)?;
        let n = ds.n();
        let (mut mu0, mut mu1, mut pi1) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let f = &folds[fold_plan.fold_of(i)];
            let z = ds.z_row(i);
            mu0[i] = clip_mean(f.mu0.predict(z), clip_mu);
            mu1[i] = clip_mean(f.mu1.predict(z), clip_mu);
            pi1[i] = f.pi1.predict(z).clamp(clip_eps, 1.0 - clip_eps);
        }
        Ok(NuisanceBundle {
            fold_plan,
            folds,
            mu0,
            mu1,
            pi1,
            clip_eps,
            clip_mu,
        })
    }

    /// Builds a bundle from per-row nuisance values supplied directly, e.g.
    /// the true functions of a simulation. No fold models are stored.
    pub fn from_predictions(fold_plan: FoldPlan, mu0: Vec<f64>, mu1: Vec<f64>, pi1: Vec<f64>) -> Result<Self> {
        let n = fold_plan.n();
        if mu0.len() != n || mu1.len() != n || pi1.len() != n {
            return Err(Error::input("nuisance prediction lengths disagree with the fold plan"));
        }
        if mu0.iter().chain(&mu1).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::input("outcome means must be positive and finite"));
        }
        if pi1.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::input("propensities must lie in (0, 1)"));
        }
        Ok(NuisanceBundle {
            fold_plan,
            folds: Vec::new(),
            mu0,
            mu1,
            pi1,
            clip_eps: 0.0,
            clip_mu: 0.0,
        })
    }

    pub fn fold_plan(&self) -> &FoldPlan {
        &self.fold_plan
    }

    pub fn folds(&self) -> &[FoldNuisance] {
        &self.folds
    }

    pub fn n(&self) -> usize {
        self.mu0.len()
    }

    /// Cross-fitted `μ̂₀` per row.
    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    /// Cross-fitted `μ̂₁` per row.
    pub fn mu1(&self) -> &[f64] {
        &self.mu1
    }

    pub fn mu(&self, arm: u8) -> &[f64] {
        if arm == 1 {
            &self.mu1
        } else {
            &self.mu0
        }
    }

    /// Cross-fitted `π̂₁` per row.
    pub fn pi1(&self) -> &[f64] {
        &self.pi1
    }

    pub fn clip_eps(&self) -> f64 {
        self.clip_eps
    }

    pub fn clip_mu(&self) -> f64 {
        self.clip_mu
    }

    /// Fold-averaged outcome-mean prediction at a new covariate vector.
    pub fn predict_mean(&self, arm: u8, z: &[f64]) -> Result<f64> {
        if self.folds.is_empty() {
            return Err(Error::input("bundle holds no fold models"));
        }
        let total: f64 = self
            .folds
            .iter()
            .map(|f| {
                let m = if arm == 1 { &f.mu1 } else { &f.mu0 };
                clip_mean(m.predict(z), self.clip_mu)
            })
            .sum();
        Ok(total / self.folds.len() as f64)
    }
}

fn check_clips(clip_eps: f64, clip_mu: f64) -> Result<()> {
    if !(clip_eps > 0.0 && clip_eps < 0.5) {
        return Err(Error::input("clip_eps must lie in (0, 0.5)"));
    }
    if !(clip_mu > 0.0 && clip_mu < 1.0) {
        return Err(Error::input("clip_mu must lie in (0, 1)"));
    }
    Ok(())
}

#[inline]
fn clip_mean(v: f64, clip_mu: f64) -> f64 {
    v.clamp(clip_mu, 1.0 / clip_mu)
}

/// Fits an outcome-mean model on the given rows.
pub fn fit_outcome(
    ds: &ObservationalDataset,
    rows: &[usize],
    config: &NuisanceConfig,
    seed: u64,
) -> Result<OutcomeModel> {
    match config.outcome_learner {
        OutcomeLearner::Glm => Ok(OutcomeModel::Glm(fit_poisson_glm(
            ds.z(),
            ds.d(),
            rows,
            ds.y(),
            None,
            &config.irls,
        )?)),
        OutcomeLearner::Boosted => {
            let boost = BoostConfig {
                seed,
                ..config.boost.clone()
            };
            Ok(OutcomeModel::Boosted(fit_boosted_poisson(
                ds.z(),
                ds.d(),
                rows,
                ds.y(),
                None,
                &boost,
            )?))
        }
    }
}

/// Fits a propensity model on the given rows.
pub fn fit_propensity(ds: &ObservationalDataset, rows: &[usize], config: &NuisanceConfig) -> Result<PropensityFit> {
    match config.propensity_learner {
        PropensityLearner::Logistic => Ok(PropensityFit::Logistic(fit_logistic(
            ds.z(),
            ds.d(),
            rows,
            ds.r(),
            config.clip_eps,
            &config.irls,
        )?)),
        PropensityLearner::Constant(value) => {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::input("constant propensity must lie in (0, 1)"));
            }
            Ok(PropensityFit::Constant { value })
        }
    }
}

/// Fits `μ̂₀`, `μ̂₁` and `π̂₁` on each fold complement and assembles the
/// cross-fitted predictions.
pub fn fit_nuisance_bundle(
    ds: &ObservationalDataset,
    fold_plan: &FoldPlan,
    config: &NuisanceConfig,
) -> Result<NuisanceBundle> {
    check_clips(config.clip_eps, config.clip_mu)?;
    if fold_plan.n() != ds.n() {
        return Err(Error::input("fold plan does not match the dataset"));
    }
    let r = ds.r();
    let folds = (0..fold_plan.k())
        .into_par_iter()
        .map(|k| {
            let train = fold_plan.complement(k);
            let (treated, control): (Vec<usize>, Vec<usize>) = train.iter().partition(|&&i| r[i] == 1);
            if treated.is_empty() || control.is_empty() {
                return Err(Error::input(format!("complement of fold {} lacks one treatment arm", k + 1)));
            }
            let base = seed::derive(config.seed ^ fold_plan.seed(), Stream::Boosting, k as u64);
            Ok(FoldNuisance {
                mu0: fit_outcome(ds, &control, config, seed::derive(base, Stream::Boosting, 0))?,
                mu1: fit_outcome(ds, &treated, config, seed::derive(base, Stream::Boosting, 1))?,
                pi1: fit_propensity(ds, &train, config)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NuisanceBundle::from_fold_models(ds, fold_plan.clone(), folds, config.clip_eps, config.clip_mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_folds;
    use rand::Rng;
    use rand_distr::{Distribution, Poisson};

    fn dataset(n: usize, seed_: u64) -> ObservationalDataset {
        let mut rng = seed::rng(seed_);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<u8> = (0..n).map(|i| (rng.random::<f64>() < 0.5 + 0.2 * z[i]) as u8).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let mu = (0.2 + 0.5 * z[i] + 0.3 * r[i] as f64).exp();
                Poisson::new(mu).unwrap().sample(&mut rng)
            })
            .collect();
        ObservationalDataset::new(y, r, z, 1).unwrap()
    }

    fn glm_config() -> NuisanceConfig {
        NuisanceConfig {
            outcome_learner: OutcomeLearner::Glm,
            ..Default::default()
        }
    }

    #[test]
    fn prediction_ignores_own_outcome() {
        let ds = dataset(300, 1);
        let plan = make_folds(300, 2, ds.r(), 5).unwrap();
        for learner in [OutcomeLearner::Glm, OutcomeLearner::Boosted] {
            let cfg = NuisanceConfig {
                outcome_learner: learner,
                boost: BoostConfig {
                    n_trees: Some(20),
                    ..Default::default()
                },
                ..Default::default()
            };
            let a = fit_nuisance_bundle(&ds, &plan, &cfg).unwrap();
            let mut y = ds.y().to_vec();
            y[7] += 25.0;
            let perturbed = ds.clone().with_outcome(y).unwrap();
            let b = fit_nuisance_bundle(&perturbed, &plan, &cfg).unwrap();
            assert_eq!(a.mu0()[7], b.mu0()[7]);
            assert_eq!(a.mu1()[7], b.mu1()[7]);
            assert_eq!(a.pi1()[7], b.pi1()[7]);
        }
    }

    #[test]
    fn rows_use_their_fold_complement_model() {
        let ds = dataset(200, 2);
        let plan = make_folds(200, 4, ds.r(), 9).unwrap();
        let b = fit_nuisance_bundle(&ds, &plan, &glm_config()).unwrap();
        for i in 0..200 {
            let f = &b.folds()[plan.fold_of(i)];
            assert_eq!(b.mu1()[i], f.mu1.predict(ds.z_row(i)).clamp(1e-3, 1e3));
            assert_eq!(b.pi1()[i], f.pi1.predict(ds.z_row(i)).clamp(0.01, 0.99));
        }
    }

    #[test]
    fn cross_fitted_glm_tracks_in_sample_fit() {
        let ds = dataset(4000, 3);
        let plan = make_folds(4000, 5, ds.r(), 1).unwrap();
        let b = fit_nuisance_bundle(&ds, &plan, &glm_config()).unwrap();
        let treated = ds.arm_indices(1);
        let full = fit_poisson_glm(ds.z(), 1, &treated, ds.y(), None, &IrlsConfig::default()).unwrap();
        for i in 0..4000 {
            let rel = b.mu1()[i] / full.predict(ds.z_row(i)) - 1.0;
            assert!(rel.abs() < 0.05, "row {i}: {rel}");
        }
    }

    #[test]
    fn predictions_respect_clips() {
        let ds = dataset(200, 4);
        let plan = make_folds(200, 2, ds.r(), 3).unwrap();
        let cfg = NuisanceConfig {
            clip_eps: 0.45,
            clip_mu: 0.9,
            ..glm_config()
        };
        let b = fit_nuisance_bundle(&ds, &plan, &cfg).unwrap();
        assert!(b.pi1().iter().all(|&p| (0.45..=0.55).contains(&p)));
        assert!(b.mu0().iter().chain(b.mu1()).all(|&m| (0.9..=1.0 / 0.9).contains(&m)));
    }
}
