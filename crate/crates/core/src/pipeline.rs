//! One-call training of every CATE scoring method on a dataset, shared by
//! the simulation runner and the command-line front end.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::{partition_bundles, solve_contrast_replicates, ContrastConfig, ContrastFit};
use crate::data::{make_folds, normalize_exposure, ObservationalDataset, OutcomeMode};
use crate::error::{Error, Result};
use crate::linalg;
use crate::nuisance::{fit_boosted_poisson, fit_nuisance_bundle, BoostConfig, NuisanceBundle, NuisanceConfig, OutcomeLearner};
use crate::seed::{self, Stream};
use crate::survival::{
    fit_censoring, fit_rmtl_naive, fit_rmtl_two_regression, fit_survival_bundle, ipcw_weights,
    solve_rmtl_contrast_replicates, with_rmtl_outcome, RmtlConfig, SurvivalBundle, SurvivalLearner,
};
use crate::tworeg::{fit_naive, fit_two_regression, TwoRegressionConfig, TwoRegressionFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Contrast,
    Tworeg,
    Naive,
    BoostingRatio,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Contrast, Method::Tworeg, Method::Naive, Method::BoostingRatio];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Contrast => "contrast",
            Method::Tworeg => "tworeg",
            Method::Naive => "naive",
            Method::BoostingRatio => "boosting_ratio",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrast" => Ok(Method::Contrast),
            "tworeg" | "two_regression" => Ok(Method::Tworeg),
            "naive" => Ok(Method::Naive),
            "boost" | "boosting" | "boosting_ratio" => Ok(Method::BoostingRatio),
            other => Err(Error::input(format!(
                "unknown method `{other}`; expected contrast, tworeg, naive or boost"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub methods: Vec<Method>,
    /// Nuisance learners for count outcomes.
    pub nuisance: NuisanceConfig,
    pub contrast: ContrastConfig,
    pub tworeg: TwoRegressionConfig,
    /// Present for survival outcomes.
    pub rmtl: Option<RmtlConfig>,
    /// Choose the boosting tree count by cross-validation once per arm on
    /// the full sample and reuse it for every fold fit.
    pub tune_boosting_once: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            methods: Method::ALL.to_vec(),
            nuisance: NuisanceConfig::default(),
            contrast: ContrastConfig::default(),
            tworeg: TwoRegressionConfig::default(),
            rmtl: None,
            tune_boosting_once: false,
        }
    }
}

/// A trained CATE score, evaluated on the log scale.
#[derive(Debug, Clone)]
pub enum Scorer {
    /// `δᵀz̃`.
    Linear(Vec<f64>),
    /// `log μ̂₁(z) − log μ̂₀(z)` with fold-averaged outcome models.
    Ratio(Box<NuisanceBundle>),
}

impl Scorer {
    pub fn log_score(&self, z: &[f64]) -> Result<f64> {
        match self {
            Scorer::Linear(delta) => Ok(linalg::affine(delta, z)),
            Scorer::Ratio(bundle) => Ok(bundle.predict_mean(1, z)?.ln() - bundle.predict_mean(0, z)?.ln()),
        }
    }

    /// Scores for row-major covariates with `d` columns.
    pub fn score_rows(&self, z: &[f64], d: usize) -> Result<Vec<f64>> {
        if let Scorer::Linear(delta) = self {
            if delta.len() != d + 1 {
                return Err(Error::input("score dimension does not match the covariates"));
            }
        }
        z.par_chunks(d).map(|row| self.log_score(row)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MethodFit {
    pub method: Method,
    pub scorer: Scorer,
    pub contrast: Option<ContrastFit>,
    pub regression: Option<TwoRegressionFit>,
}

impl MethodFit {
    fn linear(method: Method, delta: Vec<f64>) -> Self {
        MethodFit {
            method,
            scorer: Scorer::Linear(delta),
            contrast: None,
            regression: None,
        }
    }
}

/// Fits every method in `config.methods`. Failures shared by all methods
/// (bad input, nuisance fits) are returned as `Err`; failures of a single
/// method are reported in its slot.
pub fn fit_pipeline(ds: &ObservationalDataset, config: &PipelineConfig) -> Result<Vec<(Method, Result<MethodFit>)>> {
    if config.methods.is_empty() {
        return Err(Error::input("at least one method is required"));
    }
    match (&config.rmtl, ds.mode()) {
        (Some(rmtl), OutcomeMode::Survival) => fit_survival(ds, config, rmtl),
        (None, OutcomeMode::Count) => fit_count(ds, config),
        (Some(_), OutcomeMode::Count) => Err(Error::input("survival analysis needs time and status columns")),
        (None, OutcomeMode::Survival) => Err(Error::input("a survival dataset needs an RMTL horizon (tau)")),
    }
}

/// Fixes the boosting tree count for both arms by cross-validation on the
/// whole sample, averaged over arms.
fn tuned(
    ds: &ObservationalDataset,
    config: &NuisanceConfig,
    rows_of: impl Fn(u8) -> Vec<usize>,
    w: Option<&[f64]>,
) -> Result<NuisanceConfig> {
    if config.boost.n_trees.is_some() {
        return Ok(config.clone());
    }
    let mut counts = Vec::with_capacity(2);
    for arm in [0u8, 1] {
        let rows = rows_of(arm);
        let weights: Option<Vec<f64>> = w.map(|w| rows.iter().map(|&i| w[i]).collect());
        let boost = BoostConfig {
            seed: seed::derive(config.seed, Stream::Boosting, 100 + arm as u64),
            ..config.boost.clone()
        };
        counts.push(fit_boosted_poisson(ds.z(), ds.d(), &rows, ds.y(), weights.as_deref(), &boost)?.n_trees);
    }
    let mut out = config.clone();
    out.boost.n_trees = Some((counts[0] + counts[1]).div_ceil(2));
    Ok(out)
}

fn learner_name(config: &NuisanceConfig) -> &'static str {
    match config.outcome_learner {
        OutcomeLearner::Glm => "glm",
        OutcomeLearner::Boosted => "boosting",
    }
}

fn fit_count(ds: &ObservationalDataset, config: &PipelineConfig) -> Result<Vec<(Method, Result<MethodFit>)>> {
    let normalized;
    let ds = if ds.exposure().is_some() {
        normalized = normalize_exposure(ds)?;
        &normalized
    } else {
        ds
    };
    let want = |m| config.methods.contains(&m);
    let mut nuisance = config.nuisance.clone();
    let boosted = nuisance.outcome_learner == OutcomeLearner::Boosted;
    if boosted && config.tune_boosting_once {
        nuisance = tuned(ds, &nuisance, |arm| ds.arm_indices(arm), None)?;
    }
    let needs_bundles = want(Method::Contrast) || want(Method::Tworeg) || (want(Method::BoostingRatio) && boosted);
    let bundles = if needs_bundles {
        partition_bundles(ds, &nuisance, &config.contrast)?
    } else {
        Vec::new()
    };
    let mut out = Vec::with_capacity(config.methods.len());
    for &m in &config.methods {
        let fit = match m {
            Method::Contrast => solve_contrast_replicates(ds, &bundles, &config.contrast).map(|fit| MethodFit {
                scorer: Scorer::Linear(fit.delta.clone()),
                contrast: Some(fit),
                ..MethodFit::linear(m, Vec::new())
            }),
            Method::Tworeg => fit_two_regression(ds, &bundles[0], learner_name(&nuisance), &config.tworeg).map(regression(m)),
            Method::Naive => fit_naive(ds, &config.tworeg).map(regression(m)),
            Method::BoostingRatio if boosted => Ok(ratio(m, bundles[0].clone())),
            Method::BoostingRatio => boosting_bundle(ds, config).map(|b| ratio(m, b)),
        };
        out.push((m, fit));
    }
    Ok(out)
}

fn regression(m: Method) -> impl Fn(TwoRegressionFit) -> MethodFit {
    move |fit| MethodFit {
        scorer: Scorer::Linear(fit.delta_implied.clone()),
        regression: Some(fit),
        ..MethodFit::linear(m, Vec::new())
    }
}

fn ratio(method: Method, bundle: NuisanceBundle) -> MethodFit {
    MethodFit {
        method,
        scorer: Scorer::Ratio(Box::new(bundle)),
        contrast: None,
        regression: None,
    }
}

fn boosting_bundle(ds: &ObservationalDataset, config: &PipelineConfig) -> Result<NuisanceBundle> {
    let mut nuisance = NuisanceConfig {
        outcome_learner: OutcomeLearner::Boosted,
        ..config.nuisance.clone()
    };
    if config.tune_boosting_once {
        nuisance = tuned(ds, &nuisance, |arm| ds.arm_indices(arm), None)?;
    }
    let plan = make_folds(ds.n(), config.contrast.folds, ds.r(), seed::derive(config.contrast.seed, Stream::Partition, 0))?;
    fit_nuisance_bundle(ds, &plan, &nuisance)
}

fn fit_survival(
    ds: &ObservationalDataset,
    config: &PipelineConfig,
    rmtl: &RmtlConfig,
) -> Result<Vec<(Method, Result<MethodFit>)>> {
    let want = |m| config.methods.contains(&m);
    let contrast = &config.contrast;
    if contrast.folds < 2 || contrast.replicates == 0 {
        return Err(Error::input("need at least two folds and one partition replicate"));
    }
    let plans = (0..contrast.replicates)
        .map(|k| make_folds(ds.n(), contrast.folds, ds.r(), seed::derive(contrast.seed, Stream::Partition, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let bundles: Vec<SurvivalBundle> = if want(Method::Contrast) || want(Method::Tworeg) {
        let used = if want(Method::Contrast) { plans.len() } else { 1 };
        plans[..used]
            .par_iter()
            .map(|p| fit_survival_bundle(ds, p, rmtl))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut out = Vec::with_capacity(config.methods.len());
    for &m in &config.methods {
        let fit = match m {
            Method::Contrast => solve_rmtl_contrast_replicates(&bundles, contrast).map(|fit| MethodFit {
                scorer: Scorer::Linear(fit.delta.clone()),
                contrast: Some(fit),
                ..MethodFit::linear(m, Vec::new())
            }),
            Method::Tworeg => fit_rmtl_two_regression(&bundles[0], &config.tworeg).map(regression(m)),
            Method::Naive => fit_rmtl_naive(ds, rmtl).map(regression(m)),
            Method::BoostingRatio => {
                let mut boost = RmtlConfig {
                    learner: SurvivalLearner::Boosted,
                    ..rmtl.clone()
                };
                if config.tune_boosting_once {
                    boost.nuisance = tuned_survival(ds, &boost)?;
                }
                fit_survival_bundle(ds, &plans[0], &boost).map(|sb| ratio(m, sb.bundle))
            }
        };
        out.push((m, fit));
    }
    Ok(out)
}

fn tuned_survival(ds: &ObservationalDataset, config: &RmtlConfig) -> Result<NuisanceConfig> {
    let rmtl = with_rmtl_outcome(ds, config.tau)?;
    let censoring = fit_censoring(ds, None, config.floor_eps)?;
    let (w, _) = ipcw_weights(ds, &censoring, config.tau)?;
    let r = ds.r();
    tuned(
        &rmtl,
        &config.nuisance,
        |arm| (0..ds.n()).filter(|&i| r[i] == arm && w[i] > 0.0).collect(),
        Some(&w),
    )
}
