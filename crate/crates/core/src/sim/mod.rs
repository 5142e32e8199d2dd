//! Simulation designs, exact oracles and the Monte-Carlo study runner.

pub mod dgp;
pub mod oracle;
pub mod study;

pub use dgp::{generate, DgpName, DgpSpec, Simulated, Truth};
pub use oracle::{expected_propensity, population_curve, true_population_ad, OracleSample, PopulationPoint};
pub use study::{run_study, Method, MethodSummary, ReplicateReport, StudyConfig, StudyReport};

use serde::{Deserialize, Serialize};

use crate::contrast::{fit_contrast, ContrastConfig};
use crate::data::ObservationalDataset;
use crate::error::Result;
use crate::nuisance::{fit_nuisance_bundle, NuisanceConfig, OutcomeLearner};
use crate::seed::{self, Stream};
use crate::tworeg::{fit_naive, fit_two_regression, TwoRegressionConfig};

/// Slopes recovered on the univariate confounding example, where both arms
/// share the mean `z²` but the covariate law differs between arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub n: usize,
    pub confounded: bool,
    /// Naive per-arm Poisson coefficients `(intercept, slope)`.
    pub beta1: Vec<f64>,
    pub beta0: Vec<f64>,
    /// Slope of the naive log-CATE score.
    pub naive_slope: f64,
    pub tworeg_slope: f64,
    pub contrast_slope: f64,
}

/// Runs the naive, two-regression and contrast estimators on the
/// confounded univariate example.
pub fn toy_confounding_check(n: usize, seed_: u64) -> Result<ToyReport> {
    toy_check(n, seed_, true)
}

/// As [`toy_confounding_check`]; with `confounded = false` every row draws
/// `Z ~ N(0, 1)` regardless of arm.
pub fn toy_check(n: usize, seed_: u64, confounded: bool) -> Result<ToyReport> {
    let spec = DgpSpec::new(DgpName::ToyConfounding);
    let mut ds = generate(&spec, n, seed_)?.data;
    if !confounded {
        ds = randomized_toy(&ds)?;
    }
    let nuisance = NuisanceConfig {
        outcome_learner: OutcomeLearner::Glm,
        seed: seed_,
        ..NuisanceConfig::default()
    };
    let tworeg_cfg = TwoRegressionConfig::default();
    let naive = fit_naive(&ds, &tworeg_cfg)?;
    let contrast_cfg = ContrastConfig {
        folds: 5,
        replicates: 1,
        seed: seed_,
        ..ContrastConfig::default()
    };
    let plan = crate::data::make_folds(ds.n(), contrast_cfg.folds, ds.r(), seed::derive(seed_, Stream::Partition, 0))?;
    let bundle = fit_nuisance_bundle(&ds, &plan, &nuisance)?;
    let tworeg = fit_two_regression(&ds, &bundle, "glm", &tworeg_cfg)?;
    let contrast = fit_contrast(&ds, &nuisance, &contrast_cfg)?;
    Ok(ToyReport {
        n,
        confounded,
        naive_slope: naive.delta_implied[1],
        beta1: naive.beta1,
        beta0: naive.beta0,
        tworeg_slope: tworeg.delta_implied[1],
        contrast_slope: contrast.delta[1],
    })
}

/// Re-centres each row's covariate so that `Z ~ N(0, 1)` in both arms and
/// redraws the outcome accordingly.
fn randomized_toy(ds: &ObservationalDataset) -> Result<ObservationalDataset> {
    use rand_distr::{Distribution, Poisson};
    let mut rng = seed::stream_rng(ds.n() as u64, Stream::Dgp, 1);
    let z: Vec<f64> = ds
        .z()
        .iter()
        .zip(ds.r())
        .map(|(&v, &r)| v - (r as f64 - 0.5))
        .collect();
    let y = z
        .iter()
        .map(|&v| {
            let m = v * v;
            if m > 0.0 {
                Poisson::new(m).map(|p| p.sample(&mut rng)).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();
    ObservationalDataset::new(y, ds.r().to_vec(), z, 1)
}
