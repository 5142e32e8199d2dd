//! Nuisance models: propensity score, outcome means, and their cross-fitted
//! bundle.

pub mod boost;
pub mod bundle;
pub mod glm;
pub mod irls;
pub mod logistic;

pub use boost::{fit_boosted_poisson, BoostConfig, BoostedPoissonModel, TreeNode};
pub use bundle::{
    fit_nuisance_bundle, FoldNuisance, NuisanceBundle, NuisanceConfig, OutcomeLearner, OutcomeModel, PropensityFit,
    PropensityLearner,
};
pub use glm::{fit_poisson_glm, PoissonGlmModel};
pub use irls::{Family, IrlsConfig, IrlsFit};
pub use logistic::{fit_logistic, PropensityModel};
