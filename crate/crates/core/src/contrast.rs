//! Doubly robust contrast regression for `D(z) = exp(δᵀz̃)`.
//!
//! Every row contributes `z̃ᵢ · hᵢ(η)` to the estimating equation, where
//! `η = δᵀz̃ᵢ` and `hᵢ` is a scalar function of the row's outcome, arm and
//! nuisance values. The derivative of the equation is therefore
//! `Σ z̃ᵢ z̃ᵢᵀ h′ᵢ(η)`, which is what the Newton solver and the sandwich
//! covariance use.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_folds, ObservationalDataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::nuisance::{fit_nuisance_bundle, NuisanceBundle, NuisanceConfig};
use crate::seed::{self, Stream};

/// Weight function multiplying the basic contrast residual.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `1 / (e^η π + 1 − π)`, efficient under Poisson outcomes.
    #[default]
    Optimal,
    /// Constant weight; for variance comparisons.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub init_delta: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 100,
            max_halvings: 20,
            init_delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastConfig {
    /// Solve the equation averaged with its `μ₁`-based counterpart.
    pub symmetric: bool,
    pub weighting: Weighting,
    pub folds: usize,
    /// Number of independent fold partitions whose solutions are averaged.
    pub replicates: usize,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            symmetric: true,
            weighting: Weighting::Optimal,
            folds: 7,
            replicates: 3,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub final_score_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastFit {
    /// Intercept first.
    pub delta: Vec<f64>,
    /// Sandwich covariance of `delta`, row-major nested.
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub solver_report: SolverReport,
    pub partition_replicates: usize,
    pub symmetric: bool,
    /// Per-partition solutions; `delta` is their coordinatewise mean.
    pub replicate_deltas: Vec<Vec<f64>>,
}

impl ContrastFit {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let p = self.delta.len();
        DMatrix::from_fn(p, p, |i, j| self.covariance[i][j])
    }

    /// Wald interval `δⱼ ± z·seⱼ`.
    pub fn wald_interval(&self, j: usize, z: f64) -> (f64, f64) {
        (self.delta[j] - z * self.std_errors[j], self.delta[j] + z * self.std_errors[j])
    }

    fn assemble(delta: Vec<f64>, cov: DMatrix<f64>, report: SolverReport, replicate_deltas: Vec<Vec<f64>>, symmetric: bool) -> Self {
        let p = delta.len();
        let std_errors: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
        let z_values = delta.iter().zip(&std_errors).map(|(d, s)| d / s).collect();
        ContrastFit {
            covariance: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
            delta,
            std_errors,
            z_values,
            solver_report: report,
            partition_replicates: replicate_deltas.len(),
            symmetric,
            replicate_deltas,
        }
    }
}

/// One row's inputs to the estimating function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowTerms {
    pub y: f64,
    pub r: u8,
    pub mu0: f64,
    pub mu1: f64,
    pub pi1: f64,
}

#[inline]
fn exp_eta(eta: f64) -> f64 {
    eta.clamp(-60.0, 60.0).exp()
}

/// Scalar multiplier `h(η)` of `z̃` and its derivative `h′(η)`.
#[inline]
pub fn kernel(t: &RowTerms, eta: f64, symmetric: bool, weighting: Weighting) -> (f64, f64) {
    let e = exp_eta(eta);
    let p1 = t.pi1;
    let p0 = 1.0 - p1;
    let den = e * p1 + p0;
    let den2 = den * den;
    let (h, dh) = match (symmetric, t.r) {
        (false, 1) => (
            p0 * (t.y - t.mu0 * e) / den,
            -p0 * e * (t.mu0 * p0 + p1 * t.y) / den2,
        ),
        (false, _) => (-p1 * e * (t.y - t.mu0) / den, -p1 * p0 * e * (t.y - t.mu0) / den2),
        (true, 1) => {
            let a = t.y - 0.5 * (e * t.mu0 + t.mu1);
            (a * p0 / den, -0.5 * e * t.mu0 * p0 / den - a * p0 * e * p1 / den2)
        }
        (true, _) => {
            let b = t.y * e - 0.5 * (e * t.mu0 + t.mu1);
            (
                -b * p1 / den,
                -(t.y * e - 0.5 * e * t.mu0) * p1 / den + b * p1 * e * p1 / den2,
            )
        }
    };
    match weighting {
        Weighting::Optimal => (h, dh),
        Weighting::Uniform => (h * den, dh * den + h * e * p1),
    }
}

/// The contrast estimating function `m(G; δ, μ, π)` for one observation.
/// `z` excludes the intercept.
pub fn estimating_function(y: f64, r: u8, z: &[f64], delta: &[f64], mu0: f64, pi1: f64) -> Result<Vec<f64>> {
    if delta.len() != z.len() + 1 {
        return Err(Error::input("delta must have one more entry than z"));
    }
    if !(pi1 > 0.0 && pi1 < 1.0) {
        return Err(Error::input("propensity must lie in (0, 1)"));
    }
    if !(y.is_finite() && mu0.is_finite()) || z.iter().any(|v| !v.is_finite()) || r > 1 {
        return Err(Error::input("estimating function inputs must be finite with r in {0, 1}"));
    }
    let t = RowTerms {
        y,
        r,
        mu0,
        mu1: f64::NAN,
        pi1,
    };
    let (h, _) = kernel(&t, linalg::affine(delta, z), false, Weighting::Optimal);
    Ok(std::iter::once(h).chain(z.iter().map(|v| v * h)).collect())
}

/// A contrast estimating equation over a fixed sample with fixed per-row
/// nuisance values.
#[derive(Debug, Clone, Copy)]
pub struct ContrastProblem<'a> {
    pub y: &'a [f64],
    pub r: &'a [u8],
    /// Row-major covariates, `n × d`.
    pub z: &'a [f64],
    pub d: usize,
    pub mu0: &'a [f64],
    pub mu1: &'a [f64],
    pub pi1: &'a [f64],
    /// Optional per-row multipliers (inverse probability of censoring).
    pub weights: Option<&'a [f64]>,
    pub symmetric: bool,
    pub weighting: Weighting,
}

pub struct Evaluation {
    /// `n⁻¹ Σ z̃ᵢ hᵢ`.
    pub score: Vec<f64>,
    /// `−n⁻¹ Σ z̃ᵢ z̃ᵢᵀ h′ᵢ`, the derivative matrix with the sign that makes
    /// it positive definite at a well-behaved root.
    pub a: DMatrix<f64>,
    /// `n⁻¹ Σ z̃ᵢ z̃ᵢᵀ hᵢ²`.
    pub b: DMatrix<f64>,
}

impl<'a> ContrastProblem<'a> {
    pub fn from_bundle(ds: &'a ObservationalDataset, bundle: &'a NuisanceBundle, config: &ContrastConfig) -> Result<Self> {
        if bundle.n() != ds.n() {
            return Err(Error::input("nuisance bundle does not match the dataset"));
        }
        Ok(ContrastProblem {
            y: ds.y(),
            r: ds.r(),
            z: ds.z(),
            d: ds.d(),
            mu0: bundle.mu0(),
            mu1: bundle.mu1(),
            pi1: bundle.pi1(),
            weights: None,
            symmetric: config.symmetric,
            weighting: config.weighting,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.d + 1
    }

    #[inline]
    fn terms(&self, i: usize) -> RowTerms {
        RowTerms {
            y: self.y[i],
            r: self.r[i],
            mu0: self.mu0[i],
            mu1: self.mu1[i],
            pi1: self.pi1[i],
        }
    }

    fn accumulate(&self, delta: &[f64], want_a: bool, want_b: bool) -> Evaluation {
        let p = self.p();
        let n = self.n();
        let mut score = vec![0.0; p];
        let mut a = vec![0.0; if want_a { p * p } else { 0 }];
        let mut b = vec![0.0; if want_b { p * p } else { 0 }];
        let mut zt = vec![1.0; p];
        for i in 0..n {
            let wi = self.weights.map_or(1.0, |w| w[i]);
            if wi == 0.0 {
                continue;
            }
            zt[1..].copy_from_slice(&self.z[i * self.d..(i + 1) * self.d]);
            let (h, dh) = kernel(&self.terms(i), linalg::dot(delta, &zt), self.symmetric, self.weighting);
            let (h, dh) = (wi * h, wi * dh);
            for (s, v) in score.iter_mut().zip(&zt) {
                *s += h * v;
            }
            if want_a {
                linalg::rank_one_upper(&mut a, &zt, -dh);
            }
            if want_b {
                linalg::rank_one_upper(&mut b, &zt, h * h);
            }
        }
        let inv = 1.0 / n as f64;
        score.iter_mut().for_each(|s| *s *= inv);
        Evaluation {
            score,
            a: if want_a { linalg::from_upper(&a, p) * inv } else { DMatrix::zeros(0, 0) },
            b: if want_b { linalg::from_upper(&b, p) * inv } else { DMatrix::zeros(0, 0) },
        }
    }

    pub fn score(&self, delta: &[f64]) -> Vec<f64> {
        self.accumulate(delta, false, false).score
    }

    pub fn evaluate(&self, delta: &[f64]) -> Evaluation {
        self.accumulate(delta, true, true)
    }

    /// Derivative matrix `Â(δ)`.
    pub fn derivative(&self, delta: &[f64]) -> DMatrix<f64> {
        self.accumulate(delta, true, false).a
    }

    /// Sandwich covariance `n⁻¹ Â⁻¹ B̂ Â⁻ᵀ`, symmetrized.
    pub fn sandwich(&self, delta: &[f64]) -> Result<DMatrix<f64>> {
        let ev = self.evaluate(delta);
        let ainv = linalg::inverse(&ev.a, "contrast derivative matrix")?;
        let cov = &ainv * &ev.b * ainv.transpose() / self.n() as f64;
        Ok(linalg::symmetrize(&cov))
    }

    /// Damped Newton search for a root of the equation.
    pub fn solve(&self, config: &SolverConfig) -> Result<(Vec<f64>, SolverReport)> {
        let p = self.p();
        let mut delta = match &config.init_delta {
            Some(init) if init.len() == p => init.clone(),
            Some(_) => return Err(Error::input(format!("initial delta must have length {p}"))),
            None => vec![0.0; p],
        };
        let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for iter in 0..=config.max_iter {
            let ev = self.accumulate(&delta, true, false);
            let norm = linalg::inf_norm(&ev.score);
            if !norm.is_finite() {
                return Err(Error::NonConvergence {
                    solver: "contrast Newton",
                    iterations: iter,
                    score_norm: norm,
                });
            }
            if norm <= config.tol {
                return Ok((
                    delta,
                    SolverReport {
                        iterations: iter,
                        final_score_norm: norm,
                        converged: true,
                    },
                ));
            }
            if iter == config.max_iter {
                return Err(Error::NonConvergence {
                    solver: "contrast Newton",
                    iterations: iter,
                    score_norm: norm,
                });
            }
            let cond = linalg::condition_estimate(&ev.a);
            if !(cond < 1e14) {
                return Err(Error::Singular {
                    context: "contrast derivative matrix",
                    condition: cond,
                });
            }
            let step = linalg::solve(&ev.a, &DVector::from_column_slice(&ev.score), "contrast derivative matrix")?;
            let merit = l2(&ev.score);
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=config.max_halvings {
                let trial: Vec<f64> = delta.iter().zip(step.iter()).map(|(d, s)| d + scale * s).collect();
                let s = self.score(&trial);
                if s.iter().all(|v| v.is_finite()) && l2(&s) < merit {
                    delta = trial;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                return Err(Error::NonConvergence {
                    solver: "contrast Newton",
                    iterations: iter,
                    score_norm: norm,
                });
            }
        }
        unreachable!("loop returns on its final iteration")
    }
}

/// Solves the cross-fitted contrast equation for one nuisance bundle.
pub fn solve_contrast(ds: &ObservationalDataset, bundle: &NuisanceBundle, config: &ContrastConfig) -> Result<ContrastFit> {
    solve_contrast_replicates(ds, std::slice::from_ref(bundle), config)
}

/// Solves the equation once per bundle and averages the solutions. The
/// covariance is the sandwich estimate of the first bundle.
pub fn solve_contrast_replicates(
    ds: &ObservationalDataset,
    bundles: &[NuisanceBundle],
    config: &ContrastConfig,
) -> Result<ContrastFit> {
    if bundles.is_empty() {
        return Err(Error::input("at least one nuisance bundle is required"));
    }
    if ds.treated_count() == 0 || ds.treated_count() == ds.n() {
        return Err(Error::input("both treatment arms must be nonempty"));
    }
    let solutions = bundles
        .iter()
        .map(|b| {
            let problem = ContrastProblem::from_bundle(ds, b, config)?;
            problem.solve(&config.solver)
        })
        .collect::<Result<Vec<_>>>()?;
    let first = ContrastProblem::from_bundle(ds, &bundles[0], config)?;
    let cov = first.sandwich(&solutions[0].0)?;
    Ok(average_solutions(solutions, cov, config.symmetric))
}

pub(crate) fn average_solutions(solutions: Vec<(Vec<f64>, SolverReport)>, cov: DMatrix<f64>, symmetric: bool) -> ContrastFit {
    let p = solutions[0].0.len();
    let k = solutions.len() as f64;
    let mut delta = vec![0.0; p];
    for (d, _) in &solutions {
        for (acc, v) in delta.iter_mut().zip(d) {
            *acc += v / k;
        }
    }
    let report = SolverReport {
        iterations: solutions.iter().map(|(_, r)| r.iterations).max().unwrap_or(0),
        final_score_norm: solutions.iter().map(|(_, r)| r.final_score_norm).fold(0.0, f64::max),
        converged: solutions.iter().all(|(_, r)| r.converged),
    };
    ContrastFit::assemble(delta, cov, report, solutions.into_iter().map(|(d, _)| d).collect(), symmetric)
}

/// Fits one nuisance bundle per fold partition (`config.replicates` of
/// them, `config.folds` folds each).
pub fn partition_bundles(
    ds: &ObservationalDataset,
    nuisance: &NuisanceConfig,
    config: &ContrastConfig,
) -> Result<Vec<NuisanceBundle>> {
    if config.folds < 2 || config.replicates == 0 {
        return Err(Error::input("need at least two folds and one partition replicate"));
    }
    (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let plan = make_folds(ds.n(), config.folds, ds.r(), seed::derive(config.seed, Stream::Partition, rep as u64))?;
            let cfg = NuisanceConfig {
                seed: seed::derive(nuisance.seed, Stream::Boosting, rep as u64),
                ..nuisance.clone()
            };
            fit_nuisance_bundle(ds, &plan, &cfg)
        })
        .collect()
}

/// Fits nuisances over `config.replicates` partitions and solves the
/// contrast equation on each.
pub fn fit_contrast(ds: &ObservationalDataset, nuisance: &NuisanceConfig, config: &ContrastConfig) -> Result<ContrastFit> {
    let bundles = partition_bundles(ds, nuisance, config)?;
    solve_contrast_replicates(ds, &bundles, config)
}

/// Sandwich covariance of `delta` for the equation defined by `ds`,
/// `bundle` and `config`.
pub fn sandwich_covariance(
    ds: &ObservationalDataset,
    bundle: &NuisanceBundle,
    delta: &[f64],
    config: &ContrastConfig,
) -> Result<DMatrix<f64>> {
    if delta.len() != ds.d() + 1 {
        return Err(Error::input("delta length does not match covariate dimension"));
    }
    ContrastProblem::from_bundle(ds, bundle, config)?.sandwich(delta)
}

/// Nonparametric bootstrap of the full fitting pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub resamples: usize,
    /// Resamples whose refit failed; excluded from the covariance.
    pub failures: usize,
    pub covariance: Vec<Vec<f64>>,
}

/// Refits nuisances and `δ̂` on `resamples` row resamples drawn with
/// replacement, and returns the empirical covariance of the estimates.
pub fn bootstrap_covariance(
    ds: &ObservationalDataset,
    nuisance: &NuisanceConfig,
    config: &ContrastConfig,
    resamples: usize,
    seed_: u64,
) -> Result<BootstrapSummary> {
    use rand::Rng;
    if resamples < 2 {
        return Err(Error::input("the bootstrap needs at least two resamples"));
    }
    let n = ds.n();
    let fits: Vec<Option<Vec<f64>>> = (0..resamples)
        .into_par_iter()
        .map(|b| -> Result<Option<Vec<f64>>> {
            let mut rng = seed::stream_rng(seed_, Stream::Bootstrap, b as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = ds.subset(&rows)?;
            let cfg = ContrastConfig {
                seed: seed::derive(seed_, Stream::Bootstrap, b as u64),
                ..config.clone()
            };
            match fit_contrast(&sample, nuisance, &cfg) {
                Ok(fit) => Ok(Some(fit.delta)),
                Err(Error::Input(_) | Error::NonConvergence { .. } | Error::Singular { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let ok: Vec<&Vec<f64>> = fits.iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::input("fewer than two bootstrap refits succeeded"));
    }
    let p = ok[0].len();
    let k = ok.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| ok.iter().map(|d| d[j]).sum::<f64>() / k).collect();
    let covariance = (0..p)
        .map(|a| {
            (0..p)
                .map(|b| ok.iter().map(|d| (d[a] - mean[a]) * (d[b] - mean[b])).sum::<f64>() / (k - 1.0))
                .collect()
        })
        .collect();
    Ok(BootstrapSummary {
        resamples,
        failures: resamples - ok.len(),
        covariance,
    })
}

/// Log-scale CATE scores `δᵀz̃` for a row-major covariate buffer.
pub fn log_scores(delta: &[f64], z: &[f64], d: usize) -> Result<Vec<f64>> {
    if delta.len() != d + 1 {
        return Err(Error::input(format!(
            "coefficient vector of length {} does not fit {d} covariates",
            delta.len()
        )));
    }
    if d > 0 && z.len() % d != 0 {
        return Err(Error::input("covariate buffer is not a whole number of rows"));
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    Ok(z.chunks_exact(d).map(|row| linalg::affine(delta, row)).collect())
}

/// CATE scores `exp(δ̂ᵀz̃)`.
pub fn predict_cate(fit: &ContrastFit, z: &[f64], d: usize) -> Result<Vec<f64>> {
    Ok(log_scores(&fit.delta, z, d)?.into_iter().map(f64::exp).collect())
}

/// A model with finitely many covariate values, known nuisances, and a
/// true contrast `δ₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    /// Support points, each of dimension `d`.
    pub support: Vec<Vec<f64>>,
    pub prob: Vec<f64>,
    pub mu0: Vec<f64>,
    pub pi1: Vec<f64>,
    pub delta0: Vec<f64>,
}

impl DiscreteInstance {
    /// `k` support points in `d` dimensions drawn uniformly from `[-1, 1]`,
    /// with Dirichlet(1) masses, propensities in `[0.2, 0.8]`, control
    /// means in `[0.5, 3]` and `δ₀` entries in `[-0.5, 0.5]`.
    pub fn random(k: usize, d: usize, rng: &mut impl rand::Rng) -> Self {
        let support = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = raw.iter().sum();
        DiscreteInstance {
            support,
            prob: raw.iter().map(|v| v / total).collect(),
            mu0: (0..k).map(|_| rng.random_range(0.5..3.0)).collect(),
            pi1: (0..k).map(|_| rng.random_range(0.2..0.8)).collect(),
            delta0: (0..=d).map(|_| rng.random_range(-0.5..0.5)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn mu1(&self, j: usize) -> f64 {
        self.mu0[j] * linalg::affine(&self.delta0, &self.support[j]).exp()
    }

    fn check(&self) -> Result<()> {
        let k = self.len();
        if k == 0 || self.prob.len() != k || self.mu0.len() != k || self.pi1.len() != k {
            return Err(Error::input("discrete instance arrays disagree in length"));
        }
        if self.support.iter().any(|s| s.len() + 1 != self.delta0.len()) {
            return Err(Error::input("support dimension does not match delta0"));
        }
        if self.pi1.iter().any(|&p| !(p > 0.0 && p < 1.0)) || self.prob.iter().any(|&p| p < 0.0) {
            return Err(Error::input("invalid propensity or probability"));
        }
        Ok(())
    }

    /// Exact `E[m(G; δ, μ, π)]` for candidate nuisance values on the support.
    /// Outcomes enter through their conditional means `μ_R(z)`, which is
    /// exact because the estimating function is linear in `Y`.
    pub fn population_score(&self, delta: &[f64], mu: &[f64], pi: &[f64], symmetric: bool) -> Result<Vec<f64>> {
        Ok(self.population_eval(delta, mu, None, pi, symmetric)?.0)
    }

    fn population_eval(
        &self,
        delta: &[f64],
        mu0: &[f64],
        mu1: Option<&[f64]>,
        pi: &[f64],
        symmetric: bool,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check()?;
        if pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::input("perturbed propensity left (0, 1)"));
        }
        let p = self.delta0.len();
        let mut score = vec![0.0; p];
        let mut a = vec![0.0; p * p];
        for j in 0..self.len() {
            let mut zt = vec![1.0];
            zt.extend_from_slice(&self.support[j]);
            let eta = linalg::dot(delta, &zt);
            let m1 = mu1.map_or_else(|| self.mu1(j), |m| m[j]);
            let mut h = 0.0;
            let mut dh = 0.0;
            for (arm, prob_arm, ybar) in [(1u8, self.pi1[j], self.mu1(j)), (0u8, 1.0 - self.pi1[j], self.mu0[j])] {
                let t = RowTerms {
                    y: ybar,
                    r: arm,
                    mu0: mu0[j],
                    mu1: m1,
                    pi1: pi[j],
                };
                let (hh, dd) = kernel(&t, eta, symmetric, Weighting::Optimal);
                h += prob_arm * hh;
                dh += prob_arm * dd;
            }
            for (s, v) in score.iter_mut().zip(&zt) {
                *s += self.prob[j] * h * v;
            }
            linalg::rank_one_upper(&mut a, &zt, -self.prob[j] * dh);
        }
        Ok((score, linalg::from_upper(&a, p)))
    }

    /// Root of the population equation with the given nuisance values, by
    /// Newton iteration on the exact expectation.
    pub fn population_root(&self, mu0: &[f64], mu1: Option<&[f64]>, pi: &[f64], symmetric: bool) -> Result<Vec<f64>> {
        let mut delta = vec![0.0; self.delta0.len()];
        for iter in 0..200 {
            let (s, a) = self.population_eval(&delta, mu0, mu1, pi, symmetric)?;
            let norm = linalg::inf_norm(&s);
            if norm < 1e-13 {
                return Ok(delta);
            }
            let step = linalg::solve(&a, &DVector::from_column_slice(&s), "population derivative")?;
            let mut scale = 1.0;
            loop {
                let trial: Vec<f64> = delta.iter().zip(step.iter()).map(|(d, s)| d + scale * s).collect();
                let (st, _) = self.population_eval(&trial, mu0, mu1, pi, symmetric)?;
                if linalg::inf_norm(&st) < norm || scale < 1e-6 {
                    delta = trial;
                    break;
                }
                scale *= 0.5;
            }
            if iter == 199 {
                return Err(Error::NonConvergence {
                    solver: "population root",
                    iterations: iter,
                    score_norm: norm,
                });
            }
        }
        Ok(delta)
    }
}

/// Direction of a nuisance perturbation `(μ₀ + r·dμ, π₁ + r·dπ)` on the
/// support of a [`DiscreteInstance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub dmu: Vec<f64>,
    pub dpi: Vec<f64>,
}

impl Perturbation {
    /// Direction with `dμ` uniform on `[-0.5, 0.5]` and `dπ` on `[-0.1, 0.1]`.
    pub fn random(k: usize, rng: &mut impl rand::Rng) -> Self {
        Perturbation {
            dmu: (0..k).map(|_| rng.random_range(-0.5..0.5)).collect(),
            dpi: (0..k).map(|_| rng.random_range(-0.1..0.1)).collect(),
        }
    }
}

/// `g(r) = E[m(G; δ₀, μ₀ + r·dμ, π₁ + r·dπ)]`.
pub fn perturbed_score(instance: &DiscreteInstance, direction: &Perturbation, r: f64) -> Result<Vec<f64>> {
    let k = instance.len();
    if direction.dmu.len() != k || direction.dpi.len() != k {
        return Err(Error::input("perturbation length does not match the support"));
    }
    let mu: Vec<f64> = (0..k).map(|j| instance.mu0[j] + r * direction.dmu[j]).collect();
    let pi: Vec<f64> = (0..k).map(|j| instance.pi1[j] + r * direction.dpi[j]).collect();
    instance.population_score(&instance.delta0, &mu, &pi, false)
}

/// Central finite-difference derivative of `g` at `at`, reported as its
/// max-norm. At `at = 0` this is the Gateaux derivative that Neyman
/// orthogonality says vanishes.
pub fn orthogonality_check(instance: &DiscreteInstance, direction: &Perturbation, at: f64) -> Result<f64> {
    let h = 1e-4;
    let up = perturbed_score(instance, direction, at + h)?;
    let down = perturbed_score(instance, direction, at - h)?;
    Ok(up.iter().zip(&down).map(|(a, b)| ((a - b) / (2.0 * h)).abs()).fold(0.0, f64::max))
}

/// Finite-difference derivatives of the population score along random
/// nuisance perturbations, at `r = 0` and at `r = 0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalitySuite {
    pub at_zero: Vec<f64>,
    pub at_half: Vec<f64>,
}

impl OrthogonalitySuite {
    pub fn max_at_zero(&self) -> f64 {
        self.at_zero.iter().cloned().fold(0.0, f64::max)
    }

    /// Number of directions whose derivative at `r = 0.5` exceeds `threshold`.
    pub fn count_at_half_above(&self, threshold: f64) -> usize {
        self.at_half.iter().filter(|&&v| v > threshold).count()
    }
}

/// Evaluates [`orthogonality_check`] on one random eight-atom instance in
/// two dimensions along `directions` random perturbations.
pub fn orthogonality_suite(directions: usize, seed_: u64) -> Result<OrthogonalitySuite> {
    let mut rng = seed::stream_rng(seed_, Stream::Property, u64::MAX);
    let instance = DiscreteInstance::random(8, 2, &mut rng);
    let mut out = OrthogonalitySuite {
        at_zero: Vec::with_capacity(directions),
        at_half: Vec::with_capacity(directions),
    };
    for _ in 0..directions {
        let dir = Perturbation::random(instance.len(), &mut rng);
        out.at_zero.push(orthogonality_check(&instance, &dir, 0.0)?);
        out.at_half.push(orthogonality_check(&instance, &dir, 0.5)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_point() -> DiscreteInstance {
        DiscreteInstance {
            support: vec![vec![-1.0], vec![0.0], vec![1.0]],
            prob: vec![0.3, 0.4, 0.3],
            mu0: vec![1.0, 2.0, 1.5],
            pi1: vec![0.3, 0.5, 0.7],
            delta0: vec![0.2, -0.4],
        }
    }

    #[test]
    fn hand_examples() {
        let m = estimating_function(2.0, 1, &[], &[0.0], 2.0, 0.5).unwrap();
        assert_eq!(m, vec![0.0]);
        let m = estimating_function(1.0, 0, &[1.0], &[0.0, 0.0], 2.0, 0.5).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-15 && (m[1] - 0.5).abs() < 1e-15);
        assert!(estimating_function(1.0, 0, &[1.0], &[0.0, 0.0], 2.0, 1.0).is_err());
    }

    #[test]
    fn kernel_derivatives_match_finite_differences() {
        let h = 1e-6;
        for symmetric in [false, true] {
            for weighting in [Weighting::Optimal, Weighting::Uniform] {
                for r in [0u8, 1] {
                    let t = RowTerms {
                        y: 2.5,
                        r,
                        mu0: 1.7,
                        mu1: 0.9,
                        pi1: 0.35,
                    };
                    for eta in [-1.3, 0.0, 0.8] {
                        let (_, d) = kernel(&t, eta, symmetric, weighting);
                        let fd = (kernel(&t, eta + h, symmetric, weighting).0 - kernel(&t, eta - h, symmetric, weighting).0) / (2.0 * h);
                        assert!((d - fd).abs() < 1e-7, "{symmetric} {weighting:?} r={r} eta={eta}: {d} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn true_delta_is_population_root() {
        let inst = three_point();
        for symmetric in [false, true] {
            let s = inst.population_score(&inst.delta0, &inst.mu0, &inst.pi1, symmetric).unwrap();
            assert!(linalg::inf_norm(&s) < 1e-14);
        }
        let root = inst.population_root(&inst.mu0, None, &inst.pi1, false).unwrap();
        assert!((root[0] - 0.2).abs() < 1e-10 && (root[1] + 0.4).abs() < 1e-10);
    }

    #[test]
    fn double_robustness_on_population() {
        let inst = three_point();
        let wrong_mu = vec![5.0, 0.2, 3.0];
        let wrong_pi = vec![0.5, 0.5, 0.5];
        let a = inst.population_root(&wrong_mu, None, &inst.pi1, false).unwrap();
        let b = inst.population_root(&inst.mu0, None, &wrong_pi, false).unwrap();
        for (x, y) in a.iter().chain(&b).zip(inst.delta0.iter().chain(&inst.delta0)) {
            assert!((x - y).abs() < 1e-9);
        }
        let s = inst.population_score(&inst.delta0, &wrong_mu, &wrong_pi, false).unwrap();
        assert!(linalg::inf_norm(&s) > 1e-3);
    }

    #[test]
    fn orthogonality_at_zero_but_not_away() {
        let inst = three_point();
        let dir = Perturbation {
            dmu: vec![1.0; 3],
            dpi: vec![0.1; 3],
        };
        let zero = Perturbation {
            dmu: vec![0.0; 3],
            dpi: vec![0.0; 3],
        };
        assert_eq!(orthogonality_check(&inst, &zero, 0.0).unwrap(), 0.0);
        assert!(orthogonality_check(&inst, &dir, 0.0).unwrap() < 1e-6);
        assert!(orthogonality_check(&inst, &dir, 0.5).unwrap() > 1e-3);
        let far = Perturbation {
            dmu: vec![0.0; 3],
            dpi: vec![1.0; 3],
        };
        assert!(orthogonality_check(&inst, &far, 0.5).is_err());
    }

    #[test]
    fn predict_cate_examples() {
        let mut delta = vec![0.0; 11];
        let fit = ContrastFit::assemble(
            delta.clone(),
            DMatrix::identity(11, 11),
            SolverReport {
                iterations: 0,
                final_score_norm: 0.0,
                converged: true,
            },
            vec![delta.clone()],
            true,
        );
        assert!(predict_cate(&fit, &[0.3; 20], 10).unwrap().iter().all(|&v| v == 1.0));
        delta[0] = -0.1;
        delta[1] = 0.25;
        delta[6] = 0.25;
        assert!((log_scores(&delta, &[0.0; 10], 10).unwrap()[0] + 0.1).abs() < 1e-15);
        assert!(predict_cate(&fit, &[0.0; 9], 9).is_err());
    }
}
