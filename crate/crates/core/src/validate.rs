//! Validation of a CATE score on independent data: doubly robust subgroup
//! treatment-effect ratios along the score's upper quantiles.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::nuisance::bundle::{fit_outcome, fit_propensity};
use crate::nuisance::{NuisanceConfig, OutcomeLearner};
use crate::seed::{self, Stream};

/// Threshold meaning "no restriction".
pub const WHOLE_POPULATION: f64 = f64::NEG_INFINITY;

/// `Ĥ⁻¹(1 − q)`: the `⌈q·n⌉`-th largest score, so that `{s ≥ c}` holds at
/// least a fraction `q` of the rows. `q = 1` returns [`WHOLE_POPULATION`].
pub fn quantile_threshold(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::input("quantile of an empty score vector"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::input(format!("q = {q} lies outside (0, 1]")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("scores contain NaN"));
    }
    if q == 1.0 {
        return Ok(WHOLE_POPULATION);
    }
    let n = scores.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[k - 1])
}

/// Default grid `{0.1, 0.2, …, 1.0}`.
pub fn default_q_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub min_subgroup_size: usize,
    pub min_per_arm: usize,
    /// Learners refitted inside each subgroup.
    pub nuisance: NuisanceConfig,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            min_subgroup_size: 50,
            min_per_arm: 10,
            nuisance: NuisanceConfig {
                outcome_learner: OutcomeLearner::Glm,
                ..NuisanceConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAdEstimate {
    pub c: f64,
    pub m_c: usize,
    pub mu1_hat: f64,
    pub mu0_hat: f64,
    pub ad: f64,
    /// Standard error of `log ad` from the empirical influence function,
    /// treating the subgroup nuisance fits as fixed.
    pub log_ad_se: f64,
}

/// Augmented inverse-propensity means over the rows of a subgroup.
///
/// All slices are indexed by position within the subgroup. `extra_weight`
/// multiplies the inverse-propensity weight (censoring weights).
pub fn augmented_means(
    y: &[f64],
    r: &[u8],
    pi1: &[f64],
    mu0: &[f64],
    mu1: &[f64],
    extra_weight: Option<&[f64]>,
) -> (f64, f64, f64) {
    let m = y.len();
    let mut psi0 = Vec::with_capacity(m);
    let mut psi1 = Vec::with_capacity(m);
    for i in 0..m {
        let l = extra_weight.map_or(1.0, |e| e[i]);
        let (w1, w0) = if r[i] == 1 { (l / pi1[i], 0.0) } else { (0.0, l / (1.0 - pi1[i])) };
        psi1.push(mu1[i] + w1 * (y[i] - mu1[i]));
        psi0.push(mu0[i] + w0 * (y[i] - mu0[i]));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / m as f64;
    let (a1, a0) = (mean(&psi1), mean(&psi0));
    let var: f64 = (0..m)
        .map(|i| {
            let phi = (psi1[i] - a1) / a1 - (psi0[i] - a0) / a0;
            phi * phi
        })
        .sum::<f64>()
        / (m as f64 - 1.0).max(1.0);
    (a1, a0, (var / m as f64).sqrt())
}

/// Rows with `score ≥ c`.
pub fn subgroup_rows(scores: &[f64], c: f64) -> Vec<usize> {
    (0..scores.len()).filter(|&i| scores[i] >= c).collect()
}

fn check_subgroup(r: &[u8], rows: &[usize], config: &ValidationConfig) -> Result<()> {
    if rows.len() < config.min_subgroup_size {
        return Err(Error::input(format!(
            "subgroup has {} rows, below the minimum of {}",
            rows.len(),
            config.min_subgroup_size
        )));
    }
    let treated = rows.iter().filter(|&&i| r[i] == 1).count();
    let control = rows.len() - treated;
    if treated.min(control) < config.min_per_arm.max(1) {
        return Err(Error::input(format!(
            "subgroup has {treated} treated and {control} control rows; need at least {} per arm",
            config.min_per_arm.max(1)
        )));
    }
    Ok(())
}

/// Doubly robust estimate of `AD(c)` in the subgroup `{score ≥ c}`, with the
/// propensity and outcome models refitted inside the subgroup.
pub fn estimate_ad(
    ds: &ObservationalDataset,
    scores: &[f64],
    c: f64,
    config: &ValidationConfig,
) -> Result<SubgroupAdEstimate> {
    if scores.len() != ds.n() {
        return Err(Error::input("one score per validation row is required"));
    }
    estimate_on_rows(ds, &subgroup_rows(scores, c), c, config)
}

/// Doubly robust ratio estimate over an explicit set of rows.
pub fn estimate_on_rows(
    ds: &ObservationalDataset,
    rows: &[usize],
    c: f64,
    config: &ValidationConfig,
) -> Result<SubgroupAdEstimate> {
    check_subgroup(ds.r(), rows, config)?;
    let sub = ds.subset(rows)?;
    let all: Vec<usize> = (0..sub.n()).collect();
    let nc = &config.nuisance;
    let pi_model = fit_propensity(&sub, &all, nc)?;
    let mu0_model = fit_outcome(&sub, &sub.arm_indices(0), nc, nc.seed)?;
    let mu1_model = fit_outcome(&sub, &sub.arm_indices(1), nc, nc.seed ^ 1)?;
    let clip = |v: f64| v.clamp(nc.clip_mu, 1.0 / nc.clip_mu);
    let pi1: Vec<f64> = all
        .iter()
        .map(|&i| pi_model.predict(sub.z_row(i)).clamp(nc.clip_eps, 1.0 - nc.clip_eps))
        .collect();
    let mu0: Vec<f64> = all.iter().map(|&i| clip(mu0_model.predict(sub.z_row(i)))).collect();
    let mu1: Vec<f64> = all.iter().map(|&i| clip(mu1_model.predict(sub.z_row(i)))).collect();
    let (mu1_hat, mu0_hat, log_ad_se) = augmented_means(sub.y(), sub.r(), &pi1, &mu0, &mu1, None);
    finish_estimate(c, rows.len(), mu1_hat, mu0_hat, log_ad_se)
}

pub(crate) fn finish_estimate(c: f64, m_c: usize, mu1_hat: f64, mu0_hat: f64, log_ad_se: f64) -> Result<SubgroupAdEstimate> {
    if !(mu0_hat > 0.0) {
        return Err(Error::input(format!(
            "estimated control mean {mu0_hat} is not positive; the ratio is undefined"
        )));
    }
    Ok(SubgroupAdEstimate {
        c,
        m_c,
        mu1_hat,
        mu0_hat,
        ad: mu1_hat / mu0_hat,
        log_ad_se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: f64,
    /// `Ĥ⁻¹(1 − q)`; `None` for the whole population (`q = 1`).
    pub threshold: Option<f64>,
    pub estimate: Option<SubgroupAdEstimate>,
    /// Why the point is absent, when it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCurve {
    pub score_name: String,
    pub metric: String,
    pub points: Vec<CurvePoint>,
}

impl ValidationCurve {
    /// `(q, ad)` for the points that were estimated.
    pub fn ad_series(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.estimate.as_ref().map(|e| (p.q, e.ad)))
            .collect()
    }

    pub fn ad_at(&self, q: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.q - q).abs() < 1e-12)
            .and_then(|p| p.estimate.as_ref().map(|e| e.ad))
    }

    /// Writes `q,threshold,m_c,mu1,mu0,ad` rows; absent points leave the
    /// estimate fields empty.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "q,threshold,m_c,mu1,mu0,ad")?;
        for p in &self.points {
            let thr = p.threshold.map_or_else(|| "-inf".to_string(), |t| t.to_string());
            match &p.estimate {
                Some(e) => writeln!(out, "{},{},{},{},{},{}", p.q, thr, e.m_c, e.mu1_hat, e.mu0_hat, e.ad)?,
                None => writeln!(out, "{},{},,,,", p.q, thr)?,
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub(crate) fn check_grid(q_grid: &[f64]) -> Result<()> {
    if q_grid.is_empty() {
        return Err(Error::input("q grid is empty"));
    }
    if q_grid.iter().any(|&q| !(q > 0.0 && q <= 1.0)) || q_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("q grid must be strictly increasing within (0, 1]"));
    }
    Ok(())
}

/// Generic curve builder over an estimator of one subgroup.
pub(crate) fn build_curve(
    scores: &[f64],
    q_grid: &[f64],
    score_name: &str,
    metric: &str,
    estimate: impl Fn(f64) -> Result<SubgroupAdEstimate> + Sync,
) -> Result<ValidationCurve> {
    check_grid(q_grid)?;
    let points = q_grid
        .par_iter()
        .map(|&q| {
            let c = quantile_threshold(scores, q)?;
            let threshold = (c != WHOLE_POPULATION).then_some(c);
            Ok(match estimate(c) {
                Ok(e) => CurvePoint {
                    q,
                    threshold,
                    estimate: Some(e),
                    failure: None,
                },
                Err(Error::Input(msg)) => CurvePoint {
                    q,
                    threshold,
                    estimate: None,
                    failure: Some(msg),
                },
                Err(other) => return Err(other),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationCurve {
        score_name: score_name.to_string(),
        metric: metric.to_string(),
        points,
    })
}

/// Doubly robust validation curve `q ↦ ÂD(Ĥ⁻¹(1 − q))`.
pub fn validation_curve(
    ds: &ObservationalDataset,
    scores: &[f64],
    score_name: &str,
    q_grid: &[f64],
    config: &ValidationConfig,
) -> Result<ValidationCurve> {
    if scores.len() != ds.n() {
        return Err(Error::input("one score per validation row is required"));
    }
    build_curve(scores, q_grid, score_name, "rate_ratio", |c| estimate_ad(ds, scores, c, config))
}

/// Ratio estimates in the two halves of a median split of the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub threshold: f64,
    pub high: SubgroupAdEstimate,
    pub low: SubgroupAdEstimate,
}

/// Splits rows at the median score into two groups of (nearly) equal size
/// and estimates the ratio in each.
pub fn median_split(ds: &ObservationalDataset, scores: &[f64], config: &ValidationConfig) -> Result<SplitSummary> {
    if scores.len() != ds.n() {
        return Err(Error::input("one score per validation row is required"));
    }
    split_with(scores, |rows, c| estimate_on_rows(ds, rows, c, config))
}

pub(crate) fn split_with(
    scores: &[f64],
    estimate: impl Fn(&[usize], f64) -> Result<SubgroupAdEstimate>,
) -> Result<SplitSummary> {
    if scores.len() < 2 {
        return Err(Error::input("a median split needs at least two rows"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let half = scores.len().div_ceil(2);
    let (hi_rows, lo_rows) = order.split_at(half);
    let threshold = scores[hi_rows[half - 1]];
    Ok(SplitSummary {
        threshold,
        high: estimate(hi_rows, threshold)?,
        low: estimate(lo_rows, WHOLE_POPULATION)?,
    })
}

/// A covariate law with finitely many atoms and exact conditional means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePopulation {
    pub prob: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl DiscretePopulation {
    /// `k` atoms with Dirichlet(1) masses and log-uniform means on
    /// `[e^-2, e^2]`.
    pub fn random(k: usize, rng: &mut impl rand::Rng) -> Self {
        let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = raw.iter().sum();
        let mut draw = || rng.random_range(-2.0..2.0f64).exp();
        let mu0 = (0..k).map(|_| draw()).collect();
        let mu1 = (0..k).map(|_| draw()).collect();
        DiscretePopulation {
            prob: raw.iter().map(|v| v / total).collect(),
            mu0,
            mu1,
        }
    }

    pub fn cate(&self) -> Vec<f64> {
        self.mu1.iter().zip(&self.mu0).map(|(a, b)| a / b).collect()
    }

    /// Exact `AD(c)` in `{score ≥ c}`; `None` when the subgroup has no mass.
    pub fn ad(&self, scores: &[f64], c: f64) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..self.prob.len() {
            if scores[j] >= c {
                num += self.prob[j] * self.mu1[j];
                den += self.prob[j] * self.mu0[j];
            }
        }
        (den > 0.0).then(|| num / den)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    /// `(c, AD(c))` over the grid points with nonempty subgroups.
    pub points: Vec<(f64, f64)>,
    pub monotone: bool,
    pub dominates: bool,
    /// Largest decrease of `AD` between consecutive grid points.
    pub max_monotonicity_violation: f64,
    /// Largest amount by which `c` exceeds `AD(c)`.
    pub max_dominance_violation: f64,
}

/// Computes the population `AD(c)` ranking by the true CATE and checks that
/// it is non-decreasing in `c` and never below `c`, up to `tol`.
pub fn check_theorem2(population: &DiscretePopulation, c_grid: &[f64], tol: f64) -> Theorem2Report {
    let d = population.cate();
    let mut grid = c_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let points: Vec<(f64, f64)> = grid.iter().filter_map(|&c| population.ad(&d, c).map(|a| (c, a))).collect();
    let max_monotonicity_violation = points.windows(2).map(|w| w[0].1 - w[1].1).fold(0.0, f64::max);
    let max_dominance_violation = points.iter().map(|&(c, a)| c - a).fold(0.0, f64::max);
    Theorem2Report {
        monotone: max_monotonicity_violation <= tol,
        dominates: max_dominance_violation <= tol,
        points,
        max_monotonicity_violation,
        max_dominance_violation,
    }
}

/// Aggregate of [`check_theorem2`] over many random populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Suite {
    pub populations: usize,
    /// Populations where either property failed.
    pub failures: usize,
    pub max_monotonicity_violation: f64,
    pub max_dominance_violation: f64,
}

/// Runs [`check_theorem2`] on `populations` random laws with 2 to 40 atoms.
/// The threshold grid holds every atom's CATE, the midpoints between
/// neighbours and a point below the smallest.
pub fn theorem2_suite(populations: usize, seed_: u64, tol: f64) -> Theorem2Suite {
    let mut out = Theorem2Suite {
        populations,
        failures: 0,
        max_monotonicity_violation: 0.0,
        max_dominance_violation: 0.0,
    };
    for i in 0..populations {
        let mut rng = seed::stream_rng(seed_, Stream::Property, i as u64);
        let k = rng.random_range(2..=40);
        let pop = DiscretePopulation::random(k, &mut rng);
        let mut d = pop.cate();
        d.sort_by(f64::total_cmp);
        let mut grid = vec![d[0] / 2.0];
        for w in d.windows(2) {
            grid.push(w[0]);
            grid.push(0.5 * (w[0] + w[1]));
        }
        grid.push(d[k - 1]);
        let rep = check_theorem2(&pop, &grid, tol);
        if !(rep.monotone && rep.dominates) {
            out.failures += 1;
        }
        out.max_monotonicity_violation = out.max_monotonicity_violation.max(rep.max_monotonicity_violation);
        out.max_dominance_violation = out.max_dominance_violation.max(rep.max_dominance_violation);
    }
    out
}

/// Binary-outcome construction in which ranking by conditional odds ratio
/// does not maximize the subgroup's marginal odds ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioExample {
    /// Control response rates.
    pub p0: Vec<f64>,
    /// Treated response rates.
    pub p1: Vec<f64>,
    /// Conditional odds ratios, decreasing in the patient index.
    pub theta: Vec<f64>,
}

impl OddsRatioExample {
    pub fn new(n: usize) -> Self {
        let nf = n as f64;
        let mut p0 = Vec::with_capacity(n);
        let mut p1 = Vec::with_capacity(n);
        let mut theta = Vec::with_capacity(n);
        for i in 1..=n {
            let fi = i as f64;
            let p = if i % 2 == 0 { 1.0 - fi / (nf + 1.0) } else { fi / (nf + 1.0) };
            let th = (2f64.ln() - 4f64.ln() * (fi - 1.0) / (nf - 1.0)).exp();
            p0.push(p);
            p1.push(p * th / (1.0 - p + p * th));
            theta.push(th);
        }
        OddsRatioExample { p0, p1, theta }
    }

    /// Marginal odds ratio of a group of patients with equal weights.
    pub fn marginal_or(&self, group: &[usize]) -> f64 {
        let m = group.len() as f64;
        let a = group.iter().map(|&i| self.p1[i]).sum::<f64>() / m;
        let b = group.iter().map(|&i| self.p0[i]).sum::<f64>() / m;
        a * (1.0 - b) / (b * (1.0 - a))
    }

    /// Marginal OR of the `size` patients with the largest conditional OR.
    pub fn top_by_conditional_or(&self, size: usize) -> f64 {
        let mut idx: Vec<usize> = (0..self.theta.len()).collect();
        idx.sort_by(|&a, &b| self.theta[b].total_cmp(&self.theta[a]));
        self.marginal_or(&idx[..size])
    }

    /// Greedy forward selection of `size` patients maximizing the marginal
    /// OR. Returns the group (sorted) and its OR.
    pub fn greedy_max_or(&self, size: usize) -> (Vec<usize>, f64) {
        let n = self.theta.len();
        let mut group: Vec<usize> = Vec::with_capacity(size);
        for _ in 0..size.min(n) {
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for k in 0..n {
                if group.contains(&k) {
                    continue;
                }
                group.push(k);
                let v = self.marginal_or(&group);
                group.pop();
                if v > best.1 {
                    best = (k, v);
                }
            }
            group.push(best.0);
        }
        let value = self.marginal_or(&group);
        group.sort_unstable();
        (group, value)
    }
}
