//! Replicate runner and aggregation for the simulation studies.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate, DgpSpec};
use super::oracle::{population_curve, OracleSample, PopulationPoint};
use crate::contrast::ContrastConfig;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceConfig;
use crate::pipeline::{fit_pipeline, PipelineConfig};
pub use crate::pipeline::Method;
use crate::seed::{self, Stream};
use crate::survival::{RmtlConfig, SurvivalLearner};
use crate::tworeg::TwoRegressionConfig;
use crate::validate::{default_q_grid, CurvePoint, SubgroupAdEstimate, ValidationCurve};

/// Normal quantile for two-sided 95% Wald intervals.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub n: usize,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub q_grid: Vec<f64>,
    /// Quasi-random covariate draws standing in for the population when
    /// computing true curves and correlations.
    pub oracle_draws: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Nuisance learners for contrast and two-regression on count designs.
    pub nuisance: NuisanceConfig,
    pub contrast: ContrastConfig,
    pub tworeg: TwoRegressionConfig,
    /// Survival designs: horizon, censoring floor and the initial learner
    /// for contrast and two-regression (boosting by default).
    pub rmtl: RmtlConfig,
    /// Choose the boosting tree count by cross-validation once per arm on
    /// the full replicate sample and reuse it for every fold fit.
    pub tune_boosting_once: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n: 5000,
            replicates: 200,
            methods: Method::ALL.to_vec(),
            q_grid: default_q_grid(),
            oracle_draws: 100_000,
            seed: 20240101,
            jobs: None,
            nuisance: NuisanceConfig::default(),
            contrast: ContrastConfig::default(),
            tworeg: TwoRegressionConfig::default(),
            rmtl: RmtlConfig {
                learner: SurvivalLearner::Boosted,
                ..RmtlConfig::default()
            },
            tune_boosting_once: true,
        }
    }
}

/// One method's result on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// Pearson correlation between the log score and the true log CATE.
    pub pearson: f64,
    pub spearman: f64,
    /// True population curve of the score on the q grid.
    pub curve: Vec<PopulationPoint>,
    /// `δ̂ − δ₀` per coordinate (contrast on designs with a true `δ₀`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covered: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub replicate: usize,
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
    /// Methods that failed on this replicate, with the error message.
    pub failures: Vec<(Method, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censoring_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    pub pearson: Option<Quantiles>,
    pub spearman: Option<Quantiles>,
    /// Pointwise medians of the true curves.
    pub median_curve: Vec<PopulationPoint>,
}

/// Bias and Wald coverage for one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub index: usize,
    pub name: String,
    pub delta0: f64,
    pub bias: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub empirical_sd: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub spec: DgpSpec,
    pub n: usize,
    pub replicates: usize,
    pub q_grid: Vec<f64>,
    /// Curve of the true CATE, the benchmark.
    pub true_curve: Vec<PopulationPoint>,
    pub methods: Vec<MethodSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<CoefficientRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_censoring_rate: Option<f64>,
    pub replicate_reports: Vec<ReplicateReport>,
}

impl StudyReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn median_pearson(&self, m: Method) -> Option<f64> {
        self.method(m).and_then(|s| s.pearson.as_ref()).map(|q| q.median)
    }

    /// Writes `coefficients.csv` (when available), `correlations.csv`,
    /// `curve_<method>.csv` and `report.json` into `dir`.
    pub fn write_artifacts(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.write_artifacts_with(dir, "")
    }

    /// As [`write_artifacts`](Self::write_artifacts), starting every CSV
    /// file with `preamble` (typically `#` comment lines).
    pub fn write_artifacts_with(&self, dir: impl AsRef<Path>, preamble: &str) -> Result<()> {
        use std::io::Write;
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let create = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            f.write_all(preamble.as_bytes())?;
            Ok(f)
        };
        if let Some(rows) = &self.coefficients {
            let mut out = create("coefficients.csv")?;
            writeln!(out, "index,name,delta0,bias,coverage,mean_se,empirical_sd,replicates")?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.index, r.name, r.delta0, r.bias, r.coverage, r.mean_se, r.empirical_sd, r.replicates
                )?;
            }
        }
        let mut out = create("correlations.csv")?;
        writeln!(out, "method,metric,q25,median,q75,successes,failures")?;
        for s in &self.methods {
            for (metric, q) in [("pearson_log", &s.pearson), ("spearman", &s.spearman)] {
                match q {
                    Some(q) => writeln!(
                        out,
                        "{},{metric},{},{},{},{},{}",
                        s.method, q.q25, q.median, q.q75, s.successes, s.failures
                    )?,
                    None => writeln!(out, "{},{metric},,,,{},{}", s.method, s.successes, s.failures)?,
                }
            }
        }
        out.flush()?;
        curve_of("true_cate", &self.true_curve).write_csv(create("curve_true_cate.csv")?)?;
        for s in &self.methods {
            curve_of(s.method.as_str(), &s.median_curve).write_csv(create(&format!("curve_{}.csv", s.method))?)?;
        }
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn curve_of(name: &str, points: &[PopulationPoint]) -> ValidationCurve {
    ValidationCurve {
        score_name: name.to_string(),
        metric: "population_ratio".to_string(),
        points: points
            .iter()
            .map(|p| CurvePoint {
                q: p.q,
                threshold: (p.q < 1.0).then_some(p.threshold),
                estimate: Some(SubgroupAdEstimate {
                    c: p.threshold,
                    m_c: 0,
                    mu1_hat: p.mu1,
                    mu0_hat: p.mu0,
                    ad: p.ad,
                    log_ad_se: 0.0,
                }),
                failure: None,
            })
            .collect(),
    }
}

/// Pearson correlation; `NaN` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks (ties share the mean rank).
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_unstable_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantiles(values: impl Iterator<Item = f64>) -> Option<Quantiles> {
    let mut v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(Quantiles {
        q25: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q75: quantile(&v, 0.75),
    })
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    quantiles(values).map_or(f64::NAN, |q| q.median)
}

fn pipeline_config(spec: &DgpSpec, config: &StudyConfig, rep_seed: u64) -> PipelineConfig {
    let reseed = |n: &NuisanceConfig| NuisanceConfig {
        seed: rep_seed,
        ..n.clone()
    };
    PipelineConfig {
        methods: config.methods.clone(),
        nuisance: reseed(&config.nuisance),
        contrast: ContrastConfig {
            seed: rep_seed,
            ..config.contrast.clone()
        },
        tworeg: config.tworeg.clone(),
        rmtl: spec.is_survival().then(|| RmtlConfig {
            nuisance: reseed(&config.rmtl.nuisance),
            ..config.rmtl.clone()
        }),
        tune_boosting_once: config.tune_boosting_once,
    }
}

/// Generates one replicate, fits every requested method and scores it
/// against the oracle sample.
pub fn run_replicate(
    spec: &DgpSpec,
    config: &StudyConfig,
    sample: &OracleSample,
    replicate: usize,
) -> Result<ReplicateReport> {
    let rep_seed = seed::derive(config.seed, Stream::Replicate, replicate as u64);
    let sim = generate(spec, config.n, rep_seed)?;
    let fitted = fit_pipeline(&sim.data, &pipeline_config(spec, config, rep_seed));
    let mut report = ReplicateReport {
        replicate,
        seed: rep_seed,
        outcomes: Vec::new(),
        failures: Vec::new(),
        censoring_rate: sim.censoring_rate(),
    };
    let fitted = match fitted {
        Ok(f) => f,
        Err(e) => {
            let msg = e.to_string();
            report.failures = config.methods.iter().map(|&m| (m, msg.clone())).collect();
            return Ok(report);
        }
    };
    for (method, fit) in fitted {
        let scored = fit.and_then(|f| {
            let values = f.scorer.score_rows(&sample.z, sample.d)?;
            let curve = population_curve(sample, &values, &config.q_grid)?;
            Ok((values, curve, f.contrast))
        });
        match scored {
            Ok((values, curve, contrast)) => {
                let mut outcome = MethodOutcome {
                    method,
                    pearson: pearson(&values, &sample.log_cate),
                    spearman: spearman(&values, &sample.log_cate),
                    curve,
                    error: None,
                    covered: None,
                    std_errors: None,
                };
                if let (Method::Contrast, Some(fit), Some(delta0)) = (method, &contrast, spec.delta0()) {
                    outcome.error = Some(fit.delta.iter().zip(&delta0).map(|(a, b)| a - b).collect());
                    outcome.covered = Some(
                        (0..delta0.len())
                            .map(|j| {
                                let (lo, hi) = fit.wald_interval(j, Z95);
                                lo <= delta0[j] && delta0[j] <= hi
                            })
                            .collect(),
                    );
                    outcome.std_errors = Some(fit.std_errors.clone());
                }
                report.outcomes.push(outcome);
            }
            Err(e) => report.failures.push((method, e.to_string())),
        }
    }
    Ok(report)
}

/// Runs `config.replicates` independent replicates of `spec` and aggregates
/// them. Failed fits are counted per method and excluded from summaries.
pub fn run_study(spec: &DgpSpec, config: &StudyConfig) -> Result<StudyReport> {
    if config.methods.is_empty() {
        return Err(Error::input("at least one method is required"));
    }
    if config.replicates == 0 || config.n < 2 {
        return Err(Error::input("need at least one replicate and two rows"));
    }
    if spec.name == super::DgpName::ToyConfounding {
        return Err(Error::input("the toy design has its own check; use toy_confounding_check"));
    }
    crate::validate::check_grid(&config.q_grid)?;
    let sample = OracleSample::draw(spec, config.oracle_draws, config.seed)?;
    let run = || -> Result<Vec<ReplicateReport>> {
        (0..config.replicates)
            .into_par_iter()
            .map(|k| run_replicate(spec, config, &sample, k))
            .collect()
    };
    let reports = match config.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Invariant(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let true_curve = population_curve(&sample, &sample.log_cate, &config.q_grid)?;
    let methods = config
        .methods
        .iter()
        .map(|&m| summarize(m, &reports, &config.q_grid))
        .collect();
    let coefficients = (config.methods.contains(&Method::Contrast))
        .then(|| spec.delta0().map(|d0| coefficient_table(&d0, &reports)))
        .flatten();
    let rates: Vec<f64> = reports.iter().filter_map(|r| r.censoring_rate).collect();
    Ok(StudyReport {
        spec: *spec,
        n: config.n,
        replicates: config.replicates,
        q_grid: config.q_grid.clone(),
        true_curve,
        methods,
        coefficients,
        mean_censoring_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
        replicate_reports: reports,
    })
}

fn summarize(method: Method, reports: &[ReplicateReport], q_grid: &[f64]) -> MethodSummary {
    let outcomes: Vec<&MethodOutcome> = reports
        .iter()
        .flat_map(|r| r.outcomes.iter().filter(|o| o.method == method))
        .collect();
    let failures = reports
        .iter()
        .flat_map(|r| r.failures.iter().filter(|(m, _)| *m == method))
        .count();
    let median_curve = q_grid
        .iter()
        .enumerate()
        .map(|(j, &q)| {
            let field = |f: fn(&PopulationPoint) -> f64| median(outcomes.iter().map(|o| f(&o.curve[j])));
            PopulationPoint {
                q,
                threshold: field(|p| p.threshold),
                share: field(|p| p.share),
                mu1: field(|p| p.mu1),
                mu0: field(|p| p.mu0),
                ad: field(|p| p.ad),
            }
        })
        .collect();
    MethodSummary {
        method,
        successes: outcomes.len(),
        failures,
        pearson: quantiles(outcomes.iter().map(|o| o.pearson)),
        spearman: quantiles(outcomes.iter().map(|o| o.spearman)),
        median_curve,
    }
}

fn coefficient_table(delta0: &[f64], reports: &[ReplicateReport]) -> Vec<CoefficientRow> {
    let rows: Vec<&MethodOutcome> = reports
        .iter()
        .flat_map(|r| r.outcomes.iter().filter(|o| o.method == Method::Contrast && o.error.is_some()))
        .collect();
    let k = rows.len() as f64;
    (0..delta0.len())
        .map(|j| {
            let errs: Vec<f64> = rows.iter().map(|o| o.error.as_ref().expect("filtered")[j]).collect();
            let bias = errs.iter().sum::<f64>() / k;
            let var = errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            CoefficientRow {
                index: j,
                name: if j == 0 { "intercept".to_string() } else { format!("z{j}") },
                delta0: delta0[j],
                bias,
                coverage: rows.iter().filter(|o| o.covered.as_ref().expect("filtered")[j]).count() as f64 / k,
                mean_se: rows.iter().map(|o| o.std_errors.as_ref().expect("filtered")[j]).sum::<f64>() / k,
                empirical_sd: var.sqrt(),
                replicates: rows.len(),
            }
        })
        .collect()
}
