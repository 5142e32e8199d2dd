//! Implementations of the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use ratecate::contrast::{orthogonality_suite, ContrastConfig, ContrastFit, OrthogonalitySuite};
use ratecate::data::{load_csv, normalize_exposure, write_csv, ObservationalDataset};
use ratecate::nuisance::{NuisanceConfig, OutcomeLearner};
use ratecate::pipeline::{fit_pipeline, Method, MethodFit, PipelineConfig};
use ratecate::sim::{self, generate, DgpName, DgpSpec, OracleSample, StudyConfig, ToyReport};
use ratecate::survival::{
    check_spurious_hr, rmtl_median_split, rmtl_validation_curve, RmtlConfig, RmtlValidationConfig,
    SpuriousHrReport, SurvivalLearner,
};
use ratecate::tworeg::TwoRegressionFit;
use ratecate::validate::{
    default_q_grid, median_split, theorem2_suite, validation_curve, OddsRatioExample, SplitSummary, Theorem2Suite,
    ValidationConfig, ValidationCurve,
};
use ratecate::{Error, Result};
use serde::Serialize;

use crate::config::{Learner, OutcomeMode, RunConfig};
use crate::provenance::Provenance;
use crate::report;

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    provenance: &'a Provenance,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

struct Context {
    run: RunConfig,
    provenance: Provenance,
}

impl Context {
    fn new(run: RunConfig) -> Result<Self> {
        fs::create_dir_all(&run.out)?;
        let provenance = Provenance::new(run.command, run.seed, &run);
        Ok(Context { run, provenance })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.run.out.join(name)
    }

    fn json(&self, name: &str, body: impl Serialize) -> Result<PathBuf> {
        let artifact = Artifact {
            provenance: &self.provenance,
            config: &self.run,
            body,
        };
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(&artifact)? + "\n")?;
        Ok(path)
    }

    fn text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, body)?;
        Ok(path)
    }

    fn preamble(&self) -> String {
        self.provenance.csv_header()
    }
}

fn count_learner(learner: Option<Learner>) -> Result<OutcomeLearner> {
    match learner {
        None | Some(Learner::Boost) => Ok(OutcomeLearner::Boosted),
        Some(Learner::Glm) => Ok(OutcomeLearner::Glm),
        Some(other) => Err(Error::input(format!(
            "learner {other:?} applies to survival outcomes only; use glm or boost"
        ))),
    }
}

fn survival_learner(learner: Option<Learner>) -> SurvivalLearner {
    match learner {
        None | Some(Learner::Rmst) => SurvivalLearner::Rmst,
        Some(Learner::Glm | Learner::Poisson) => SurvivalLearner::Poisson,
        Some(Learner::Boost) => SurvivalLearner::Boosted,
    }
}

fn pipeline_config(run: &RunConfig) -> Result<PipelineConfig> {
    let nuisance = NuisanceConfig {
        outcome_learner: match run.outcome {
            OutcomeMode::Count => count_learner(run.learner)?,
            OutcomeMode::Survival { .. } => OutcomeLearner::Boosted,
        },
        seed: run.seed,
        ..NuisanceConfig::default()
    };
    Ok(PipelineConfig {
        methods: run.methods.clone(),
        contrast: ContrastConfig {
            symmetric: run.symmetric,
            folds: run.folds,
            replicates: run.partition_replicates,
            seed: run.seed,
            ..ContrastConfig::default()
        },
        rmtl: run.tau().map(|tau| RmtlConfig {
            tau,
            learner: survival_learner(run.learner),
            nuisance: nuisance.clone(),
            ..RmtlConfig::default()
        }),
        nuisance,
        ..PipelineConfig::default()
    })
}

fn load(run: &RunConfig) -> Result<ObservationalDataset> {
    let path = run.input.as_ref().ok_or_else(|| Error::input("--input is required"))?;
    let ds = load_csv(path, &run.schema)?;
    match (run.outcome, ds.survival().is_some()) {
        (OutcomeMode::Survival { .. }, false) => Err(Error::input(format!(
            "--survival needs `{}` and `{}` columns",
            run.schema.time, run.schema.status
        ))),
        _ => Ok(ds),
    }
}

/// Reads named numeric columns from a headered CSV that may start with
/// `#` comment lines.
fn read_columns(path: &Path, names: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols = names
        .iter()
        .map(|n| {
            headers.iter().position(|h| h == n).ok_or_else(|| {
                Error::input(format!("{}: missing column `{n}`", path.display()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![Vec::new(); names.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        for (k, &c) in cols.iter().enumerate() {
            let raw = rec.get(c).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Cell {
                row,
                column: names[k].clone(),
                message: format!("non-numeric value `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Cell {
                    row,
                    column: names[k].clone(),
                    message: "non-finite value".into(),
                });
            }
            out[k].push(v);
        }
    }
    Ok(out)
}

fn write_scores(path: &Path, preamble: &str, fits: &[MethodFit], z: &[f64], d: usize) -> Result<()> {
    let columns = fits
        .iter()
        .map(|f| f.scorer.score_rows(z, d))
        .collect::<Result<Vec<_>>>()?;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    out.write_all(preamble.as_bytes())?;
    let names: Vec<&str> = fits.iter().map(|f| f.method.as_str()).collect();
    writeln!(out, "row,{}", names.join(","))?;
    for i in 0..z.len() / d {
        let cells: Vec<String> = columns.iter().map(|c| c[i].to_string()).collect();
        writeln!(out, "{i},{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MethodReport<'a> {
    method: Method,
    /// Log-scale weights, intercept first; absent for ratio scores.
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    contrast: Option<&'a ContrastFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regression: Option<&'a TwoRegressionFit>,
}

#[derive(Serialize)]
struct FitBody<'a> {
    n: usize,
    treated: usize,
    covariates: &'a [String],
    symmetric: bool,
    methods: Vec<MethodReport<'a>>,
}

pub fn fit(run: RunConfig) -> Result<()> {
    let ctx = Context::new(run)?;
    let run = &ctx.run;
    let ds = load(run)?;
    info!("fitting {} rows, {} covariates", ds.n(), ds.d());
    let mut fits = Vec::new();
    for (_, fit) in fit_pipeline(&ds, &pipeline_config(run)?)? {
        fits.push(fit?);
    }
    let body = FitBody {
        n: ds.n(),
        treated: ds.treated_count(),
        covariates: ds.covariate_names(),
        symmetric: run.symmetric,
        methods: fits
            .iter()
            .map(|f| MethodReport {
                method: f.method,
                weights: f
                    .contrast
                    .as_ref()
                    .map(|c| c.delta.as_slice())
                    .or(f.regression.as_ref().map(|r| r.delta_implied.as_slice())),
                contrast: f.contrast.as_ref(),
                regression: f.regression.as_ref(),
            })
            .collect(),
    };
    let json = ctx.json("fit.json", &body)?;
    let scores = ctx.path("scores.csv");
    write_scores(&scores, &ctx.preamble(), &fits, ds.z(), ds.d())?;
    let table = report::weight_table(ds.covariate_names(), &fits);
    ctx.text("weights.txt", &format!("{}{table}", ctx.preamble()))?;
    print!("{table}");
    if let Some(path) = &run.predict {
        let cols = read_columns(path, ds.covariate_names())?;
        let m = cols.first().map_or(0, Vec::len);
        let z: Vec<f64> = (0..m).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
        write_scores(&ctx.path("predictions.csv"), &ctx.preamble(), &fits, &z, ds.d())?;
    }
    println!("wrote {}, {} and weights.txt", json.display(), scores.display());
    Ok(())
}

#[derive(Serialize)]
struct ValidateBody<'a> {
    score_column: &'a str,
    metric: &'a str,
    curve: &'a ValidationCurve,
    /// True subgroup ratio of each curve point, from the simulation design.
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_ad: Option<&'a [f64]>,
    median_split: &'a SplitSummary,
}

pub fn validate(run: RunConfig) -> Result<()> {
    let ctx = Context::new(run)?;
    let run = &ctx.run;
    let mut ds = load(run)?;
    let column = run.score_column.clone().unwrap_or_else(|| Method::Contrast.as_str().into());
    let scores_path = run.scores.as_ref().ok_or_else(|| Error::input("--scores is required"))?;
    let scores = read_columns(scores_path, std::slice::from_ref(&column))?.remove(0);
    if scores.len() != ds.n() {
        return Err(Error::input(format!(
            "{} has {} scores for {} validation rows",
            scores_path.display(),
            scores.len(),
            ds.n()
        )));
    }
    let q_grid = run.q_grid.clone().unwrap_or_else(default_q_grid);
    let base = ValidationConfig {
        nuisance: NuisanceConfig {
            seed: run.seed,
            ..ValidationConfig::default().nuisance
        },
        ..ValidationConfig::default()
    };
    let (curve, split) = match run.outcome {
        OutcomeMode::Survival { tau } => {
            let cfg = RmtlValidationConfig {
                rmtl: RmtlConfig {
                    tau,
                    learner: survival_learner(run.learner),
                    ..RmtlConfig::default()
                },
                base,
            };
            (
                rmtl_validation_curve(&ds, &scores, &column, &q_grid, &cfg)?,
                rmtl_median_split(&ds, &scores, &cfg)?,
            )
        }
        OutcomeMode::Count => {
            if ds.exposure().is_some() {
                ds = normalize_exposure(&ds)?;
            }
            (
                validation_curve(&ds, &scores, &column, &q_grid, &base)?,
                median_split(&ds, &scores, &base)?,
            )
        }
    };
    let oracle = match run.oracle {
        Some(name) => {
            let spec = DgpSpec::new(name);
            if spec.dim() != ds.d() {
                return Err(Error::input(format!(
                    "setting {name} has {} covariates but the input has {}",
                    spec.dim(),
                    ds.d()
                )));
            }
            let sample = OracleSample::from_covariates(&spec, ds.z().to_vec(), ds.d());
            Some(sample.ad_curve(&scores, &q_grid)?)
        }
        None => None,
    };

    let mut csv = ctx.preamble();
    let mut body = Vec::new();
    curve.write_csv(&mut body)?;
    let body = String::from_utf8(body).map_err(|e| Error::Invariant(e.to_string()))?;
    for (i, line) in body.lines().enumerate() {
        csv.push_str(line);
        match (&oracle, i) {
            (None, _) => {}
            (Some(_), 0) => csv.push_str(",oracle_ad"),
            (Some(o), i) => csv.push_str(&format!(",{}", o[i - 1])),
        }
        csv.push('\n');
    }
    ctx.text("curve.csv", &csv)?;
    ctx.json(
        "curve.json",
        ValidateBody {
            score_column: &column,
            metric: &curve.metric,
            curve: &curve,
            oracle_ad: oracle.as_deref(),
            median_split: &split,
        },
    )?;
    ctx.json("split.json", &split)?;
    let ad: Vec<Option<f64>> = curve.points.iter().map(|p| p.estimate.as_ref().map(|e| e.ad)).collect();
    let mut columns = vec![("ad", ad.clone())];
    if let Some(o) = &oracle {
        columns.push(("oracle_ad", o.iter().map(|&v| Some(v)).collect()));
    }
    ctx.text("curve.dat", &report::gnuplot_table(&ctx.preamble(), &q_grid, &columns))?;

    println!("{} curve of `{column}` over q = {:?}", curve.metric, q_grid);
    println!("  estimate {}", report::sparkline(&ad));
    if let Some(o) = &oracle {
        println!("  oracle   {}", report::sparkline(&o.iter().map(|&v| Some(v)).collect::<Vec<_>>()));
    }
    for p in &curve.points {
        match &p.estimate {
            Some(e) => println!("  q={:<5} m={:<6} ratio={:.4}", p.q, e.m_c, e.ad),
            None => println!("  q={:<5} not estimated: {}", p.q, p.failure.as_deref().unwrap_or("")),
        }
    }
    println!(
        "median split: high-score half {:.4} (n={}), low-score half {:.4} (n={})",
        split.high.ad, split.high.m_c, split.low.ad, split.low.m_c
    );
    Ok(())
}

pub fn simulate(run: RunConfig) -> Result<()> {
    let name = run.setting.ok_or_else(|| Error::input("--setting is required"))?;
    if name == DgpName::ToyConfounding && run.export.is_none() {
        return toy(run);
    }
    let ctx = Context::new(run)?;
    let run = &ctx.run;
    let spec = DgpSpec::new(name);
    if let Some(path) = &run.export {
        let n = run.n.unwrap_or(2000);
        let sim = generate(&spec, n, run.seed)?;
        write_csv(&sim.data, path)?;
        let body = fs::read_to_string(path)?;
        fs::write(path, ctx.preamble() + &body)?;
        println!("wrote {n} rows of {name} to {}", path.display());
        return Ok(());
    }
    let survival = spec.is_survival();
    let pipeline = pipeline_config(&RunConfig {
        outcome: OutcomeMode::Count,
        learner: if survival { None } else { run.learner },
        ..run.clone()
    })?;
    let config = StudyConfig {
        n: run.n.unwrap_or(5000),
        replicates: run.replicates.unwrap_or(200),
        methods: run.methods.clone(),
        q_grid: run.q_grid.clone().unwrap_or_else(default_q_grid),
        oracle_draws: run.oracle_draws.unwrap_or(100_000),
        seed: run.seed,
        jobs: run.jobs,
        rmtl: RmtlConfig {
            learner: match run.learner {
                None => SurvivalLearner::Boosted,
                some => survival_learner(some),
            },
            ..RmtlConfig::default()
        },
        nuisance: pipeline.nuisance,
        contrast: pipeline.contrast,
        ..StudyConfig::default()
    };
    let report = sim::run_study(&spec, &config)?;
    report.write_artifacts_with(&run.out, &ctx.preamble())?;
    ctx.json("provenance.json", BTreeMap::<&str, &str>::new())?;

    println!("{name}: n = {}, {} replicates", config.n, config.replicates);
    if let Some(rows) = &report.coefficients {
        println!("{:<12} {:>8} {:>9} {:>9} {:>9}", "coefficient", "true", "bias", "coverage", "mean se");
        for r in rows {
            println!(
                "{:<12} {:>8.3} {:>9.4} {:>9.3} {:>9.4}",
                r.name, r.delta0, r.bias, r.coverage, r.mean_se
            );
        }
    }
    println!("{:<16} {:>9} {:>9} {:>8}", "method", "pearson", "spearman", "failed");
    for s in &report.methods {
        let med = |q: &Option<sim::study::Quantiles>| q.as_ref().map_or(f64::NAN, |q| q.median);
        println!("{:<16} {:>9.3} {:>9.3} {:>8}", s.method, med(&s.pearson), med(&s.spearman), s.failures);
    }
    if let Some(rate) = report.mean_censoring_rate {
        println!("mean censoring rate {rate:.3}");
    }
    println!("artifacts in {}", run.out.display());
    Ok(())
}

pub fn toy(run: RunConfig) -> Result<()> {
    let ctx = Context::new(run)?;
    let run = &ctx.run;
    let n = run.n.unwrap_or(100_000);
    let rep: ToyReport = sim::toy_check(n, run.seed, !run.randomized)?;
    ctx.json("toy.json", &rep)?;
    println!(
        "{} design, n = {n}",
        if rep.confounded { "confounded" } else { "randomized" }
    );
    println!("naive treated fit   (intercept, slope) = ({:.3}, {:.3})", rep.beta1[0], rep.beta1[1]);
    println!("naive control fit   (intercept, slope) = ({:.3}, {:.3})", rep.beta0[0], rep.beta0[1]);
    println!("log-CATE slope: naive {:.3}, two regressions {:.3}, contrast {:.3}", rep.naive_slope, rep.tworeg_slope, rep.contrast_slope);
    Ok(())
}

#[derive(Serialize)]
struct OddsRatioReport {
    top_by_conditional_or: f64,
    greedy_max_or: f64,
}

#[derive(Serialize)]
struct CheckBody {
    theorem2: Theorem2Suite,
    orthogonality: OrthogonalitySuite,
    odds_ratio: OddsRatioReport,
    spurious_hr: SpuriousHrReport,
    passed: BTreeMap<&'static str, bool>,
}

pub fn check(run: RunConfig) -> Result<()> {
    let ctx = Context::new(run)?;
    let run = &ctx.run;
    let theorem2 = theorem2_suite(run.populations.unwrap_or(100), run.seed, 1e-10);
    let orthogonality = orthogonality_suite(run.directions.unwrap_or(20), run.seed)?;
    let or = OddsRatioExample::new(100);
    let odds_ratio = OddsRatioReport {
        top_by_conditional_or: or.top_by_conditional_or(10),
        greedy_max_or: or.greedy_max_or(10).1,
    };
    let spurious_hr = check_spurious_hr(run.n.unwrap_or(100_000), run.seed, 1.0)?;
    let dirs = orthogonality.at_zero.len();
    let passed = BTreeMap::from([
        ("theorem2", theorem2.failures == 0),
        (
            "orthogonality",
            orthogonality.max_at_zero() <= 1e-6 && orthogonality.count_at_half_above(1e-3) * 4 >= dirs * 3,
        ),
        (
            "odds_ratio",
            (odds_ratio.top_by_conditional_or - 1.14).abs() <= 0.01 && (odds_ratio.greedy_max_or - 1.66).abs() <= 0.01,
        ),
        (
            "spurious_hr",
            (spurious_hr.beta1 + 1.85).abs() <= 0.1 && (spurious_hr.beta0 + 1.55).abs() <= 0.1,
        ),
    ]);
    let body = CheckBody {
        theorem2,
        orthogonality,
        odds_ratio,
        spurious_hr,
        passed,
    };
    ctx.json("check.json", &body)?;
    println!(
        "ranking monotonicity: {} populations, {} failures, max violations {:.1e} / {:.1e}",
        body.theorem2.populations,
        body.theorem2.failures,
        body.theorem2.max_monotonicity_violation,
        body.theorem2.max_dominance_violation
    );
    println!(
        "orthogonality: max |g'(0)| = {:.2e}; {}/{dirs} directions with |g'(0.5)| > 1e-3",
        body.orthogonality.max_at_zero(),
        body.orthogonality.count_at_half_above(1e-3)
    );
    println!(
        "odds-ratio example: top-10 by conditional OR {:.3}, greedy {:.3}",
        body.odds_ratio.top_by_conditional_or, body.odds_ratio.greedy_max_or
    );
    println!(
        "constant hazard ratio, Cox slopes: treated {:.3}, control {:.3}",
        body.spurious_hr.beta1, body.spurious_hr.beta0
    );
    let failed: Vec<&str> = body.passed.iter().filter(|(_, ok)| !**ok).map(|(k, _)| *k).collect();
    if failed.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(Error::Invariant(format!("checks failed: {}", failed.join(", "))))
    }
}
