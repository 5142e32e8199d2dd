use ratecate::data::normalize_exposure;
use ratecate::nuisance::{NuisanceConfig, OutcomeLearner};
use ratecate::pipeline::{fit_pipeline, Method, PipelineConfig};
use ratecate::sim::{generate, run_study, DgpName, DgpSpec, StudyConfig};

fn small(seed: u64, jobs: usize) -> StudyConfig {
    StudyConfig {
        n: 1500,
        replicates: 4,
        methods: vec![Method::Contrast, Method::Tworeg, Method::Naive],
        oracle_draws: 20_000,
        seed,
        jobs: Some(jobs),
        nuisance: NuisanceConfig {
            outcome_learner: OutcomeLearner::Glm,
            ..NuisanceConfig::default()
        },
        ..StudyConfig::default()
    }
}

#[test]
fn study_is_reproducible_across_thread_counts() {
    let spec = DgpSpec::new(DgpName::Setting2Poisson);
    let a = run_study(&spec, &small(5, 1)).unwrap();
    let b = run_study(&spec, &small(5, 3)).unwrap();
    assert_eq!(a, b);
    let c = run_study(&spec, &small(6, 1)).unwrap();
    assert_ne!(a.replicate_reports, c.replicate_reports);
}

#[test]
fn study_reports_coverage_for_contrast() {
    let report = run_study(&DgpSpec::new(DgpName::Setting1Contrast), &small(8, 2)).unwrap();
    let rows = report.coefficients.as_ref().expect("setting with true coefficients");
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.coverage) && r.replicates == 4));
    assert_eq!(report.true_curve.len(), report.q_grid.len());
    let dir = tempfile::tempdir().unwrap();
    report.write_artifacts(dir.path()).unwrap();
    for f in ["coefficients.csv", "correlations.csv", "report.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn pipeline_reports_one_slot_per_method() {
    let sim = generate(&DgpSpec::new(DgpName::Setting3Mild), 1500, 2).unwrap();
    let ds = normalize_exposure(&sim.data).unwrap();
    let config = PipelineConfig {
        methods: vec![Method::Naive, Method::Contrast],
        nuisance: NuisanceConfig {
            outcome_learner: OutcomeLearner::Glm,
            ..NuisanceConfig::default()
        },
        ..PipelineConfig::default()
    };
    let fits = fit_pipeline(&ds, &config).unwrap();
    let methods: Vec<Method> = fits.iter().map(|f| f.0).collect();
    assert_eq!(methods, [Method::Naive, Method::Contrast]);
    let contrast = fits[1].1.as_ref().unwrap();
    assert_eq!(contrast.contrast.as_ref().unwrap().delta.len(), 11);
    assert!(fit_pipeline(&ds, &PipelineConfig { methods: vec![], ..config.clone() }).is_err());
    let survival = PipelineConfig {
        rmtl: Some(Default::default()),
        ..config
    };
    assert!(fit_pipeline(&ds, &survival).is_err());
}
