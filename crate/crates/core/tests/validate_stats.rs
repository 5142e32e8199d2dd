use rand::Rng;
use ratecate::data::{normalize_exposure, ObservationalDataset};
use ratecate::seed;
use ratecate::sim::{generate, DgpName, DgpSpec, OracleSample};
use ratecate::validate::{
    estimate_ad, median_split, quantile_threshold, theorem2_suite, validation_curve, OddsRatioExample,
    ValidationConfig, WHOLE_POPULATION,
};

#[test]
fn quantile_threshold_counts_from_the_top() {
    let s: Vec<f64> = (1..=10).map(f64::from).collect();
    assert_eq!(quantile_threshold(&s, 0.25).unwrap(), 8.0);
    assert_eq!(quantile_threshold(&s, 0.1).unwrap(), 10.0);
    assert_eq!(quantile_threshold(&s, 0.5).unwrap(), 6.0);
    assert_eq!(quantile_threshold(&s, 1.0).unwrap(), WHOLE_POPULATION);
    assert!(quantile_threshold(&s, 0.0).is_err());
    assert!(quantile_threshold(&[], 0.5).is_err());
}

#[test]
fn true_score_estimate_tracks_population_value() {
    let spec = DgpSpec::new(DgpName::Setting1Contrast);
    let sim = generate(&spec, 100_000, 31).unwrap();
    let ds = normalize_exposure(&sim.data).unwrap();
    let c = quantile_threshold(&sim.truth.log_cate, 0.25).unwrap();
    let est = estimate_ad(&ds, &sim.truth.log_cate, c, &ValidationConfig::default()).unwrap();

    let oracle = OracleSample::draw(&spec, 400_000, 32).unwrap();
    let truth = oracle.ad_curve(&oracle.log_cate, &[0.25]).unwrap()[0];
    let z = (est.ad.ln() - truth.ln()) / est.log_ad_se;
    assert!(z.abs() < 3.0, "estimate {} vs {truth} (se {})", est.ad, est.log_ad_se);
}

fn randomized_constant(n: usize) -> ObservationalDataset {
    let mut rng = seed::rng(5);
    let mut z = Vec::with_capacity(2 * n);
    let mut r = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        z.push(rng.random_range(-1.0..1.0));
        z.push(rng.random_range(-1.0..1.0));
        let arm = u8::from(rng.random::<bool>());
        r.push(arm);
        y.push(if arm == 1 { 3.0 } else { 1.5 });
    }
    ObservationalDataset::new(y, r, z, 2).unwrap()
}

#[test]
fn constant_arm_outcomes_give_exact_ratio() {
    let ds = randomized_constant(2000);
    let scores: Vec<f64> = ds.z().chunks(2).map(|row| row[0]).collect();
    let curve = validation_curve(&ds, &scores, "z1", &[0.2, 0.5, 1.0], &ValidationConfig::default()).unwrap();
    for (_, ad) in curve.ad_series() {
        assert!((ad - 2.0).abs() < 1e-8, "{ad}");
    }
}

#[test]
fn constant_score_gives_flat_curve() {
    let ds = normalize_exposure(&generate(&DgpSpec::new(DgpName::Setting2Poisson), 3000, 3).unwrap().data).unwrap();
    let scores = vec![0.7; ds.n()];
    let curve = validation_curve(&ds, &scores, "flat", &[0.1, 0.4, 0.8, 1.0], &ValidationConfig::default()).unwrap();
    let series = curve.ad_series();
    assert_eq!(series.len(), 4);
    for w in series.windows(2) {
        assert!((w[0].1 - w[1].1).abs() < 1e-12);
    }
    let split = median_split(&ds, &scores, &ValidationConfig::default()).unwrap();
    assert_eq!(split.high.m_c + split.low.m_c, ds.n());
}

#[test]
fn subgroup_without_controls_is_rejected() {
    let n = 400;
    let z: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let r: Vec<u8> = z.iter().map(|&v| u8::from(v >= 0.5 || v < 0.25)).collect();
    let ds = ObservationalDataset::new(vec![1.0; n], r, z.clone(), 1).unwrap();
    assert!(estimate_ad(&ds, &z, 0.5, &ValidationConfig::default()).is_err());
    assert!(estimate_ad(&ds, &z, WHOLE_POPULATION, &ValidationConfig::default()).is_ok());
}

#[test]
fn ranking_by_true_ratio_is_monotone_and_dominant() {
    let suite = theorem2_suite(300, 2024, 1e-10);
    assert_eq!(suite.failures, 0, "{suite:?}");
}

#[test]
fn conditional_odds_ratio_ranking_is_not_optimal() {
    let ex = OddsRatioExample::new(100);
    let top = ex.top_by_conditional_or(10);
    let (group, best) = ex.greedy_max_or(10);
    assert!((top - 1.14).abs() < 0.01, "{top}");
    assert!((best - 1.66).abs() < 0.01, "{best}");
    assert!(group.iter().any(|&i| i >= 10));
}
