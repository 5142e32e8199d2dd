use ratecate::sim::{expected_propensity, generate, toy_check, DgpName, DgpSpec, OracleSample};

#[test]
fn displayed_truths() {
    let z = [0.0; 10];
    let s2 = DgpSpec::new(DgpName::Setting2Poisson);
    assert!((s2.log_cate(&z) - 0.375).abs() < 1e-12);
    let s1 = DgpSpec::new(DgpName::Setting1Contrast);
    let mut e = [0.0; 10];
    e[0] = 1.0;
    assert!((s1.log_cate(&e) - (-0.1 + 0.25)).abs() < 1e-12);
    e[0] = 0.0;
    e[5] = 1.0;
    assert!((s1.log_cate(&e) - (-0.1 + 0.25)).abs() < 1e-12);
    e[5] = 0.0;
    e[3] = 1.0;
    assert!((s1.log_cate(&e) + 0.1).abs() < 1e-12);
}

#[test]
fn propensity_inside_unit_interval_on_support() {
    for name in [DgpName::Setting1Contrast, DgpName::Surv1, DgpName::Surv2] {
        let spec = DgpSpec::new(name);
        for corner in 0..8u32 {
            let mut z = [0.0; 10];
            for (bit, j) in [0usize, 1, 5].into_iter().enumerate() {
                z[j] = if corner >> bit & 1 == 1 { 2.0 } else { -2.0 };
            }
            let p = spec.pi1(&z);
            assert!(p > 0.0 && p < 1.0);
        }
    }
}

#[test]
fn treated_fraction_matches_quadrature() {
    for name in [DgpName::Setting1Contrast, DgpName::Surv1] {
        let spec = DgpSpec::new(name);
        let sim = generate(&spec, 100_000, 4).unwrap();
        let share = sim.data.treated_count() as f64 / 1e5;
        let expected = expected_propensity(&spec, 200).unwrap();
        assert!((share - expected).abs() < 0.01, "{name}: {share} vs {expected}");
    }
}

#[test]
fn covariates_are_clipped_and_correlated() {
    let sim = generate(&DgpSpec::new(DgpName::Setting3Mild), 20_000, 9).unwrap();
    let z = sim.data.z();
    assert!(z.iter().all(|v| v.abs() <= 2.0));
    let col = |j: usize| -> Vec<f64> { z.chunks(10).map(|r| r[j]).collect() };
    let corr = |a: &[f64], b: &[f64]| ratecate::sim::study::pearson(a, b);
    assert!((corr(&col(6), &col(7)) - 0.5).abs() < 0.05);
    assert!(corr(&col(0), &col(1)).abs() < 0.03);
}

#[test]
fn true_score_population_curve() {
    let spec = DgpSpec::new(DgpName::Setting1Contrast);
    let sample = OracleSample::draw(&spec, 50_000, 3).unwrap();
    let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let truth = sample.ad_curve(&sample.log_cate, &grid).unwrap();
    assert!(truth.windows(2).all(|w| w[0] >= w[1]));
    assert!((truth[9] - sample.overall_ratio()).abs() < 1e-12);
    let anti: Vec<f64> = sample.log_cate.iter().map(|v| -v).collect();
    let anti = sample.ad_curve(&anti, &[0.25, 1.0]).unwrap();
    assert!(anti[0] <= anti[1]);
}

#[test]
fn toy_randomized_variant_has_no_spurious_slope() {
    let rep = toy_check(100_000, 5, false).unwrap();
    assert!((rep.beta1[1] - rep.beta0[1]).abs() <= 0.05, "{rep:?}");
    assert!(rep.naive_slope.abs() <= 0.05);
}

#[test]
fn same_seed_same_data() {
    let spec = DgpSpec::new(DgpName::Surv2);
    let a = generate(&spec, 500, 77).unwrap();
    let b = generate(&spec, 500, 77).unwrap();
    assert_eq!(a.data.survival(), b.data.survival());
    assert_eq!(a.data.z(), b.data.z());
    assert_ne!(generate(&spec, 500, 78).unwrap().data.z(), a.data.z());
}
