use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use ratecate::contrast::{estimating_function, fit_contrast, ContrastConfig, DiscreteInstance};
use ratecate::data::ObservationalDataset;
use ratecate::nuisance::irls::expit;
use ratecate::nuisance::{NuisanceConfig, OutcomeLearner};
use ratecate::seed;

fn glm() -> NuisanceConfig {
    NuisanceConfig {
        outcome_learner: OutcomeLearner::Glm,
        ..NuisanceConfig::default()
    }
}

fn quick(seed_: u64) -> ContrastConfig {
    ContrastConfig {
        folds: 5,
        replicates: 1,
        seed: seed_,
        ..ContrastConfig::default()
    }
}

fn pois(mu: f64, rng: &mut impl Rng) -> f64 {
    Poisson::new(mu).unwrap().sample(rng)
}

/// Three support points `{-1, 0, 1}` with log-linear control mean and
/// logistic propensity, so both working models are correct.
fn three_point() -> DiscreteInstance {
    let support = vec![vec![-1.0], vec![0.0], vec![1.0]];
    DiscreteInstance {
        mu0: support.iter().map(|z: &Vec<f64>| (0.4 + 0.3 * z[0]).exp()).collect(),
        pi1: support.iter().map(|z: &Vec<f64>| expit(-0.2 + 0.6 * z[0])).collect(),
        prob: vec![0.3, 0.45, 0.25],
        delta0: vec![0.3, -0.5],
        support,
    }
}

fn sample(inst: &DiscreteInstance, n: usize, seed_: u64) -> ObservationalDataset {
    let mut rng = seed::rng(seed_);
    let cum: Vec<f64> = inst.prob.iter().scan(0.0, |s, p| { *s += p; Some(*s) }).collect();
    let (mut y, mut r, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let u: f64 = rng.random();
        let j = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
        let arm = u8::from(rng.random::<f64>() < inst.pi1[j]);
        let mu = if arm == 1 { inst.mu1(j) } else { inst.mu0[j] };
        y.push(pois(mu, &mut rng));
        r.push(arm);
        z.extend_from_slice(&inst.support[j]);
    }
    ObservationalDataset::new(y, r, z, inst.support[0].len()).unwrap()
}

#[test]
fn estimating_function_has_mean_zero_at_truth() {
    let inst = three_point();
    let n = 1_000_000;
    let ds = sample(&inst, n, 1);
    let index = |z: f64| (z + 1.0) as usize;
    let (mut sum, mut sq) = ([0.0; 2], [0.0; 2]);
    for i in 0..n {
        let z = ds.z_row(i);
        let j = index(z[0]);
        let m = estimating_function(ds.y()[i], ds.r()[i], z, &inst.delta0, inst.mu0[j], inst.pi1[j]).unwrap();
        for k in 0..2 {
            sum[k] += m[k];
            sq[k] += m[k] * m[k];
        }
    }
    for k in 0..2 {
        let mean = sum[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "coordinate {k}: mean {mean}, se {se}");
    }
}

#[test]
fn estimate_on_discrete_support_covers_population_root() {
    let inst = three_point();
    let root = inst.population_root(&inst.mu0, None, &inst.pi1, false).unwrap();
    for (a, b) in root.iter().zip(&inst.delta0) {
        assert!((a - b).abs() < 1e-10);
    }
    let ds = sample(&inst, 100_000, 2);
    let fit = fit_contrast(&ds, &glm(), &quick(2)).unwrap();
    for j in 0..2 {
        let gap = (fit.delta[j] - root[j]).abs();
        assert!(gap <= 3.0 * fit.std_errors[j], "{j}: {} vs {} (se {})", fit.delta[j], root[j], fit.std_errors[j]);
    }
}

#[test]
fn no_effect_randomized_gives_zero_contrast() {
    let mut rng = seed::rng(3);
    let (n, d) = (100_000, 3);
    let z: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let r: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
    let y: Vec<f64> = z.chunks(d).map(|row| pois((0.5 + 0.3 * row[0] - 0.2 * row[2]).exp(), &mut rng)).collect();
    let ds = ObservationalDataset::new(y, r, z, d).unwrap();
    let fit = fit_contrast(&ds, &glm(), &quick(3)).unwrap();
    assert!(fit.delta.iter().all(|v| v.abs() <= 0.05), "{:?}", fit.delta);
}

#[test]
fn sandwich_is_symmetric_and_positive() {
    let ds = sample(&three_point(), 20_000, 4);
    for symmetric in [true, false] {
        let fit = fit_contrast(&ds, &glm(), &ContrastConfig { symmetric, ..quick(4) }).unwrap();
        assert_eq!(fit.symmetric, symmetric);
        let cov = fit.covariance_matrix();
        assert_eq!(cov, cov.transpose());
        let eig = SymmetricEigen::new(cov).eigenvalues;
        assert!(eig.iter().all(|&v| v >= -1e-10), "{eig}");
        let (lo, hi) = fit.wald_interval(1, 1.96);
        assert!(lo < fit.delta[1] && fit.delta[1] < hi);
    }
}

#[test]
fn fit_is_deterministic_given_seed() {
    let ds = sample(&three_point(), 5_000, 5);
    let cfg = ContrastConfig { replicates: 2, ..quick(9) };
    let a = fit_contrast(&ds, &NuisanceConfig::default(), &cfg).unwrap();
    let b = fit_contrast(&ds, &NuisanceConfig::default(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.replicate_deltas.len(), 2);
}
