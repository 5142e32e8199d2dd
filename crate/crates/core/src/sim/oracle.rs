//! Exact population quantities of the simulation designs: randomized
//! quasi-Monte-Carlo covariate samples, population validation curves and
//! quadrature over the clipped Gaussian law.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::dgp::{DgpName, DgpSpec, CLIP, DIM};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    out
}

/// Covariate draws with their exact conditional means, used as a stand-in
/// for the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSample {
    pub d: usize,
    /// Row-major covariates.
    pub z: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub log_cate: Vec<f64>,
}

impl OracleSample {
    /// `m` points of a Halton sequence with a random Cranley–Patterson
    /// shift, pushed through the design's covariate law.
    pub fn draw(spec: &DgpSpec, m: usize, seed_: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::input("oracle sample size must be positive"));
        }
        let mut rng = seed::stream_rng(seed_, Stream::Oracle, 0);
        let shift: Vec<f64> = PRIMES.iter().map(|_| rng.random::<f64>()).collect();
        let normal = Normal::standard();
        let gauss = |u: f64| normal.inverse_cdf(u.clamp(1e-16, 1.0 - 1e-16));
        let d = spec.dim();
        let mut z = vec![0.0; m * d];
        for i in 0..m {
            let u = |k: usize| (radical_inverse(i as u64 + 1, PRIMES[k]) + shift[k]).fract();
            let row = &mut z[i * d..(i + 1) * d];
            if spec.name == DgpName::ToyConfounding {
                let arm = if u(0) < 0.5 { 0.5 } else { -0.5 };
                row[0] = gauss(u(1)) + arm;
                continue;
            }
            let shared = gauss(u(DIM));
            for (j, v) in row.iter_mut().enumerate() {
                let g = gauss(u(j));
                let raw = if j < 5 { g } else { std::f64::consts::FRAC_1_SQRT_2 * (shared + g) };
                *v = raw.clamp(-CLIP, CLIP);
            }
        }
        Ok(Self::from_covariates(spec, z, d))
    }

    pub fn from_covariates(spec: &DgpSpec, z: Vec<f64>, d: usize) -> Self {
        let m = z.len() / d;
        let mut out = OracleSample {
            d,
            mu0: Vec::with_capacity(m),
            mu1: Vec::with_capacity(m),
            log_cate: Vec::with_capacity(m),
            z: Vec::new(),
        };
        for row in z.chunks(d) {
            out.mu0.push(spec.mu(0, row));
            out.mu1.push(spec.mu(1, row));
            out.log_cate.push(spec.log_cate(row));
        }
        out.z = z;
        out
    }

    pub fn len(&self) -> usize {
        self.mu0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu0.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }

    /// `E[μ₁(Z)] / E[μ₀(Z)]`.
    pub fn overall_ratio(&self) -> f64 {
        self.mu1.iter().sum::<f64>() / self.mu0.iter().sum::<f64>()
    }

    /// Population `AD(Ĥ⁻¹(1 − q))` for each `q` in the grid.
    pub fn ad_curve(&self, scores: &[f64], q_grid: &[f64]) -> Result<Vec<f64>> {
        Ok(population_curve(self, scores, q_grid)?.into_iter().map(|p| p.ad).collect())
    }
}

/// One point of a population validation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationPoint {
    pub q: f64,
    pub threshold: f64,
    /// Fraction of the population in the subgroup.
    pub share: f64,
    pub mu1: f64,
    pub mu0: f64,
    pub ad: f64,
}

/// Population curve of `scores` over the oracle sample. The subgroup at `q`
/// holds the `⌈q·m⌉` highest scores together with any ties at the
/// threshold.
pub fn population_curve(sample: &OracleSample, scores: &[f64], q_grid: &[f64]) -> Result<Vec<PopulationPoint>> {
    let m = sample.len();
    if scores.len() != m {
        return Err(Error::input("one score per oracle draw is required"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::input("scores must be finite"));
    }
    crate::validate::check_grid(q_grid)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut s1, mut s0) = (0.0, 0.0);
    let mut cum = Vec::with_capacity(m);
    for &i in &order {
        s1 += sample.mu1[i];
        s0 += sample.mu0[i];
        cum.push((s1, s0));
    }
    Ok(q_grid
        .iter()
        .map(|&q| {
            let mut k = ((q * m as f64).ceil() as usize).clamp(1, m);
            let c = scores[order[k - 1]];
            while k < m && scores[order[k]] == c {
                k += 1;
            }
            let (a, b) = cum[k - 1];
            PopulationPoint {
                q,
                threshold: c,
                share: k as f64 / m as f64,
                mu1: a / k as f64,
                mu0: b / k as f64,
                ad: a / b,
            }
        })
        .collect())
}

/// Population `AD(Ĥ⁻¹(1 − q))` for a score function, by quasi-Monte-Carlo
/// integration over `draws` covariate points.
pub fn true_population_ad(
    spec: &DgpSpec,
    score: impl Fn(&[f64]) -> f64,
    q: f64,
    draws: usize,
    seed_: u64,
) -> Result<f64> {
    let sample = OracleSample::draw(spec, draws, seed_)?;
    let scores: Vec<f64> = (0..sample.len()).map(|i| score(sample.row(i))).collect();
    Ok(sample.ad_curve(&scores, &[q])?[0])
}

/// Quadrature rule for one clipped standard normal coordinate: composite
/// Simpson nodes on `(−2, 2)` weighted by the density, plus atoms at `±2`.
pub fn clipped_normal_rule(intervals: usize) -> (Vec<f64>, Vec<f64>) {
    let m = intervals.max(2) & !1;
    let h = 2.0 * CLIP / m as f64;
    let normal = Normal::standard();
    let tail = normal.cdf(-CLIP);
    let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut nodes = Vec::with_capacity(m + 3);
    let mut weights = Vec::with_capacity(m + 3);
    for k in 0..=m {
        let x = -CLIP + k as f64 * h;
        let c = if k == 0 || k == m {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        nodes.push(x);
        weights.push(c * h / 3.0 * density(x));
    }
    nodes.push(-CLIP);
    weights.push(tail);
    nodes.push(CLIP);
    weights.push(tail);
    (nodes, weights)
}

/// `E[π₁(Z)]` by product quadrature over the first, second and sixth
/// covariates, which are independent and the only ones the propensity uses.
pub fn expected_propensity(spec: &DgpSpec, intervals: usize) -> Result<f64> {
    if spec.name == DgpName::ToyConfounding {
        return Ok(0.5);
    }
    if let Some(p) = spec.constant_propensity {
        return Ok(p);
    }
    let (x, w) = clipped_normal_rule(intervals);
    let mut z = [0.0; DIM];
    let mut total = 0.0;
    for (a, wa) in x.iter().zip(&w) {
        for (b, wb) in x.iter().zip(&w) {
            for (c, wc) in x.iter().zip(&w) {
                z[0] = *a;
                z[1] = *b;
                z[5] = *c;
                total += wa * wb * wc * spec.pi1(&z);
            }
        }
    }
    Ok(total)
}
