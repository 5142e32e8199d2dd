//! Simulation designs: covariate law, propensity, outcome means and the
//! generator.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::nuisance::irls::expit;
use crate::seed::{self, Stream};

/// Covariate dimension of the main designs.
pub const DIM: usize = 10;
/// Covariates are clipped to `[−CLIP, CLIP]`.
pub const CLIP: f64 = 2.0;
/// Upper end of the follow-up law `U[0, 0.75]`.
pub const MAX_FOLLOW_UP: f64 = 0.75;
/// RMTL horizon of the survival designs.
pub const SURVIVAL_TAU: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpName {
    Setting1Contrast,
    Setting2Poisson,
    Setting3Mild,
    Setting4Large,
    Surv1,
    Surv2,
    ToyConfounding,
}

impl DgpName {
    pub const ALL: [DgpName; 7] = [
        DgpName::Setting1Contrast,
        DgpName::Setting2Poisson,
        DgpName::Setting3Mild,
        DgpName::Setting4Large,
        DgpName::Surv1,
        DgpName::Surv2,
        DgpName::ToyConfounding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DgpName::Setting1Contrast => "setting1_contrast",
            DgpName::Setting2Poisson => "setting2_poisson",
            DgpName::Setting3Mild => "setting3_mild",
            DgpName::Setting4Large => "setting4_large",
            DgpName::Surv1 => "surv1",
            DgpName::Surv2 => "surv2",
            DgpName::ToyConfounding => "toy_confounding",
        }
    }
}

impl fmt::Display for DgpName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for DgpName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = match s {
            "setting1" | "1" => "setting1_contrast",
            "setting2" | "2" => "setting2_poisson",
            "setting3" | "3" => "setting3_mild",
            "setting4" | "4" => "setting4_large",
            "toy" => "toy_confounding",
            other => other,
        };
        DgpName::ALL
            .into_iter()
            .find(|n| n.as_str() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = DgpName::ALL.iter().map(|n| n.as_str()).collect();
                Error::input(format!("unknown simulation design `{s}`; expected one of: {}", names.join(", ")))
            })
    }
}

/// A simulation design. All mean functions are exact; `z` is indexed from
/// zero, so `z[0]` is the first covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: DgpName,
    /// Randomized variant: every row is treated with this probability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_propensity: Option<f64>,
}

impl DgpSpec {
    pub fn new(name: DgpName) -> Self {
        DgpSpec {
            name,
            constant_propensity: None,
        }
    }

    /// The same outcome model with treatment assigned completely at random.
    pub fn randomized(name: DgpName, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) || name == DgpName::ToyConfounding {
            return Err(Error::input("randomized designs need p in (0, 1) and a ten-covariate design"));
        }
        Ok(DgpSpec {
            name,
            constant_propensity: Some(p),
        })
    }

    pub fn is_survival(&self) -> bool {
        matches!(self.name, DgpName::Surv1 | DgpName::Surv2)
    }

    pub fn dim(&self) -> usize {
        match self.name {
            DgpName::ToyConfounding => 1,
            _ => DIM,
        }
    }

    /// `P(R = 1 | z)`.
    pub fn pi1(&self, z: &[f64]) -> f64 {
        if let Some(p) = self.constant_propensity {
            return p;
        }
        match self.name {
            DgpName::ToyConfounding => expit(z[0]),
            DgpName::Surv1 | DgpName::Surv2 => expit(z[0] - 0.5 * z[1] - 0.5 * z[5]),
            _ => expit(-(z[0] + 0.5 * z[1] - 0.5 * z[5])),
        }
    }

    /// Event rate `λ_r(z)` of the survival designs.
    pub fn hazard(&self, arm: u8, z: &[f64]) -> Option<f64> {
        if !self.is_survival() {
            return None;
        }
        let (z1, z2, z6) = (z[0], z[1], z[5]);
        let eta = match (self.name, arm) {
            (DgpName::Surv1, 1) => -0.350 + 0.125 * z1 + 0.3 * z2 + 0.5 * z6 - 0.5 * z1.abs() + 0.5 * z2.abs(),
            (DgpName::Surv1, _) => -0.375 + 0.25 * z2 + 0.25 * z6 - 0.5 * z1.abs() + 0.5 * z2.abs(),
            (DgpName::Surv2, 1) => -0.050 + 0.125 * z1 + 0.3 * z2 + 0.5 * z6,
            (DgpName::Surv2, _) => -0.075 + 0.25 * z2 + 0.25 * z6,
            _ => return None,
        };
        Some(eta.exp())
    }

    /// Conditional mean of the analysed outcome under arm `arm`: the event
    /// rate for count designs, `z²` for the toy design and the restricted
    /// mean time lost for survival designs.
    pub fn mu(&self, arm: u8, z: &[f64]) -> f64 {
        if let Some(lambda) = self.hazard(arm, z) {
            return rmtl_exponential(lambda, SURVIVAL_TAU);
        }
        if self.name == DgpName::ToyConfounding {
            return z[0] * z[0];
        }
        let (z1, z2, z6) = (z[0], z[1], z[5]);
        let eta = match (self.name, arm) {
            (DgpName::Setting1Contrast, 1) => 0.85 + 0.25 * (z1 + z6) + 1.5 * (z1.abs() - z6.abs()),
            (DgpName::Setting1Contrast, _) => 0.95 + 1.5 * (z1.abs() - z6.abs()),
            (DgpName::Setting2Poisson, 1) => 0.925 + 0.125 * z1 + 0.30 * z2 + 0.25 * z6,
            (DgpName::Setting2Poisson, _) => 0.550 + 0.25 * z2 + 0.50 * z6,
            (DgpName::Setting3Mild, 1) => {
                0.50 + 0.125 * z1 + 0.30 * (z2 + 0.5).abs() + 0.25 * z6 + 0.5 * (z1.abs() + z6.abs())
            }
            (DgpName::Setting3Mild, _) => -0.25 + 0.25 * (z2 + 0.5).abs() + 0.50 * z6 + 0.5 * (z1.abs() + z6.abs()),
            (DgpName::Setting4Large, 1) => {
                1.235 - 0.125 * (z1 + z6 + 1.0).abs() - 0.3 * (z2 + 0.5).abs() - 0.125 * z6
                    + 0.5 * (z1.abs() + z6.abs())
            }
            (DgpName::Setting4Large, _) => {
                0.320 + 0.125 * (z1 + z6 + 1.0).abs() + 0.3 * (z2 + 0.5).abs() + 0.125 * z6
                    + 0.5 * (z1.abs() + z6.abs())
            }
            (DgpName::Surv1 | DgpName::Surv2 | DgpName::ToyConfounding, _) => unreachable!("handled above"),
        };
        eta.exp()
    }

    /// `log D(z) = log μ₁(z) − log μ₀(z)`.
    pub fn log_cate(&self, z: &[f64]) -> f64 {
        (self.mu(1, z) / self.mu(0, z)).ln()
    }

    /// True `δ₀` when the log-linear CATE model holds.
    pub fn delta0(&self) -> Option<Vec<f64>> {
        let mut delta = vec![0.0; DIM + 1];
        match self.name {
            DgpName::Setting1Contrast => {
                delta[0] = -0.1;
                delta[1] = 0.25;
                delta[6] = 0.25;
            }
            DgpName::Setting2Poisson => {
                delta[0] = 0.375;
                delta[1] = 0.125;
                delta[2] = 0.05;
                delta[6] = -0.25;
            }
            DgpName::ToyConfounding => return Some(vec![0.0, 0.0]),
            _ => return None,
        }
        Some(delta)
    }

    /// Draws one covariate vector from the clipped Gaussian law: components
    /// 1–5 independent, 6–10 equicorrelated with correlation 0.5.
    pub fn draw_covariates(&self, rng: &mut impl Rng, out: &mut [f64]) {
        let g = |rng: &mut dyn rand::RngCore| -> f64 { StandardNormal.sample(rng) };
        let shared = g(rng);
        for (j, v) in out.iter_mut().enumerate().take(DIM) {
            let raw = if j < 5 {
                g(rng)
            } else {
                std::f64::consts::FRAC_1_SQRT_2 * (shared + g(rng))
            };
            *v = raw.clamp(-CLIP, CLIP);
        }
    }
}

/// `E[τ − T∧τ]` for `T ~ Exp(λ)`.
pub fn rmtl_exponential(lambda: f64, tau: f64) -> f64 {
    tau + (-lambda * tau).exp_m1() / lambda
}

/// Hidden per-row truth attached to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub log_cate: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub pi1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    pub spec: DgpSpec,
    /// Count designs carry the follow-up time as exposure; analyses use
    /// [`crate::data::normalize_exposure`].
    pub data: ObservationalDataset,
    pub truth: Truth,
}

impl Simulated {
    /// Fraction of censored rows (survival designs only).
    pub fn censoring_rate(&self) -> Option<f64> {
        self.data
            .survival()
            .map(|s| s.status.iter().filter(|&&d| d == 0).count() as f64 / s.status.len() as f64)
    }
}

/// Draws `n` rows from `spec`; deterministic in `seed_`.
pub fn generate(spec: &DgpSpec, n: usize, seed_: u64) -> Result<Simulated> {
    if n == 0 {
        return Err(Error::input("n must be at least 1"));
    }
    let mut rng = seed::stream_rng(seed_, Stream::Dgp, 0);
    let d = spec.dim();
    let mut z = vec![0.0; n * d];
    let mut r = Vec::with_capacity(n);
    let mut truth = Truth {
        log_cate: Vec::with_capacity(n),
        mu0: Vec::with_capacity(n),
        mu1: Vec::with_capacity(n),
        pi1: Vec::with_capacity(n),
    };
    for i in 0..n {
        let row = &mut z[i * d..(i + 1) * d];
        let arm = if spec.name == DgpName::ToyConfounding {
            let arm = u8::from(rng.random_bool(0.5));
            let shift: f64 = StandardNormal.sample(&mut rng);
            row[0] = arm as f64 - 0.5 + shift;
            arm
        } else {
            spec.draw_covariates(&mut rng, row);
            u8::from(rng.random::<f64>() < spec.pi1(row))
        };
        r.push(arm);
        truth.mu0.push(spec.mu(0, row));
        truth.mu1.push(spec.mu(1, row));
        truth.pi1.push(spec.pi1(row));
        truth.log_cate.push(spec.log_cate(row));
    }
    let data = if spec.is_survival() {
        let mut time = Vec::with_capacity(n);
        let mut status = Vec::with_capacity(n);
        for i in 0..n {
            let row = &z[i * d..(i + 1) * d];
            let lambda = spec.hazard(r[i], row).expect("survival design");
            let t = Exp::new(lambda).map_err(|e| Error::Invariant(e.to_string()))?.sample(&mut rng);
            let admin = rng.random_range(0.5..1.0);
            let dropout = Exp::new((0.25 + row[2]).exp())
                .map_err(|e| Error::Invariant(e.to_string()))?
                .sample(&mut rng);
            let c = f64::min(admin, dropout);
            time.push(t.min(c));
            status.push(u8::from(t <= c));
        }
        ObservationalDataset::new_survival(time, status, r, z, d)?
    } else if spec.name == DgpName::ToyConfounding {
        let y = truth
            .mu0
            .iter()
            .map(|&m| poisson(&mut rng, m))
            .collect::<Result<Vec<_>>>()?;
        ObservationalDataset::new(y, r, z, d)?
    } else {
        let mut y = Vec::with_capacity(n);
        let mut f = Vec::with_capacity(n);
        for i in 0..n {
            let follow = MAX_FOLLOW_UP * (1.0 - rng.random::<f64>());
            let mean = if r[i] == 1 { truth.mu1[i] } else { truth.mu0[i] };
            y.push(poisson(&mut rng, mean * follow)?);
            f.push(follow);
        }
        ObservationalDataset::new(y, r, z, d)?.with_exposure(f)?
    };
    Ok(Simulated {
        spec: *spec,
        data,
        truth,
    })
}

fn poisson(rng: &mut impl Rng, mean: f64) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(0.0);
    }
    Ok(Poisson::new(mean).map_err(|e| Error::Invariant(e.to_string()))?.sample(rng))
}
