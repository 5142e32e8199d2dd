//! Newton / iteratively reweighted least squares for canonical-link GLMs.
//!
//! Both supported families use their canonical link, so the score is
//! `Σ wᵢ xᵢ (yᵢ − μᵢ)` and the Newton step coincides with the IRLS update.
//! Scores and objectives are normalized by `Σ wᵢ`, which makes the solution
//! invariant to a uniform rescaling of the weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Log link, variance `μ`. Responses may be any nonnegative reals.
    Poisson,
    /// Logit link, variance `μ(1 − μ)`. Responses may be fractions in [0, 1].
    Binomial,
}

impl Family {
    #[inline]
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Poisson => eta.min(700.0).exp(),
            Family::Binomial => expit(eta),
        }
    }

    #[inline]
    fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Poisson => mu,
            Family::Binomial => mu * (1.0 - mu),
        }
    }

    /// Negative log-likelihood contribution up to terms free of `η`.
    #[inline]
    fn loss(self, y: f64, eta: f64) -> f64 {
        match self {
            Family::Poisson => eta.min(700.0).exp() - y * eta,
            Family::Binomial => softplus(eta) - y * eta,
        }
    }

    fn link(self, mean: f64) -> f64 {
        match self {
            Family::Poisson => mean.ln(),
            Family::Binomial => (mean / (1.0 - mean)).ln(),
        }
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Row-major design matrix.
#[derive(Debug, Clone)]
pub struct Design {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * p);
        Design { n, p, data }
    }

    /// `[1, zᵢ]` rows for the selected covariate rows of a row-major buffer.
    pub fn with_intercept(z: &[f64], d: usize, rows: &[usize]) -> Self {
        let p = d + 1;
        let mut data = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            data.push(1.0);
            data.extend_from_slice(&z[i * d..(i + 1) * d]);
        }
        Design { n: rows.len(), p, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Copy without column `col`.
    pub fn drop_column(&self, col: usize) -> Design {
        let p = self.p - 1;
        let mut data = Vec::with_capacity(self.n * p);
        for i in 0..self.n {
            let row = self.row(i);
            data.extend(row.iter().enumerate().filter(|(j, _)| *j != col).map(|(_, v)| *v));
        }
        Design { n: self.n, p, data }
    }

    /// Weighted Gram matrix `Σ wᵢ xᵢ xᵢᵀ / Σ wᵢ`.
    pub fn gram(&self, w: Option<&[f64]>) -> DMatrix<f64> {
        let mut acc = vec![0.0; self.p * self.p];
        let mut total = 0.0;
        for i in 0..self.n {
            let wi = w.map_or(1.0, |w| w[i]);
            total += wi;
            linalg::rank_one_upper(&mut acc, self.row(i), wi);
        }
        linalg::from_upper(&acc, self.p) / total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlsConfig {
    /// Convergence threshold on the max-norm of the normalized score.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Ridge penalty on the non-intercept coefficients, on the normalized
    /// objective scale.
    pub ridge: f64,
    /// Box constraint `|βⱼ| ≤ bound`, enforced by projected Newton.
    pub coef_bound: Option<f64>,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig {
            tol: 1e-8,
            max_iter: 100,
            max_halvings: 30,
            ridge: 0.0,
            coef_bound: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrlsFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the normalized (penalized) score at the solution, over
    /// coordinates not held at the bound.
    pub score_norm: f64,
    /// Coordinates held at `coef_bound`.
    pub at_bound: Vec<usize>,
}

struct Eval {
    objective: f64,
    score: Vec<f64>,
    hessian: DMatrix<f64>,
}

fn evaluate(family: Family, x: &Design, y: &[f64], w: Option<&[f64]>, beta: &[f64], ridge: f64, hess: bool) -> Eval {
    let p = x.p();
    let mut score = vec![0.0; p];
    let mut acc = vec![0.0; if hess { p * p } else { 0 }];
    let mut objective = 0.0;
    let mut total = 0.0;
    for i in 0..x.n() {
        let row = x.row(i);
        let wi = w.map_or(1.0, |w| w[i]);
        if wi == 0.0 {
            continue;
        }
        total += wi;
        let eta = linalg::dot(row, beta);
        let mu = family.mean(eta);
        objective += wi * family.loss(y[i], eta);
        let resid = wi * (y[i] - mu);
        for (s, xj) in score.iter_mut().zip(row) {
            *s += resid * xj;
        }
        if hess {
            linalg::rank_one_upper(&mut acc, row, wi * family.variance(mu));
        }
    }
    let inv = 1.0 / total;
    objective *= inv;
    score.iter_mut().for_each(|s| *s *= inv);
    let mut hessian = if hess {
        linalg::from_upper(&acc, p) * inv
    } else {
        DMatrix::zeros(0, 0)
    };
    if ridge > 0.0 {
        for j in 1..p {
            objective += 0.5 * ridge * beta[j] * beta[j];
            score[j] -= ridge * beta[j];
            if hess {
                hessian[(j, j)] += ridge;
            }
        }
    }
    Eval {
        objective,
        score,
        hessian,
    }
}

/// Fits a canonical-link GLM by damped Newton iterations.
pub fn irls(family: Family, x: &Design, y: &[f64], w: Option<&[f64]>, config: &IrlsConfig) -> Result<IrlsFit> {
    let p = x.p();
    if y.len() != x.n() || w.is_some_and(|w| w.len() != x.n()) {
        return Err(Error::input("design, response and weight lengths disagree"));
    }
    let (mut sw, mut swy) = (0.0, 0.0);
    for i in 0..x.n() {
        let wi = w.map_or(1.0, |w| w[i]);
        if !(wi >= 0.0 && wi.is_finite()) {
            return Err(Error::input("weights must be nonnegative and finite"));
        }
        sw += wi;
        swy += wi * y[i];
    }
    if sw <= 0.0 {
        return Err(Error::input("total weight is zero"));
    }
    let ybar = swy / sw;
    let degenerate = ybar <= 0.0 || (family == Family::Binomial && ybar >= 1.0);
    let mut beta = vec![0.0; p];
    match (degenerate, config.coef_bound) {
        (false, bound) => {
            beta[0] = family.link(ybar);
            if let Some(b) = bound {
                beta[0] = beta[0].clamp(-b, b);
            }
        }
        // Boundary likelihood: the intercept diverges, so start on the box.
        (true, Some(b)) => beta[0] = if ybar <= 0.0 { -b } else { b },
        (true, None) if ybar <= 0.0 => return Err(Error::input("weighted outcome total is zero")),
        (true, None) => return Err(Error::input("binomial response has no zeros")),
    }
    let mut current = evaluate(family, x, y, w, &beta, config.ridge, true);
    let mut at_bound: Vec<usize>;

    for iter in 0..=config.max_iter {
        at_bound = active_set(&beta, &current.score, config.coef_bound);
        let free: Vec<usize> = (0..p).filter(|j| !at_bound.contains(j)).collect();
        let score_norm = free.iter().fold(0.0_f64, |m, &j| m.max(current.score[j].abs()));
        if score_norm <= config.tol {
            return Ok(IrlsFit {
                coefficients: beta,
                iterations: iter,
                converged: true,
                score_norm,
                at_bound,
            });
        }
        if iter == config.max_iter {
            break;
        }

        let h = DMatrix::from_fn(free.len(), free.len(), |a, b| current.hessian[(free[a], free[b])]);
        let g = DVector::from_iterator(free.len(), free.iter().map(|&j| current.score[j]));
        let step = linalg::solve_spd(&h, &g, "IRLS Hessian")?;

        // Below this predicted decrease the objective cannot resolve progress;
        // the iterate is in the Newton basin and takes the full step.
        let predicted: f64 = g.iter().zip(step.iter()).map(|(a, b)| a * b).sum();
        let resolvable = predicted > 1e-11 * current.objective.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = false;
        if !resolvable {
            for (k, &j) in free.iter().enumerate() {
                beta[j] += step[k];
            }
            if let Some(b) = config.coef_bound {
                beta.iter_mut().for_each(|v| *v = v.clamp(-b, b));
            }
            accepted = true;
        }
        for _ in 0..=config.max_halvings {
            if accepted {
                break;
            }
            let mut trial = beta.clone();
            for (k, &j) in free.iter().enumerate() {
                trial[j] += scale * step[k];
            }
            if let Some(b) = config.coef_bound {
                trial.iter_mut().for_each(|v| *v = v.clamp(-b, b));
            }
            let cand = evaluate(family, x, y, w, &trial, config.ridge, false);
            if cand.objective.is_finite() && cand.objective <= current.objective + 1e-14 * current.objective.abs().max(1.0) {
                beta = trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // Objective is flat to machine precision; a full step cannot improve it.
            let fit = IrlsFit {
                coefficients: beta,
                iterations: iter,
                converged: score_norm <= 100.0 * config.tol,
                score_norm,
                at_bound,
            };
            if fit.converged {
                return Ok(fit);
            }
            return Err(Error::NonConvergence {
                solver: "IRLS",
                iterations: iter,
                score_norm,
            });
        }
        current = evaluate(family, x, y, w, &beta, config.ridge, true);
    }
    let score_norm = linalg::inf_norm(&current.score);
    Err(Error::NonConvergence {
        solver: "IRLS",
        iterations: config.max_iter,
        score_norm,
    })
}

/// Coordinates sitting on the box boundary whose score pushes them outward.
fn active_set(beta: &[f64], score: &[f64], bound: Option<f64>) -> Vec<usize> {
    let Some(b) = bound else { return Vec::new() };
    (0..beta.len())
        .filter(|&j| (beta[j] >= b && score[j] > 0.0) || (beta[j] <= -b && score[j] < 0.0))
        .collect()
}

/// Unnormalized-by-penalty score `Σ wᵢ xᵢ (yᵢ − μᵢ) / Σ wᵢ`.
pub fn score(family: Family, x: &Design, y: &[f64], w: Option<&[f64]>, beta: &[f64]) -> Vec<f64> {
    evaluate(family, x, y, w, beta, 0.0, false).score
}
