//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition number of a symmetric matrix from its eigenvalues.
pub fn condition_number_sym(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `a x = b` for symmetric positive definite `a`, falling back to LU.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    solve(a, b, context)
}

/// General square solve with a singularity check.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    match lu.solve(b) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
        _ => Err(Error::Singular {
            context,
            condition: condition_estimate(a),
        }),
    }
}

pub fn inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    match a.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => Ok(inv),
        _ => Err(Error::Singular {
            context,
            condition: condition_estimate(a),
        }),
    }
}

/// Ratio of extreme singular values.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let hi = sv.iter().cloned().fold(0.0_f64, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Returns `(a + aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear predictor `β₀ + Σ βⱼ zⱼ` for a coefficient vector with intercept first.
#[inline]
pub fn affine(coef: &[f64], z: &[f64]) -> f64 {
    debug_assert_eq!(coef.len(), z.len() + 1);
    coef[0] + dot(&coef[1..], z)
}

/// Adds `scale · x xᵀ` to the upper triangle of a row-major `p × p` buffer.
#[inline]
pub fn rank_one_upper(acc: &mut [f64], x: &[f64], scale: f64) {
    let p = x.len();
    for a in 0..p {
        let xa = x[a] * scale;
        if xa == 0.0 {
            continue;
        }
        let row = &mut acc[a * p..(a + 1) * p];
        for b in a..p {
            row[b] += xa * x[b];
        }
    }
}

/// Builds a symmetric matrix from an upper-triangular row-major accumulator.
pub fn from_upper(acc: &[f64], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i <= j { acc[i * p + j] } else { acc[j * p + i] })
}
