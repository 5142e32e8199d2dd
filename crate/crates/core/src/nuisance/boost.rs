//! Gradient-boosted regression trees under Poisson deviance (log link).
//!
//! Each stage grows a depth-limited tree on the Newton statistics
//! `gᵢ = wᵢ(yᵢ − μᵢ)`, `hᵢ = wᵢμᵢ` using histogram splits, then sets every
//! leaf to the exact Poisson leaf optimum `log(Σ wy / Σ wμ)` (clamped), scaled
//! by the learning rate. Because the per-leaf deviance is convex in the leaf
//! shift and the applied shift lies between zero and the optimum, training
//! deviance never increases from one stage to the next.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        /// Rows with `z[feature] <= threshold` go left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    #[inline]
    pub fn predict(&self, z: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if z[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Fixed number of trees; `None` selects it by cross-validation.
    pub n_trees: Option<usize>,
    pub cv_folds: usize,
    /// Candidate tree counts for cross-validation.
    pub candidates: Vec<usize>,
    pub max_bins: usize,
    pub min_leaf: usize,
    /// Clamp on the magnitude of a leaf's log-scale optimum before shrinkage.
    pub max_leaf_step: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            learning_rate: 0.1,
            max_depth: 2,
            n_trees: None,
            cv_folds: 5,
            candidates: default_candidates(),
            max_bins: 64,
            min_leaf: 5,
            max_leaf_step: 1.0,
            seed: 0,
        }
    }
}

/// Log-spaced tree counts from 10 to 500.
pub fn default_candidates() -> Vec<usize> {
    let k = 12;
    let mut out: Vec<usize> = (0..k)
        .map(|i| (10f64 * 50f64.powf(i as f64 / (k - 1) as f64)).round() as usize)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedPoissonModel {
    /// Log of the weighted training mean.
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_trees: usize,
    pub trees: Vec<TreeNode>,
    /// Summed held-out deviance per candidate tree count, when the count was
    /// chosen by cross-validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_deviance: Option<Vec<(usize, f64)>>,
}

impl BoostedPoissonModel {
    #[inline]
    pub fn log_predict(&self, z: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(z)).sum::<f64>()
    }

    #[inline]
    pub fn predict(&self, z: &[f64]) -> f64 {
        self.log_predict(z).min(700.0).exp()
    }
}

/// Weighted Poisson deviance `2 Σ w [y log(y/μ) − (y − μ)]`.
pub fn poisson_deviance(y: &[f64], mu: &[f64], w: Option<&[f64]>) -> f64 {
    let mut dev = 0.0;
    for i in 0..y.len() {
        let wi = w.map_or(1.0, |w| w[i]);
        let term = if y[i] > 0.0 { y[i] * (y[i] / mu[i]).ln() } else { 0.0 };
        dev += wi * (term - (y[i] - mu[i]));
    }
    2.0 * dev
}

/// Features discretized to quantile bins for histogram split search.
struct Binned {
    /// `bins[f * n + i]` for local row `i`.
    bins: Vec<u16>,
    thresholds: Vec<Vec<f64>>,
    n: usize,
}

impl Binned {
    fn new(z: &[f64], d: usize, rows: &[usize], max_bins: usize) -> Self {
        let n = rows.len();
        let mut bins = vec![0u16; n * d];
        let mut thresholds = Vec::with_capacity(d);
        let mut col = vec![0.0; n];
        for f in 0..d {
            for (k, &i) in rows.iter().enumerate() {
                col[k] = z[i * d + f];
            }
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            let thr: Vec<f64> = if sorted.len() <= max_bins {
                sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut t = Vec::with_capacity(max_bins);
                for b in 1..max_bins {
                    let pos = b * sorted.len() / max_bins;
                    let v = 0.5 * (sorted[pos - 1] + sorted[pos]);
                    if t.last().is_none_or(|&last| v > last) {
                        t.push(v);
                    }
                }
                t
            };
            for k in 0..n {
                bins[f * n + k] = thr.partition_point(|&t| col[k] > t) as u16;
            }
            thresholds.push(thr);
        }
        Binned { bins, thresholds, n }
    }

    fn d(&self) -> usize {
        self.thresholds.len()
    }
}

struct SplitCandidate {
    feature: usize,
    bin: usize,
    gain: f64,
}

fn best_split(binned: &Binned, idx: &[usize], g: &[f64], h: &[f64], min_leaf: usize) -> Option<SplitCandidate> {
    let (gt, ht): (f64, f64) = idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + g[i], b + h[i]));
    if idx.len() < 2 * min_leaf || ht <= 0.0 {
        return None;
    }
    let parent = gt * gt / ht;
    let mut best: Option<SplitCandidate> = None;
    let mut hg = Vec::new();
    let mut hh = Vec::new();
    let mut hc = Vec::new();
    for f in 0..binned.d() {
        let nb = binned.thresholds[f].len() + 1;
        if nb < 2 {
            continue;
        }
        hg.clear();
        hg.resize(nb, 0.0);
        hh.clear();
        hh.resize(nb, 0.0);
        hc.clear();
        hc.resize(nb, 0usize);
        let col = &binned.bins[f * binned.n..(f + 1) * binned.n];
        for &i in idx {
            let b = col[i] as usize;
            hg[b] += g[i];
            hh[b] += h[i];
            hc[b] += 1;
        }
        let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
        for b in 0..nb - 1 {
            gl += hg[b];
            hl += hh[b];
            cl += hc[b];
            let cr = idx.len() - cl;
            if cl < min_leaf {
                continue;
            }
            if cr < min_leaf {
                break;
            }
            let hr = ht - hl;
            if hl <= 1e-12 || hr <= 1e-12 {
                continue;
            }
            let gr = gt - gl;
            let gain = gl * gl / hl + gr * gr / hr - parent;
            if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(SplitCandidate { feature: f, bin: b, gain });
            }
        }
    }
    best
}

struct Stage<'a> {
    binned: &'a Binned,
    y: &'a [f64],
    w: &'a [f64],
    config: &'a BoostConfig,
}

impl Stage<'_> {
    fn leaf_value(&self, idx: &[usize], mu: &[f64]) -> f64 {
        let (sy, sm) = idx
            .iter()
            .fold((0.0, 0.0), |(a, b), &i| (a + self.w[i] * self.y[i], b + self.w[i] * mu[i]));
        let step = self.config.max_leaf_step;
        if sy <= 0.0 {
            -step
        } else {
            (sy / sm).ln().clamp(-step, step)
        }
    }

    /// Grows one tree over local rows `idx`, returning the node and writing
    /// each row's raw leaf value into `out`.
    fn grow(&self, idx: &[usize], g: &[f64], h: &[f64], mu: &[f64], depth: usize, out: &mut [f64]) -> TreeNode {
        let split = if depth < self.config.max_depth {
            best_split(self.binned, idx, g, h, self.config.min_leaf)
        } else {
            None
        };
        match split {
            None => {
                let value = self.leaf_value(idx, mu);
                for &i in idx {
                    out[i] = value;
                }
                TreeNode::Leaf { value }
            }
            Some(s) => {
                let col = &self.binned.bins[s.feature * self.binned.n..(s.feature + 1) * self.binned.n];
                let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| col[i] as usize <= s.bin);
                TreeNode::Split {
                    feature: s.feature,
                    threshold: self.binned.thresholds[s.feature][s.bin],
                    left: Box::new(self.grow(&left, g, h, mu, depth + 1, out)),
                    right: Box::new(self.grow(&right, g, h, mu, depth + 1, out)),
                }
            }
        }
    }
}

/// Runs `n_trees` boosting stages on local training data, calling `observe`
/// after every stage with the new tree.
fn boost(
    z: &[f64],
    d: usize,
    rows: &[usize],
    y: &[f64],
    w: &[f64],
    n_trees: usize,
    config: &BoostConfig,
    mut observe: impl FnMut(usize, &TreeNode, f64),
) -> (f64, Vec<TreeNode>) {
    let n = rows.len();
    let sw: f64 = w.iter().sum();
    let swy: f64 = w.iter().zip(y).map(|(a, b)| a * b).sum();
    let base = (swy / sw).ln();
    let binned = Binned::new(z, d, rows, config.max_bins);
    let stage = Stage {
        binned: &binned,
        y,
        w,
        config,
    };
    let mut f = vec![base; n];
    let mut mu = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut raw = vec![0.0; n];
    let all: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        for i in 0..n {
            mu[i] = f[i].exp();
            g[i] = w[i] * (y[i] - mu[i]);
            h[i] = w[i] * mu[i];
        }
        let tree = stage.grow(&all, &g, &h, &mu, 0, &mut raw);
        for i in 0..n {
            f[i] += config.learning_rate * raw[i];
        }
        observe(t, &tree, base);
        trees.push(tree);
    }
    (base, trees)
}

/// Fits a boosted Poisson model on the selected rows of a row-major covariate
/// buffer. `y` is indexed by global row; `weights`, when given, by position in
/// `rows`.
pub fn fit_boosted_poisson(
    z: &[f64],
    d: usize,
    rows: &[usize],
    y: &[f64],
    weights: Option<&[f64]>,
    config: &BoostConfig,
) -> Result<BoostedPoissonModel> {
    if rows.len() < 10 {
        return Err(Error::input(format!("boosting needs at least 10 rows, got {}", rows.len())));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) {
        return Err(Error::input("learning rate must lie in (0, 1]"));
    }
    let yy: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let ww: Vec<f64> = weights.map_or_else(|| vec![1.0; rows.len()], <[f64]>::to_vec);
    if yy.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || ww.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::input("boosting outcomes and weights must be nonnegative and finite"));
    }
    if yy.iter().zip(&ww).all(|(a, b)| a * b == 0.0) {
        return Err(Error::input("degenerate outcome: all weighted outcomes are zero"));
    }

    let (n_trees, cv_deviance) = match config.n_trees {
        Some(t) => (t, None),
        None => {
            let table = cross_validate(z, d, rows, &yy, &ww, config)?;
            let best = table
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|&(t, _)| t)
                .unwrap_or(0);
            (best, Some(table))
        }
    };
    let (base_score, trees) = boost(z, d, rows, &yy, &ww, n_trees, config, |_, _, _| {});
    Ok(BoostedPoissonModel {
        base_score,
        learning_rate: config.learning_rate,
        n_trees,
        trees,
        cv_deviance,
    })
}

fn cross_validate(
    z: &[f64],
    d: usize,
    rows: &[usize],
    y: &[f64],
    w: &[f64],
    config: &BoostConfig,
) -> Result<Vec<(usize, f64)>> {
    let n = rows.len();
    let k = config.cv_folds.max(2).min(n / 2);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream_rng(config.seed, seed::Stream::Boosting, n as u64));
    let mut fold = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    let mut candidates = config.candidates.clone();
    candidates.sort_unstable();
    candidates.dedup();
    let max_trees = candidates.last().copied().unwrap_or(0);

    let per_fold: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
            let train_rows: Vec<usize> = train.iter().map(|&i| rows[i]).collect();
            let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let tw: Vec<f64> = train.iter().map(|&i| w[i]).collect();
            let hy: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let hw: Vec<f64> = test.iter().map(|&i| w[i]).collect();
            let mut held_f: Vec<f64> = Vec::new();
            let mut dev = vec![f64::NAN; candidates.len()];
            let mut next = 0;
            let mut mu = vec![0.0; test.len()];
            if ty.iter().zip(&tw).all(|(a, b)| a * b == 0.0) {
                return vec![f64::INFINITY; candidates.len()];
            }
            boost(z, d, &train_rows, &ty, &tw, max_trees, config, |t, tree, base| {
                if held_f.is_empty() {
                    held_f = vec![base; test.len()];
                    // Candidate 0 trees means the base score alone.
                    while next < candidates.len() && candidates[next] == 0 {
                        mu.iter_mut().for_each(|m| *m = base.exp());
                        dev[next] = poisson_deviance(&hy, &mu, Some(&hw));
                        next += 1;
                    }
                }
                for (slot, &i) in held_f.iter_mut().zip(&test) {
                    *slot += config.learning_rate * tree.predict(&z[rows[i] * d..(rows[i] + 1) * d]);
                }
                while next < candidates.len() && candidates[next] == t + 1 {
                    for (m, &fv) in mu.iter_mut().zip(&held_f) {
                        *m = fv.exp();
                    }
                    dev[next] = poisson_deviance(&hy, &mu, Some(&hw));
                    next += 1;
                }
            });
            dev
        })
        .collect();

    Ok(candidates
        .iter()
        .enumerate()
        .map(|(c, &t)| (t, per_fold.iter().map(|v| v[c]).sum()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Poisson};

    fn step_data(n: usize, seed_: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = seed::rng(seed_);
        let d = 2;
        let z: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let rate = if z[i * d] > 0.0 { 1f64.exp() } else { 1.0 };
                Poisson::new(rate).unwrap().sample(&mut rng)
            })
            .collect();
        (z, y)
    }

    #[test]
    fn zero_trees_predicts_training_mean() {
        let (z, y) = step_data(200, 1);
        let rows: Vec<usize> = (0..200).collect();
        let cfg = BoostConfig {
            n_trees: Some(0),
            ..Default::default()
        };
        let m = fit_boosted_poisson(&z, 2, &rows, &y, None, &cfg).unwrap();
        let mean = y.iter().sum::<f64>() / 200.0;
        assert!((m.predict(&z[0..2]) - mean).abs() < 1e-12);
        assert!((m.predict(&z[10..12]) - mean).abs() < 1e-12);
    }

    #[test]
    fn training_deviance_non_increasing() {
        let (z, y) = step_data(500, 2);
        let rows: Vec<usize> = (0..500).collect();
        let cfg = BoostConfig {
            n_trees: Some(60),
            ..Default::default()
        };
        let m = fit_boosted_poisson(&z, 2, &rows, &y, None, &cfg).unwrap();
        let mut prev = f64::INFINITY;
        for t in 0..=60 {
            let mu: Vec<f64> = (0..500)
                .map(|i| {
                    let row = &z[2 * i..2 * i + 2];
                    (m.base_score + m.learning_rate * m.trees[..t].iter().map(|tr| tr.predict(row)).sum::<f64>()).exp()
                })
                .collect();
            let dev = poisson_deviance(&y, &mu, None);
            assert!(dev <= prev + 1e-9, "stage {t}: {dev} > {prev}");
            prev = dev;
        }
        assert!(m.trees.iter().all(|t| t.leaves() <= 4 && t.depth() <= 2));
    }

    #[test]
    fn all_zero_outcome_rejected() {
        let z = vec![0.0; 20];
        let rows: Vec<usize> = (0..20).collect();
        assert!(fit_boosted_poisson(&z, 1, &rows, &[0.0; 20], None, &BoostConfig::default()).is_err());
    }

    #[test]
    fn tiny_learning_rate_degenerates_to_intercept() {
        let (z, y) = step_data(300, 3);
        let rows: Vec<usize> = (0..300).collect();
        let cfg = BoostConfig {
            n_trees: Some(3),
            learning_rate: 1e-9,
            ..Default::default()
        };
        let m = fit_boosted_poisson(&z, 2, &rows, &y, None, &cfg).unwrap();
        let mean = y.iter().sum::<f64>() / 300.0;
        for i in 0..300 {
            assert!((m.predict(&z[2 * i..2 * i + 2]) / mean - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn candidates_span_ten_to_five_hundred() {
        let c = default_candidates();
        assert_eq!(c.first(), Some(&10));
        assert_eq!(c.last(), Some(&500));
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }
}
