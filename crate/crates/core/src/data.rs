//! Observational datasets, CSV ingestion and cross-fitting fold plans.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Right-censored event-time fields for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalFields {
    /// Observed time `X = T ∧ C`.
    pub time: Vec<f64>,
    /// Event indicator `Δ = 1{T ≤ C}`.
    pub status: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMode {
    Count,
    Survival,
}

/// A sample of `(Y, R, Z)` rows, optionally with exposure time or censored
/// event times. Covariates are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationalDataset {
    n: usize,
    d: usize,
    y: Vec<f64>,
    r: Vec<u8>,
    z: Vec<f64>,
    exposure: Option<Vec<f64>>,
    survival: Option<SurvivalFields>,
    covariate_names: Vec<String>,
}

impl ObservationalDataset {
    /// Count-outcome dataset. `z` is row-major with `d` columns.
    pub fn new(y: Vec<f64>, r: Vec<u8>, z: Vec<f64>, d: usize) -> Result<Self> {
        let n = y.len();
        let names = (1..=d).map(|j| format!("z{j}")).collect();
        let ds = ObservationalDataset {
            n,
            d,
            y,
            r,
            z,
            exposure: None,
            survival: None,
            covariate_names: names,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Survival dataset; the count outcome is set to zero until an analysis
    /// derives it from the event times.
    pub fn new_survival(time: Vec<f64>, status: Vec<u8>, r: Vec<u8>, z: Vec<f64>, d: usize) -> Result<Self> {
        let n = time.len();
        let mut ds = ObservationalDataset {
            n,
            d,
            y: vec![0.0; n],
            r,
            z,
            exposure: None,
            survival: Some(SurvivalFields { time, status }),
            covariate_names: (1..=d).map(|j| format!("z{j}")).collect(),
        };
        ds.validate()?;
        ds.y.iter_mut().for_each(|v| *v = 0.0);
        Ok(ds)
    }

    pub fn with_exposure(mut self, exposure: Vec<f64>) -> Result<Self> {
        self.exposure = Some(exposure);
        self.validate()?;
        Ok(self)
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d {
            return Err(Error::input(format!(
                "{} covariate names for {} columns",
                names.len(),
                self.d
            )));
        }
        self.covariate_names = names;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::input("dataset has no rows"));
        }
        if self.r.len() != n || self.z.len() != n * self.d {
            return Err(Error::input("column lengths disagree"));
        }
        for (i, &yi) in self.y.iter().enumerate() {
            if !yi.is_finite() {
                return Err(cell(i, "y", "non-finite outcome"));
            }
            if yi < 0.0 {
                return Err(cell(i, "y", "negative outcome"));
            }
        }
        for (i, &ri) in self.r.iter().enumerate() {
            if ri > 1 {
                return Err(cell(i, "r", format!("treatment indicator must be 0 or 1, got {ri}")));
            }
        }
        if let Some(j) = self.z.iter().position(|v| !v.is_finite()) {
            return Err(cell(j / self.d.max(1), &self.covariate_names[j % self.d], "non-finite covariate"));
        }
        if let Some(f) = &self.exposure {
            if f.len() != n {
                return Err(Error::input("exposure length disagrees with n"));
            }
            for (i, &fi) in f.iter().enumerate() {
                if !(fi.is_finite() && fi > 0.0) {
                    return Err(cell(i, "f", "exposure must be positive and finite"));
                }
            }
        }
        if let Some(s) = &self.survival {
            if s.time.len() != n || s.status.len() != n {
                return Err(Error::input("survival columns disagree with n"));
            }
            for i in 0..n {
                if !(s.time[i].is_finite() && s.time[i] >= 0.0) {
                    return Err(cell(i, "time", "observed time must be nonnegative and finite"));
                }
                if s.status[i] > 1 {
                    return Err(cell(i, "status", "status must be 0 or 1"));
                }
            }
        }
        let treated = self.treated_count();
        if treated == 0 || treated == n {
            return Err(Error::input(format!(
                "both arms must be nonempty (treated {treated} of {n})"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn r(&self) -> &[u8] {
        &self.r
    }

    /// Row-major covariate buffer of length `n · d`.
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    #[inline]
    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }

    pub fn exposure(&self) -> Option<&[f64]> {
        self.exposure.as_deref()
    }

    pub fn survival(&self) -> Option<&SurvivalFields> {
        self.survival.as_ref()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn mode(&self) -> OutcomeMode {
        if self.survival.is_some() {
            OutcomeMode::Survival
        } else {
            OutcomeMode::Count
        }
    }

    pub fn treated_count(&self) -> usize {
        self.r.iter().filter(|&&v| v == 1).count()
    }

    /// Row indices in arm `arm`.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        (0..self.n).filter(|&i| self.r[i] == arm).collect()
    }

    /// Copy of the dataset restricted to `rows` (in the given order).
    /// Fails if the selection leaves an arm empty.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut z = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            z.extend_from_slice(self.z_row(i));
        }
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let ds = ObservationalDataset {
            n: rows.len(),
            d: self.d,
            y: pick(&self.y),
            r: rows.iter().map(|&i| self.r[i]).collect(),
            z,
            exposure: self.exposure.as_deref().map(pick),
            survival: self.survival.as_ref().map(|s| SurvivalFields {
                time: pick(&s.time),
                status: rows.iter().map(|&i| s.status[i]).collect(),
            }),
            covariate_names: self.covariate_names.clone(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Replaces the outcome column (used by the survival pipeline to install
    /// the restricted time lost, and by tests).
    pub fn with_outcome(mut self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n {
            return Err(Error::input("outcome length disagrees with n"));
        }
        self.y = y;
        self.validate()?;
        Ok(self)
    }
}

fn cell(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Cell {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Replaces `y` by `y / exposure` and clears the exposure column.
pub fn normalize_exposure(ds: &ObservationalDataset) -> Result<ObservationalDataset> {
    let f = ds
        .exposure
        .as_ref()
        .ok_or_else(|| Error::input("normalize_exposure requires an exposure column"))?;
    let mut y = Vec::with_capacity(ds.n);
    for (i, (&yi, &fi)) in ds.y.iter().zip(f).enumerate() {
        if !(fi > 0.0) {
            return Err(cell(i, "f", "exposure must be positive"));
        }
        y.push(yi / fi);
    }
    let mut out = ds.clone();
    out.y = y;
    out.exposure = None;
    Ok(out)
}

/// Column-name mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub y: String,
    pub r: String,
    /// Covariate columns in order. `None` selects every column named
    /// `z<k>` in increasing `k`.
    pub z: Option<Vec<String>>,
    pub exposure: String,
    pub time: String,
    pub status: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            y: "y".into(),
            r: "r".into(),
            z: None,
            exposure: "f".into(),
            time: "time".into(),
            status: "status".into(),
        }
    }
}

/// Reads a dataset from a headered, comma-separated file.
///
/// A file with both `time` and `status` columns is loaded in survival mode;
/// otherwise the outcome column is required. The exposure column is optional.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<ObservationalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let find = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::input(format!("missing column `{name}`")))
    };

    let z_names: Vec<String> = match &schema.z {
        Some(names) => names.clone(),
        None => {
            let mut found: Vec<(u32, String)> = headers
                .iter()
                .filter_map(|h| {
                    h.strip_prefix('z')
                        .and_then(|k| k.parse::<u32>().ok())
                        .map(|k| (k, h.clone()))
                })
                .collect();
            found.sort();
            found.into_iter().map(|(_, h)| h).collect()
        }
    };
    if z_names.is_empty() {
        return Err(Error::input("no covariate columns found"));
    }
    let z_cols = z_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let r_col = find(&schema.r)?;
    let survival = index.contains_key(schema.time.as_str()) && index.contains_key(schema.status.as_str());
    let y_col = if survival { index.get(schema.y.as_str()).copied() } else { Some(find(&schema.y)?) };
    let f_col = index.get(schema.exposure.as_str()).copied();
    let (t_col, s_col) = if survival {
        (Some(find(&schema.time)?), Some(find(&schema.status)?))
    } else {
        (None, None)
    };

    let d = z_cols.len();
    let (mut y, mut r, mut z, mut f, mut t, mut s) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let num = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                return Err(cell(row, name, "missing value"));
            }
            raw.parse::<f64>()
                .map_err(|_| cell(row, name, format!("non-numeric value `{raw}`")))
                .and_then(|v| if v.is_finite() { Ok(v) } else { Err(cell(row, name, "non-finite value")) })
        };
        let indicator = |col: usize, name: &str| -> Result<u8> {
            let v = num(col, name)?;
            if v == 0.0 || v == 1.0 {
                Ok(v as u8)
            } else {
                Err(cell(row, name, format!("expected 0 or 1, got {v}")))
            }
        };
        r.push(indicator(r_col, &schema.r)?);
        if let Some(c) = y_col {
            let v = num(c, &schema.y)?;
            if v < 0.0 {
                return Err(cell(row, &schema.y, "negative outcome"));
            }
            y.push(v);
        }
        for (&c, name) in z_cols.iter().zip(&z_names) {
            z.push(num(c, name)?);
        }
        if let Some(c) = f_col {
            f.push(num(c, &schema.exposure)?);
        }
        if let (Some(tc), Some(sc)) = (t_col, s_col) {
            t.push(num(tc, &schema.time)?);
            s.push(indicator(sc, &schema.status)?);
        }
    }

    let mut ds = if survival {
        let mut ds = ObservationalDataset::new_survival(t, s, r, z, d)?;
        if y_col.is_some() {
            ds = ds.with_outcome(y)?;
        }
        ds
    } else {
        ObservationalDataset::new(y, r, z, d)?
    };
    ds = ds.with_covariate_names(z_names)?;
    if f_col.is_some() {
        ds = ds.with_exposure(f)?;
    }
    Ok(ds)
}

/// Writes a dataset in the same layout `load_csv` reads. Values use Rust's
/// shortest round-trip float formatting, so a reload is bit-exact.
pub fn write_csv(ds: &ObservationalDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["y".to_string(), "r".to_string()];
    header.extend(ds.covariate_names.iter().cloned());
    if ds.exposure.is_some() {
        header.push("f".into());
    }
    if ds.survival.is_some() {
        header.push("time".into());
        header.push("status".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.n {
        let mut rec = vec![ds.y[i].to_string(), ds.r[i].to_string()];
        rec.extend(ds.z_row(i).iter().map(|v| v.to_string()));
        if let Some(f) = &ds.exposure {
            rec.push(f[i].to_string());
        }
        if let Some(s) = &ds.survival {
            rec.push(s.time[i].to_string());
            rec.push(s.status[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Partition of row indices into `k` cross-fitting folds, stratified by arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    k: usize,
    /// Zero-based fold index per row.
    assignment: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    #[inline]
    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Rows in fold `fold`.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == fold).collect()
    }

    /// Rows outside fold `fold`.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != fold).collect()
    }

    /// Builds a plan from an explicit assignment, checking that every fold is
    /// nonempty.
    pub fn from_assignment(k: usize, assignment: Vec<usize>, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::input("fold count must be at least 2"));
        }
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            if a >= k {
                return Err(Error::input(format!("fold index {a} out of range for k={k}")));
            }
            sizes[a] += 1;
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::input("every fold must be nonempty"));
        }
        Ok(FoldPlan { k, assignment, seed })
    }
}

/// Stratified random partition of `n` rows into `k` folds.
///
/// Treated rows are shuffled and dealt round-robin starting at fold 0; control
/// rows continue the deal where the treated rows stopped. Fold sizes then
/// differ by at most one and each fold's treated count is `⌊n₁/k⌋` or `⌈n₁/k⌉`.
pub fn make_folds(n: usize, k: usize, r: &[u8], seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::input("fold count must be at least 2"));
    }
    if n < 2 * k {
        return Err(Error::input(format!("n={n} is too small for k={k} folds")));
    }
    if r.len() != n {
        return Err(Error::input("treatment vector length disagrees with n"));
    }
    let mut treated: Vec<usize> = (0..n).filter(|&i| r[i] == 1).collect();
    let mut control: Vec<usize> = (0..n).filter(|&i| r[i] != 1).collect();
    if treated.len() < k || control.len() < k {
        return Err(Error::input(format!(
            "k={k} is too large for arm sizes (treated {}, control {})",
            treated.len(),
            control.len()
        )));
    }
    let mut rng = seed::stream_rng(seed, seed::Stream::Folds, 0);
    treated.shuffle(&mut rng);
    control.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (pos, &i) in treated.iter().chain(control.iter()).enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan { k, assignment, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ObservationalDataset {
        ObservationalDataset::new(vec![0.0, 1.0, 2.0, 3.0], vec![0, 0, 1, 1], vec![0.1, 0.2, 0.3, 0.4], 1).unwrap()
    }

    #[test]
    fn normalize_unit_exposure_is_identity() {
        let ds = ObservationalDataset::new(vec![2.0, 3.0], vec![0, 1], vec![0.0, 1.0], 1)
            .unwrap()
            .with_exposure(vec![1.0, 1.0])
            .unwrap();
        let out = normalize_exposure(&ds).unwrap();
        assert_eq!(out.y(), &[2.0, 3.0]);
        assert!(out.exposure().is_none());
        assert_eq!((out.n(), out.d()), (2, 1));
    }

    #[test]
    fn normalize_divides_by_exposure() {
        let ds = ObservationalDataset::new(vec![2.0, 3.0], vec![0, 1], vec![0.0, 1.0], 1)
            .unwrap()
            .with_exposure(vec![0.5, 1.5])
            .unwrap();
        assert_eq!(normalize_exposure(&ds).unwrap().y(), &[4.0, 2.0]);
    }

    #[test]
    fn zero_exposure_rejected() {
        let err = ObservationalDataset::new(vec![2.0, 3.0], vec![0, 1], vec![0.0, 1.0], 1)
            .unwrap()
            .with_exposure(vec![0.0, 1.0]);
        assert!(err.is_err());
        assert!(normalize_exposure(&small()).is_err());
    }

    #[test]
    fn empty_arm_and_negative_outcome_rejected() {
        assert!(ObservationalDataset::new(vec![1.0, 2.0], vec![1, 1], vec![0.0, 0.0], 1).is_err());
        assert!(ObservationalDataset::new(vec![-1.0, 2.0], vec![0, 1], vec![0.0, 0.0], 1).is_err());
    }

    #[test]
    fn folds_balanced_and_deterministic() {
        let r = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let plan = make_folds(10, 2, &r, 1).unwrap();
        for f in 0..2 {
            let m = plan.members(f);
            assert_eq!(m.len(), 5);
            let t = m.iter().filter(|&&i| r[i] == 1).count();
            assert!(t == 2 || t == 3);
        }
        assert_eq!(plan, make_folds(10, 2, &r, 1).unwrap());
    }

    #[test]
    fn folds_reject_small_arm() {
        let r = vec![1, 1, 0, 0, 0, 0];
        assert!(make_folds(6, 5, &r, 1).is_err());
        assert!(make_folds(6, 3, &[1, 1, 0, 0, 0, 0], 1).is_err());
    }

    #[test]
    fn subset_keeps_rows_in_order() {
        let ds = small();
        let sub = ds.subset(&[3, 0]).unwrap();
        assert_eq!(sub.y(), &[3.0, 0.0]);
        assert_eq!(sub.z(), &[0.4, 0.1]);
        assert!(ds.subset(&[2, 3]).is_err());
    }
}
