//! Imputation baselines and input dropout. Everything here works on
//! normalized rows.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{self, FeatureSchema, Normalization, NormalizationStats};

pub const DEFAULT_KNN_K: usize = 5;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ImputerKind {
    MeanMode,
    ZeroIndicator,
    Knn { k: usize },
    LinReg,
}

/// A fitted imputer. Observed entries are never changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Imputer {
    MeanMode {
        fill: Vec<f64>,
    },
    /// Fills zeros; the caller appends the mask as extra inputs.
    ZeroIndicator {
        d: usize,
    },
    Knn {
        k: usize,
        /// Complete training rows, row-major.
        rows: Vec<f64>,
        fill: Vec<f64>,
        categorical: Vec<bool>,
    },
    /// Conditional mean under the complete-row mean and covariance, which is
    /// the least-squares regression of each missing feature on the observed
    /// ones.
    LinReg {
        mean: Vec<f64>,
        cov: Vec<f64>,
        fill: Vec<f64>,
        categorical: Vec<bool>,
    },
}

/// Per-feature mean (continuous) or mode (categorical) of normalized rows.
pub fn mean_mode_fill(
    schema: &FeatureSchema,
    rows: &[f64],
    missing: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let identity = NormalizationStats {
        features: vec![Normalization::None; schema.len()],
    };
    schema::mean_mode(schema, &identity, rows, missing)
}

fn complete_rows(rows: &[f64], missing: Option<&[bool]>, d: usize) -> Vec<f64> {
    match missing {
        None => rows.to_vec(),
        Some(m) => rows
            .chunks(d)
            .zip(m.chunks(d))
            .filter(|(_, mm)| !mm.iter().any(|&b| b))
            .flat_map(|(r, _)| r.iter().copied())
            .collect(),
    }
}

static LINREG_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_linreg(what: &str) {
    if !LINREG_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("linear-regression imputer: {what}; falling back to the mean");
    }
}

/// Fits an imputer on normalized training rows. KNN and LinReg use complete
/// rows only.
pub fn fit_imputer(
    kind: ImputerKind,
    schema: &FeatureSchema,
    rows: &[f64],
    missing: Option<&[bool]>,
) -> Result<Imputer> {
    let d = schema.len();
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() % d != 0 {
        return Err(Error::Shape(format!("{} values for width {d}", rows.len())));
    }
    let categorical: Vec<bool> = schema
        .features
        .iter()
        .map(|f| f.kind.is_categorical())
        .collect();
    Ok(match kind {
        ImputerKind::MeanMode => Imputer::MeanMode {
            fill: mean_mode_fill(schema, rows, missing)?,
        },
        ImputerKind::ZeroIndicator => Imputer::ZeroIndicator { d },
        ImputerKind::Knn { k } => {
            if k == 0 {
                return Err(Error::InvalidParameter("KNN needs k >= 1".into()));
            }
            let fill = mean_mode_fill(schema, rows, missing)?;
            let complete = complete_rows(rows, missing, d);
            if complete.is_empty() {
                return Err(Error::Imputer("KNN found no complete training rows".into()));
            }
            Imputer::Knn {
                k,
                rows: complete,
                fill,
                categorical,
            }
        }
        ImputerKind::LinReg => {
            let fill = mean_mode_fill(schema, rows, missing)?;
            let complete = complete_rows(rows, missing, d);
            let n = complete.len() / d;
            if n < d {
                return Err(Error::Imputer(format!(
                    "linear regression needs at least {d} complete rows, found {n}"
                )));
            }
            let mut mean = vec![0.0; d];
            for r in complete.chunks(d) {
                for (m, v) in mean.iter_mut().zip(r) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut cov = vec![0.0; d * d];
            for r in complete.chunks(d) {
                for a in 0..d {
                    let da = r[a] - mean[a];
                    for b in 0..d {
                        cov[a * d + b] += da * (r[b] - mean[b]);
                    }
                }
            }
            cov.iter_mut().for_each(|c| *c /= n as f64);
            let continuous: Vec<usize> = (0..d).filter(|&j| !categorical[j]).collect();
            let block = DMatrix::from_fn(continuous.len(), continuous.len(), |a, b| {
                cov[continuous[a] * d + continuous[b]]
            });
            if !continuous.is_empty() && !well_conditioned(&block) {
                warn_linreg("complete-row covariance is rank deficient");
            }
            Imputer::LinReg {
                mean,
                cov,
                fill,
                categorical,
            }
        }
    })
}

fn well_conditioned(m: &DMatrix<f64>) -> bool {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0f64, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > RANK_TOL * max
}

impl Imputer {
    pub fn kind(&self) -> ImputerKind {
        match self {
            Imputer::MeanMode { .. } => ImputerKind::MeanMode,
            Imputer::ZeroIndicator { .. } => ImputerKind::ZeroIndicator,
            Imputer::Knn { k, .. } => ImputerKind::Knn { k: *k },
            Imputer::LinReg { .. } => ImputerKind::LinReg,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Imputer::MeanMode { fill }
            | Imputer::Knn { fill, .. }
            | Imputer::LinReg { fill, .. } => fill.len(),
            Imputer::ZeroIndicator { d } => *d,
        }
    }

    /// Whether the network input carries the mask after the values.
    pub fn appends_indicator(&self) -> bool {
        matches!(self, Imputer::ZeroIndicator { .. })
    }

    /// Fills one row in place.
    pub fn impute(&self, row: &mut [f64], missing: &[bool]) -> Result<()> {
        self.impute_rows(row, missing)
    }

    /// Fills every row of a row-major block in place. Rows sharing a missing
    /// pattern share one regression solve.
    pub fn impute_rows(&self, rows: &mut [f64], missing: &[bool]) -> Result<()> {
        let d = self.dim();
        if rows.len() != missing.len() || rows.len() % d != 0 {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                actual: missing.len(),
            });
        }
        match self {
            Imputer::MeanMode { fill } => {
                for (r, m) in rows.chunks_mut(d).zip(missing.chunks(d)) {
                    for j in 0..d {
                        if m[j] {
                            r[j] = fill[j];
                        }
                    }
                }
            }
            Imputer::ZeroIndicator { .. } => {
                for (v, &m) in rows.iter_mut().zip(missing) {
                    if m {
                        *v = 0.0;
                    }
                }
            }
            Imputer::Knn {
                k,
                rows: train,
                fill,
                categorical,
            } => {
                for (r, m) in rows.chunks_mut(d).zip(missing.chunks(d)) {
                    knn_fill(r, m, *k, train, fill, categorical);
                }
            }
            Imputer::LinReg {
                mean,
                cov,
                fill,
                categorical,
            } => {
                let mut plans: BTreeMap<Vec<bool>, Option<Plan>> = BTreeMap::new();
                for (r, m) in rows.chunks_mut(d).zip(missing.chunks(d)) {
                    if !m.iter().any(|&b| b) {
                        continue;
                    }
                    let plan = plans
                        .entry(m.to_vec())
                        .or_insert_with(|| Plan::new(m, mean, cov, categorical));
                    match plan {
                        Some(plan) => plan.apply(r, mean),
                        None => {
                            for j in 0..d {
                                if m[j] {
                                    r[j] = fill[j];
                                }
                            }
                        }
                    }
                    for j in 0..d {
                        if m[j] && categorical[j] {
                            r[j] = fill[j];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Regression coefficients for one missing pattern.
struct Plan {
    observed: Vec<usize>,
    targets: Vec<usize>,
    /// `targets x observed`, row-major.
    coef: Vec<f64>,
}

impl Plan {
    fn new(missing: &[bool], mean: &[f64], cov: &[f64], categorical: &[bool]) -> Option<Self> {
        let d = mean.len();
        let observed: Vec<usize> = (0..d).filter(|&j| !missing[j] && !categorical[j]).collect();
        let targets: Vec<usize> = (0..d).filter(|&j| missing[j] && !categorical[j]).collect();
        if observed.is_empty() {
            return Some(Self {
                observed,
                targets,
                coef: Vec::new(),
            });
        }
        let s = observed.len();
        let sss = DMatrix::from_fn(s, s, |a, b| cov[observed[a] * d + observed[b]]);
        if !well_conditioned(&sss) {
            warn_linreg("observed block is rank deficient");
            return None;
        }
        let chol = sss.cholesky()?;
        let mut coef = Vec::with_capacity(targets.len() * s);
        for &t in &targets {
            let rhs = DVector::from_fn(s, |a, _| cov[observed[a] * d + t]);
            coef.extend(chol.solve(&rhs).iter().copied());
        }
        Some(Self {
            observed,
            targets,
            coef,
        })
    }

    fn apply(&self, row: &mut [f64], mean: &[f64]) {
        let s = self.observed.len();
        for (ti, &t) in self.targets.iter().enumerate() {
            let mut v = mean[t];
            for (a, &o) in self.observed.iter().enumerate() {
                v += self.coef[ti * s + a] * (row[o] - mean[o]);
            }
            row[t] = v;
        }
    }
}

fn knn_fill(
    row: &mut [f64],
    missing: &[bool],
    k: usize,
    train: &[f64],
    fill: &[f64],
    categorical: &[bool],
) {
    let d = row.len();
    let observed: Vec<usize> = (0..d).filter(|&j| !missing[j]).collect();
    if observed.len() == d {
        return;
    }
    if observed.is_empty() {
        for j in 0..d {
            row[j] = fill[j];
        }
        return;
    }
    let mut dist: Vec<(f64, usize)> = train
        .chunks(d)
        .enumerate()
        .map(|(i, t)| {
            let ss: f64 = observed.iter().map(|&j| (t[j] - row[j]).powi(2)).sum();
            (ss / observed.len() as f64, i)
        })
        .collect();
    let k = k.min(dist.len());
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, order);
        dist.truncate(k);
    }
    dist.sort_by(order);
    for j in (0..d).filter(|&j| missing[j]) {
        let values = dist.iter().map(|&(_, i)| train[i * d + j]);
        row[j] = if categorical[j] {
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for v in values {
                *counts.entry(v.round() as i64).or_default() += 1;
            }
            // lowest code wins ties
            let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)));
            best.map_or(fill[j], |(&c, _)| c as f64)
        } else {
            values.sum::<f64>() / k as f64
        };
    }
}

/// Input dropout: each entry independently set to 0 with probability
/// `rate`. With `rescale`, survivors are divided by `1 - rate`.
pub fn dropout_augment<R: rand::Rng + ?Sized>(
    row: &mut [f64],
    rate: f64,
    rescale: bool,
    rng: &mut R,
) {
    let keep = 1.0 - rate;
    for v in row.iter_mut() {
        if rng.random::<f64>() < rate {
            *v = 0.0;
        } else if rescale && keep > 0.0 {
            *v /= keep;
        }
    }
}

/// Validates a dropout rate.
pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!(
            "dropout rate {rate} outside [0, 1]"
        )));
    }
    Ok(())
}
