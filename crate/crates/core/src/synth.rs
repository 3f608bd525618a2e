//! Synthetic worlds with known predictors: a Gaussian regression world with
//! closed-form conditional means, and two binary classification worlds.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::missingness::Mask;
use crate::schema::{Feature, FeatureKind, FeatureSchema};

pub const JITTER: f64 = 1e-9;

/// Joint Gaussian over `dim` coordinates; the first `dim - 1` are inputs and
/// the last is the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianWorld {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub cov: Vec<f64>,
}

impl GaussianWorld {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let world = Self { mean, cov };
        world.validate()?;
        Ok(world)
    }

    /// `mu ~ U(0,1)^dim`, `W ~ U(0,1)^{dim x dim}`, `Sigma = W^T W`.
    pub fn sample<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mean: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let w = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>());
        let sigma = w.transpose() * w;
        let cov = (0..dim * dim).map(|k| sigma[(k / dim, k % dim)]).collect();
        Self { mean, cov }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d < 2 {
            return Err(Error::InvalidParameter(
                "a world needs at least one input and a target".into(),
            ));
        }
        if self.cov.len() != d * d {
            return Err(Error::Shape(format!(
                "covariance has {} entries for dim {d}",
                self.cov.len()
            )));
        }
        if self.mean.iter().chain(&self.cov).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("world parameters".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (self.cov[i * d + j] - self.cov[j * d + i]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        self.cholesky().map(|_| ())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.dim() - 1
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::continuous(self.n_inputs())
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.cov[i * d + j])
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let jittered = self.cov_matrix() + DMatrix::identity(d, d) * JITTER;
        Cholesky::new(jittered)
            .map(|c| c.l())
            .ok_or_else(|| Error::SingularCovariance((0..d).collect()))
    }

    /// `n` i.i.d. rows `mu + L z`.
    pub fn draw_dataset<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        let l = self.cholesky()?;
        let d = self.dim();
        let k = self.n_inputs();
        let mut x = Vec::with_capacity(n * k);
        let mut y = Vec::with_capacity(n);
        let mut z = DVector::zeros(d);
        for _ in 0..n {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let s = &l * &z;
            x.extend((0..k).map(|i| self.mean[i] + s[i]));
            y.push(self.mean[k] + s[k]);
        }
        if n == 0 {
            return Ok(Dataset::empty(k));
        }
        Dataset::new(k, x, y)
    }

    /// Intercept and coefficients of `E[Y | X_S]` as an affine function of
    /// `x_S`. Indices are 0-based input coordinates.
    pub fn conditional_coefficients(&self, observed: &[usize]) -> Result<(f64, Vec<f64>)> {
        let d = self.dim();
        let yi = self.n_inputs();
        if let Some(&bad) = observed.iter().find(|&&i| i >= yi) {
            return Err(Error::InvalidParameter(format!(
                "input index {bad} out of range"
            )));
        }
        let mu_y = self.mean[yi];
        if observed.is_empty() {
            return Ok((mu_y, Vec::new()));
        }
        let s = observed.len();
        let sss = DMatrix::from_fn(s, s, |a, b| self.cov[observed[a] * d + observed[b]])
            + DMatrix::identity(s, s) * JITTER;
        let sys = DVector::from_fn(s, |a, _| self.cov[observed[a] * d + yi]);
        let chol =
            Cholesky::new(sss).ok_or_else(|| Error::SingularCovariance(observed.to_vec()))?;
        let beta = chol.solve(&sys);
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance(observed.to_vec()));
        }
        let intercept = mu_y
            - observed
                .iter()
                .zip(beta.iter())
                .map(|(&i, b)| b * self.mean[i])
                .sum::<f64>();
        Ok((intercept, beta.iter().copied().collect()))
    }

    /// `mu_Y + Sigma_{Y,S} Sigma_{SS}^{-1} (x_S - mu_S)`.
    pub fn bayes_conditional_mean(&self, observed: &[usize], x_s: &[f64]) -> Result<f64> {
        if x_s.len() != observed.len() {
            return Err(Error::LengthMismatch {
                expected: observed.len(),
                actual: x_s.len(),
            });
        }
        let (c, beta) = self.conditional_coefficients(observed)?;
        Ok(c + beta.iter().zip(x_s).map(|(b, x)| b * x).sum::<f64>())
    }

    /// Bayes predictions for every row of `data` with the `pattern`
    /// coordinates hidden.
    pub fn bayes_predict(&self, data: &Dataset, pattern: &Mask) -> Result<Vec<f64>> {
        let observed = pattern.observed_indices();
        let (c, beta) = self.conditional_coefficients(&observed)?;
        Ok((0..data.len())
            .map(|r| {
                let row = data.row(r);
                c + observed
                    .iter()
                    .zip(&beta)
                    .map(|(&i, b)| b * row[i])
                    .sum::<f64>()
            })
            .collect())
    }
}

/// Binary classification worlds with two inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassWorld {
    /// `X | Y = y ~ N(means[y], sigma^2 [[1, rho[y]], [rho[y], 1]])`.
    Continuous2d {
        means: [[f64; 2]; 2],
        sigma: f64,
        rho: [f64; 2],
        prior1: f64,
    },
    /// `X1 | Y = y ~ Bernoulli(p_x1[y])`, stored as class code `1 + X1`;
    /// `X2 | Y = y ~ N(means[y], sigma^2)`.
    Mixed {
        p_x1: [f64; 2],
        means: [f64; 2],
        sigma: f64,
        prior1: f64,
    },
}

impl ClassWorld {
    pub fn continuous2d() -> Self {
        ClassWorld::Continuous2d {
            means: [[-1.0, -1.0], [1.0, 1.0]],
            sigma: 1.0,
            rho: [0.8, -0.8],
            prior1: 0.5,
        }
    }

    pub fn mixed() -> Self {
        ClassWorld::Mixed {
            p_x1: [0.2, 0.8],
            means: [-1.0, 1.0],
            sigma: 1.0,
            prior1: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let (prior1, sigma) = match self {
            ClassWorld::Continuous2d {
                sigma,
                rho,
                prior1,
                means,
            } => {
                if rho.iter().any(|r| !(r.abs() < 1.0)) {
                    return bad(format!("correlations {rho:?} must lie in (-1, 1)"));
                }
                if means.iter().flatten().any(|m| !m.is_finite()) {
                    return bad("non-finite class mean".into());
                }
                (*prior1, *sigma)
            }
            ClassWorld::Mixed {
                p_x1,
                means,
                sigma,
                prior1,
            } => {
                if p_x1.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad(format!("Bernoulli parameters {p_x1:?} outside [0, 1]"));
                }
                if means.iter().any(|m| !m.is_finite()) {
                    return bad("non-finite class mean".into());
                }
                (*prior1, *sigma)
            }
        };
        if !(0.0..=1.0).contains(&prior1) {
            return bad(format!("prior {prior1} outside [0, 1]"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return bad(format!("sigma {sigma} must be positive"));
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        let first = match self {
            ClassWorld::Continuous2d { .. } => FeatureKind::ContinuousUnbounded,
            ClassWorld::Mixed { .. } => FeatureKind::Categorical { n_classes: 2 },
        };
        FeatureSchema::new(vec![
            Feature::new("x1", first),
            Feature::new("x2", FeatureKind::ContinuousUnbounded),
        ])
        .expect("fixed schema is valid")
    }

    pub fn generate<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        self.validate()?;
        let mut x = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let label = usize::from(rng.random::<f64>() < self.prior1());
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            match self {
                ClassWorld::Continuous2d {
                    means, sigma, rho, ..
                } => {
                    let r = rho[label];
                    x.push(means[label][0] + sigma * z1);
                    x.push(means[label][1] + sigma * (r * z1 + (1.0 - r * r).sqrt() * z2));
                }
                ClassWorld::Mixed {
                    p_x1, means, sigma, ..
                } => {
                    let bit = rng.random::<f64>() < p_x1[label];
                    x.push(if bit { 2.0 } else { 1.0 });
                    x.push(means[label] + sigma * z2);
                }
            }
            y.push(label as f64);
        }
        if n == 0 {
            return Ok(Dataset::empty(2));
        }
        Dataset::new(2, x, y)
    }

    pub fn prior1(&self) -> f64 {
        match self {
            ClassWorld::Continuous2d { prior1, .. } | ClassWorld::Mixed { prior1, .. } => *prior1,
        }
    }

    /// Class-conditional density (or mass for the binary input) of the
    /// observed coordinates of `x`.
    fn likelihood(&self, label: usize, x: &[f64], pattern: &Mask) -> f64 {
        let normal = |v: f64, m: f64, s: f64| {
            let z = (v - m) / s;
            (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        };
        match self {
            ClassWorld::Continuous2d {
                means, sigma, rho, ..
            } => {
                let m = means[label];
                match (pattern.get(0), pattern.get(1)) {
                    (true, true) => 1.0,
                    (false, true) => normal(x[0], m[0], *sigma),
                    (true, false) => normal(x[1], m[1], *sigma),
                    (false, false) => {
                        let r = rho[label];
                        let s = (1.0 - r * r).sqrt();
                        let cond_mean = m[1] + r * (x[0] - m[0]);
                        normal(x[0], m[0], *sigma) * normal(x[1], cond_mean, sigma * s)
                    }
                }
            }
            ClassWorld::Mixed {
                p_x1, means, sigma, ..
            } => {
                let mut l = 1.0;
                if !pattern.get(0) {
                    l *= if x[0] >= 1.5 {
                        p_x1[label]
                    } else {
                        1.0 - p_x1[label]
                    };
                }
                if !pattern.get(1) {
                    l *= normal(x[1], means[label], *sigma);
                }
                l
            }
        }
    }

    /// `P(Y = 1 | X_{-pattern} = x_{-pattern})` in closed form.
    pub fn posterior1(&self, x: &[f64], pattern: &Mask) -> f64 {
        let p1 = self.prior1() * self.likelihood(1, x, pattern);
        let p0 = (1.0 - self.prior1()) * self.likelihood(0, x, pattern);
        if p0 + p1 == 0.0 {
            return self.prior1();
        }
        p1 / (p0 + p1)
    }

    /// Monte Carlo Bayes error of the decision rule `posterior1 > 1/2`.
    pub fn bayes_error<R: rand::Rng + ?Sized>(
        &self,
        pattern: &Mask,
        n: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let data = self.generate(n, rng)?;
        let wrong = (0..n)
            .filter(|&i| {
                let guess = if self.posterior1(data.row(i), pattern) > 0.5 {
                    1.0
                } else {
                    0.0
                };
                guess != data.y[i]
            })
            .count();
        Ok(wrong as f64 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Equal-width bins over the observed range.
    Histogram { bins: usize },
    /// One cell per distinct value.
    Discrete,
}

/// Per-cell estimate of `P(Y = 1 | feature)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConditional {
    pub feature: usize,
    /// Bin centers, or the distinct values for discrete binning.
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    pub positives: Vec<usize>,
    pub p1: Vec<f64>,
}

impl EmpiricalConditional {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub const DEFAULT_BINS: usize = 50;

/// Estimates `P(Y = 1 | X_feature)` from binary labels. With `laplace`,
/// each cell uses `(positives + 1) / (count + 2)`; without it an empty cell
/// is an error. Rows where the feature is missing are skipped.
pub fn empirical_conditional(
    data: &Dataset,
    feature: usize,
    binning: Binning,
    laplace: bool,
) -> Result<EmpiricalConditional> {
    if feature >= data.d {
        return Err(Error::InvalidParameter(format!(
            "feature {feature} out of range"
        )));
    }
    if data.y.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
    }
    let rows: Vec<(f64, bool)> = (0..data.len())
        .filter(|&i| !data.is_missing(i, feature))
        .map(|i| (data.row(i)[feature], data.y[i] == 1.0))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (centers, cell): (Vec<f64>, Box<dyn Fn(f64) -> usize>) = match binning {
        Binning::Histogram { bins } => {
            if bins == 0 {
                return Err(Error::InvalidParameter("bin count must be positive".into()));
            }
            let lo = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
            let width = if hi > lo {
                (hi - lo) / bins as f64
            } else {
                1.0
            };
            let centers = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
            (
                centers,
                Box::new(move |v| (((v - lo) / width) as usize).min(bins - 1)),
            )
        }
        Binning::Discrete => {
            let mut values: Vec<f64> = rows.iter().map(|r| r.0).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            let lookup = values.clone();
            (
                values,
                Box::new(move |v| {
                    lookup
                        .binary_search_by(|p| p.total_cmp(&v))
                        .expect("value present")
                }),
            )
        }
    };
    let mut counts = vec![0; centers.len()];
    let mut positives = vec![0; centers.len()];
    for &(v, pos) in &rows {
        let c = cell(v);
        counts[c] += 1;
        positives[c] += usize::from(pos);
    }
    let mut p1 = Vec::with_capacity(centers.len());
    for (c, (&n, &k)) in counts.iter().zip(&positives).enumerate() {
        if laplace {
            p1.push((k as f64 + 1.0) / (n as f64 + 2.0));
        } else if n == 0 {
            return Err(Error::InvalidParameter(format!(
                "bin {c} is empty and smoothing is off"
            )));
        } else {
            p1.push(k as f64 / n as f64);
        }
    }
    Ok(EmpiricalConditional {
        feature,
        centers,
        counts,
        positives,
        p1,
    })
}
