//! Exact enumeration over finite joints `p(X, Y)`.
//!
//! Everything here sums over the full table, so it is only meant for a few
//! features with small alphabets. With [`BigRational`] probabilities the
//! results are exact, which lets the knockout identities be checked as
//! equalities rather than up to tolerance.

use std::fmt;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, Signed, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::missingness::Mask;

/// Probability scalar: exact rationals or doubles.
pub trait Prob: Clone + PartialEq + PartialOrd + fmt::Debug + fmt::Display + Num {
    fn from_ratio(num: i64, den: i64) -> Self;
    fn to_f64(&self) -> f64;
    /// Equality for rationals, `|a - b| <= 1e-12` for doubles.
    fn approx_eq(&self, other: &Self) -> bool;
    fn parse_prob(s: &str) -> Option<Self>;
}

impl Prob for f64 {
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn approx_eq(&self, other: &Self) -> bool {
        (self - other).abs() <= 1e-12
    }

    fn parse_prob(s: &str) -> Option<Self> {
        match s.split_once('/') {
            Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
            None => s.parse().ok(),
        }
    }
}

impl Prob for BigRational {
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(num.into(), den.into())
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn approx_eq(&self, other: &Self) -> bool {
        self == other
    }

    /// Accepts `a/b` or a plain decimal such as `0.35`, read exactly.
    fn parse_prob(s: &str) -> Option<Self> {
        if let Some((a, b)) = s.split_once('/') {
            let a: BigInt = a.trim().parse().ok()?;
            let b: BigInt = b.trim().parse().ok()?;
            if b.is_zero() {
                return None;
            }
            return Some(BigRational::new(a, b));
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.starts_with('-') || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let digits = format!("{int}{frac}");
        let num: BigInt = digits.parse().ok()?;
        let den = num_traits::pow(BigInt::from(10), frac.len());
        Some(BigRational::new(num, den))
    }
}

/// A finite joint over `d` features and a discrete label.
///
/// Feature `j` takes values in `alphabets[j]`; the table is dense over the
/// Cartesian product, with `probs[point * n_labels + y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint<T> {
    alphabets: Vec<Vec<i64>>,
    labels: Vec<i64>,
    probs: Vec<T>,
}

impl<T: Prob> DiscreteJoint<T> {
    /// Builds a joint from sparse `(x, y, p)` entries; unlisted cells are 0.
    pub fn from_entries(entries: Vec<(Vec<i64>, i64, T)>) -> Result<Self> {
        let d = entries
            .first()
            .map(|e| e.0.len())
            .ok_or_else(|| Error::InvalidJoint("no entries".into()))?;
        if d == 0 {
            return Err(Error::InvalidJoint(
                "points need at least one feature".into(),
            ));
        }
        let mut alphabets = vec![Vec::new(); d];
        let mut labels = Vec::new();
        for (x, y, _) in &entries {
            if x.len() != d {
                return Err(Error::InvalidJoint(format!(
                    "point {x:?} has {} features, expected {d}",
                    x.len()
                )));
            }
            for (a, v) in alphabets.iter_mut().zip(x) {
                a.push(*v);
            }
            labels.push(*y);
        }
        for a in alphabets.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        labels.sort_unstable();
        labels.dedup();
        let mut joint = Self {
            probs: vec![
                T::zero();
                alphabets.iter().map(Vec::len).product::<usize>() * labels.len()
            ],
            alphabets,
            labels,
        };
        for (x, y, p) in entries {
            let idx = joint.point_index(&x).expect("value came from the alphabet");
            let yi = joint
                .labels
                .binary_search(&y)
                .expect("label came from the set");
            let cell = &mut joint.probs[idx * joint.labels.len() + yi];
            *cell = cell.clone() + p;
        }
        joint.validate()?;
        Ok(joint)
    }

    /// Dense constructor; `probs` is indexed `[point][label]` with points in
    /// mixed-radix order (last feature fastest).
    pub fn from_dense(alphabets: Vec<Vec<i64>>, labels: Vec<i64>, probs: Vec<T>) -> Result<Self> {
        let cells = alphabets.iter().map(Vec::len).product::<usize>() * labels.len();
        if alphabets.is_empty() || probs.len() != cells {
            return Err(Error::InvalidJoint(format!(
                "{} probabilities for {cells} cells",
                probs.len()
            )));
        }
        let joint = Self {
            alphabets,
            labels,
            probs,
        };
        joint.validate()?;
        Ok(joint)
    }

    pub fn validate(&self) -> Result<()> {
        let mut total = T::zero();
        for p in &self.probs {
            if *p < T::zero() {
                return Err(Error::InvalidJoint(format!("negative probability {p}")));
            }
            total = total + p.clone();
        }
        if !total.approx_eq(&T::one()) {
            return Err(Error::InvalidJoint(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.alphabets.len()
    }

    pub fn alphabets(&self) -> &[Vec<i64>] {
        &self.alphabets
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn n_points(&self) -> usize {
        self.alphabets.iter().map(Vec::len).product()
    }

    fn point_index(&self, x: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for (a, v) in self.alphabets.iter().zip(x) {
            idx = idx * a.len() + a.binary_search(v).ok()?;
        }
        Some(idx)
    }

    /// Values of the point with mixed-radix index `idx`.
    pub fn point(&self, mut idx: usize) -> Vec<i64> {
        let mut out = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            let a = &self.alphabets[j];
            out[j] = a[idx % a.len()];
            idx /= a.len();
        }
        out
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.n_points()).map(|i| self.point(i))
    }

    pub fn prob(&self, x: &[i64], y: i64) -> T {
        match (self.point_index(x), self.labels.binary_search(&y)) {
            (Some(i), Ok(yi)) => self.probs[i * self.labels.len() + yi].clone(),
            _ => T::zero(),
        }
    }

    pub fn in_support(&self, feature: usize, value: i64) -> bool {
        self.alphabets[feature].binary_search(&value).is_ok()
    }

    /// `sum_x weight(x) p(x, y)` for every label.
    fn weighted_label_sums(&self, weight: impl Fn(&[i64]) -> T) -> Vec<T> {
        let ny = self.labels.len();
        let mut sums = vec![T::zero(); ny];
        for i in 0..self.n_points() {
            let x = self.point(i);
            let w = weight(&x);
            if w.is_zero() {
                continue;
            }
            for (y, s) in sums.iter_mut().enumerate() {
                let p = &self.probs[i * ny + y];
                if !p.is_zero() {
                    *s = s.clone() + w.clone() * p.clone();
                }
            }
        }
        sums
    }

    fn normalize(sums: Vec<T>) -> Result<Vec<T>> {
        let total = sums.iter().fold(T::zero(), |a, b| a + b.clone());
        if total.is_zero() {
            return Err(Error::UnreachableEvidence);
        }
        Ok(sums.into_iter().map(|s| s / total.clone()).collect())
    }

    pub fn prior(&self) -> Vec<T> {
        Self::normalize(self.weighted_label_sums(|_| T::one())).expect("joint sums to one")
    }

    /// `p(Y | X_{-M} = x_{-M})` by summing out the masked coordinates.
    /// Entries of `x` under the mask are ignored.
    pub fn marginal(&self, pattern: &Mask, x: &[i64]) -> Result<Vec<T>> {
        self.check_len(pattern.len())?;
        self.check_len(x.len())?;
        let sums = self.weighted_label_sums(|point| {
            let matches = (0..point.len()).all(|j| pattern.get(j) || point[j] == x[j]);
            if matches {
                T::one()
            } else {
                T::zero()
            }
        });
        Self::normalize(sums)
    }

    /// `p(Y | X' = evidence)` where `X' = M * xbar + (1 - M) * X` and each
    /// `M_j ~ Bernoulli(q)` independently of `X, Y`.
    ///
    /// For every point `x`, coordinate `j` contributes the factor
    /// `q [e_j = xbar_j] + (1 - q) [x_j = e_j]`, which covers placeholders
    /// both inside and outside the support.
    pub fn induced_conditional(
        &self,
        q: &T,
        placeholders: &[i64],
        evidence: &[i64],
    ) -> Result<Vec<T>> {
        self.check_len(placeholders.len())?;
        self.check_len(evidence.len())?;
        check_probability(q)?;
        let keep = T::one() - q.clone();
        let sums = self.weighted_label_sums(|point| {
            let mut w = T::one();
            for j in 0..point.len() {
                let mut f = T::zero();
                if evidence[j] == placeholders[j] {
                    f = f + q.clone();
                }
                if point[j] == evidence[j] {
                    f = f + keep.clone();
                }
                if f.is_zero() {
                    return T::zero();
                }
                w = w * f;
            }
            w
        });
        Self::normalize(sums)
    }

    /// Ratio field `(1 - r + r P(xbar_i | y, ctx)) / (1 - r + r P(xbar_i | ctx))`
    /// with `r = P(M_i = 0) = 1 - q`, for every label `y`. `context` gives the
    /// values of the other features; `context[feature]` is ignored.
    ///
    /// When every other coordinate differs from its placeholder,
    /// `induced_conditional = marginal * ratio` holds exactly.
    pub fn insupport_deviation(
        &self,
        q: &T,
        feature: usize,
        placeholder: i64,
        context: &[i64],
    ) -> Result<Vec<T>> {
        self.check_len(context.len())?;
        check_probability(q)?;
        if feature >= self.dim() {
            return Err(Error::InvalidParameter(format!(
                "feature {feature} out of range"
            )));
        }
        if !self.in_support(feature, placeholder) {
            return Err(Error::InvalidParameter(format!(
                "placeholder {placeholder} is not in the support of feature {feature}"
            )));
        }
        let r = T::one() - q.clone();
        let ctx = |point: &[i64]| (0..point.len()).all(|j| j == feature || point[j] == context[j]);
        let joint_ctx = self.weighted_label_sums(|p| if ctx(p) { T::one() } else { T::zero() });
        let joint_hit = self.weighted_label_sums(|p| {
            if ctx(p) && p[feature] == placeholder {
                T::one()
            } else {
                T::zero()
            }
        });
        let p_ctx = joint_ctx.iter().fold(T::zero(), |a, b| a + b.clone());
        if p_ctx.is_zero() {
            return Err(Error::UnreachableEvidence);
        }
        let p_hit = joint_hit.iter().fold(T::zero(), |a, b| a + b.clone());
        let denom = T::one() - r.clone() + r.clone() * (p_hit / p_ctx);
        if denom.is_zero() {
            return Err(Error::UnreachableEvidence);
        }
        Ok(joint_ctx
            .into_iter()
            .zip(joint_hit)
            .map(|(c, h)| {
                let given_y = if c.is_zero() { T::zero() } else { h / c };
                (T::one() - r.clone() + r.clone() * given_y) / denom.clone()
            })
            .collect())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Parses a whitespace- or comma-separated table, one cell per line:
    /// the feature values, then the label, then the probability (`a/b` or a
    /// decimal). Blank lines and `#` comments are skipped.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .collect();
            let bad =
                |what: &str| Error::InvalidJoint(format!("line {}: {what}: {raw:?}", lineno + 1));
            if tokens.len() < 3 {
                return Err(bad("expected feature values, label and probability"));
            }
            let (p, rest) = tokens.split_last().expect("non-empty");
            let (y, xs) = rest.split_last().expect("non-empty");
            let x = xs
                .iter()
                .map(|t| {
                    t.parse::<i64>()
                        .map_err(|_| bad("feature value is not an integer"))
                })
                .collect::<Result<Vec<_>>>()?;
            let y = y
                .parse::<i64>()
                .map_err(|_| bad("label is not an integer"))?;
            let p = T::parse_prob(p).ok_or_else(|| bad("unreadable probability"))?;
            entries.push((x, y, p));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_table(&text)
    }
}

fn check_probability<T: Prob>(q: &T) -> Result<()> {
    if *q < T::zero() || *q > T::one() {
        return Err(Error::InvalidParameter(format!(
            "probability {q} outside [0, 1]"
        )));
    }
    Ok(())
}

/// The two-point world used to show that an in-support placeholder biases
/// the induced conditional: `P(X = x1) = 0.3`, `Y = 0` iff `X = x1`.
/// Codes: `x1 = 1`, `x2 = 2`.
pub fn two_point_world() -> DiscreteJoint<BigRational> {
    DiscreteJoint::from_entries(vec![
        (vec![1], 0, BigRational::from_ratio(3, 10)),
        (vec![2], 1, BigRational::from_ratio(7, 10)),
    ])
    .expect("valid joint")
}

/// Random joint with integer weights in `0..=9` normalized to rationals.
/// Feature alphabets are `0..size`; at least one cell is nonzero.
pub fn random_joint<R: Rng + ?Sized>(
    rng: &mut R,
    alphabet_sizes: &[usize],
    n_labels: usize,
) -> DiscreteJoint<BigRational> {
    let alphabets: Vec<Vec<i64>> = alphabet_sizes
        .iter()
        .map(|&k| (0..k as i64).collect())
        .collect();
    let labels: Vec<i64> = (0..n_labels as i64).collect();
    let cells = alphabet_sizes.iter().product::<usize>() * n_labels;
    let mut weights: Vec<i64> = (0..cells).map(|_| rng.random_range(0..10)).collect();
    if weights.iter().all(|&w| w == 0) {
        weights[0] = 1;
    }
    let total: i64 = weights.iter().sum();
    let probs = weights
        .into_iter()
        .map(|w| BigRational::from_ratio(w, total))
        .collect();
    DiscreteJoint::from_dense(alphabets, labels, probs).expect("weights normalize to one")
}

/// Total-variation distance between two label distributions.
pub fn total_variation<T: Prob + Signed>(p: &[T], q: &[T]) -> T {
    let sum = p
        .iter()
        .zip(q)
        .fold(T::zero(), |acc, (a, b)| acc + (a.clone() - b.clone()).abs());
    sum / (T::one() + T::one())
}

/// Checks the out-of-support identity on one joint: for every pattern and
/// every reachable observed context, the induced conditional under
/// knockout equals the true marginal. Returns the number of evidence
/// configurations compared, or the first mismatch.
pub fn check_out_of_support<T: Prob>(
    joint: &DiscreteJoint<T>,
    q: &T,
    placeholders: &[i64],
) -> std::result::Result<usize, String> {
    let d = joint.dim();
    for (j, &p) in placeholders.iter().enumerate() {
        if joint.in_support(j, p) {
            return Err(format!("placeholder {p} of feature {j} is in the support"));
        }
    }
    let mut compared = 0;
    for bits in 0..(1u32 << d) {
        let pattern = Mask::from_bits((0..d).map(|j| bits >> j & 1 == 1).collect());
        for x in joint.points() {
            // one representative per observed context
            if (0..d).any(|j| pattern.get(j) && x[j] != joint.alphabets()[j][0]) {
                continue;
            }
            let evidence: Vec<i64> = (0..d)
                .map(|j| {
                    if pattern.get(j) {
                        placeholders[j]
                    } else {
                        x[j]
                    }
                })
                .collect();
            let marginal = match joint.marginal(&pattern, &x) {
                Ok(m) => m,
                Err(Error::UnreachableEvidence) => continue,
                Err(e) => return Err(e.to_string()),
            };
            let induced = joint
                .induced_conditional(q, placeholders, &evidence)
                .map_err(|e| format!("pattern {pattern}, evidence {evidence:?}: {e}"))?;
            if induced.iter().zip(&marginal).any(|(a, b)| !a.approx_eq(b)) {
                return Err(format!(
                    "pattern {pattern}, evidence {evidence:?}: induced {induced:?} != marginal {marginal:?}"
                ));
            }
            compared += 1;
        }
    }
    Ok(compared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::from_ratio(n, d)
    }

    #[test]
    fn in_support_counterexample() {
        let joint = two_point_world();
        let half = r(1, 2);
        // placeholder x1 lies in the support
        let p = joint.induced_conditional(&half, &[1], &[1]).unwrap();
        assert_eq!(p[0], r(6, 13));
        assert!((Prob::to_f64(&p[0]) - 0.6 / 1.3).abs() < 1e-12);
        // out-of-support placeholder recovers the prior
        let p = joint.induced_conditional(&half, &[0], &[0]).unwrap();
        assert_eq!(p[0], r(3, 10));
        // no knockout recovers the full conditional
        let p = joint.induced_conditional(&r(0, 1), &[1], &[1]).unwrap();
        assert_eq!(p[0], r(1, 1));
    }

    #[test]
    fn deviation_ratio_on_counterexample() {
        let joint = two_point_world();
        let ratio = joint.insupport_deviation(&r(1, 2), 0, 1, &[0]).unwrap();
        assert_eq!(ratio[0], r(6, 13) / r(3, 10));
        let prior = joint.prior();
        assert_eq!(prior[0].clone() * ratio[0].clone(), r(6, 13));
    }

    #[test]
    fn marginal_extremes() {
        let mut rng = seed::rng(11, &[]);
        let joint = random_joint(&mut rng, &[3, 2], 3);
        assert_eq!(
            joint.marginal(&Mask::ones(2), &[0, 0]).unwrap(),
            joint.prior()
        );
        for x in joint.points() {
            let cond = joint.marginal(&Mask::zeros(2), &x);
            let mass: BigRational = joint
                .labels()
                .iter()
                .fold(r(0, 1), |a, &y| a + joint.prob(&x, y));
            match cond {
                Ok(c) => {
                    for (yi, &y) in joint.labels().iter().enumerate() {
                        assert_eq!(c[yi], joint.prob(&x, y) / mass.clone());
                    }
                }
                Err(Error::UnreachableEvidence) => assert!(mass.is_zero()),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn marginal_matches_brute_force_summation() {
        let mut rng = seed::rng(12, &[]);
        for _ in 0..20 {
            let joint = random_joint(&mut rng, &[3, 4], 2);
            let pattern: Mask = "10".parse().unwrap();
            for &x2 in &joint.alphabets()[1].clone() {
                // sum over x1 of p(x1, x2, y), then normalize over y
                let mut by_label = Vec::new();
                for &y in joint.labels() {
                    let mut s = r(0, 1);
                    for &x1 in &joint.alphabets()[0] {
                        s += joint.prob(&[x1, x2], y);
                    }
                    by_label.push(s);
                }
                let total = by_label.iter().fold(r(0, 1), |a, b| a + b);
                match joint.marginal(&pattern, &[99, x2]) {
                    Ok(m) => {
                        for (a, b) in m.iter().zip(&by_label) {
                            assert_eq!(a.clone(), b / &total);
                        }
                    }
                    Err(_) => assert!(total.is_zero()),
                }
            }
        }
    }

    #[test]
    fn out_of_support_identity_small() {
        let mut rng = seed::rng(13, &[]);
        for _ in 0..10 {
            let joint = random_joint(&mut rng, &[2, 3], 2);
            let q = r(rng.random_range(1..10), 10);
            let n = check_out_of_support(&joint, &q, &[-1, -1]).unwrap();
            assert!(n > 0);
        }
    }

    #[test]
    fn product_identity_with_in_support_placeholder() {
        let mut rng = seed::rng(14, &[]);
        for _ in 0..30 {
            let joint = random_joint(&mut rng, &[3, 3], 3);
            let q = r(rng.random_range(1..10), 10);
            let placeholder = rng.random_range(0..3);
            for x2 in 0..3 {
                let evidence = [placeholder, x2];
                let Ok(ratio) = joint.insupport_deviation(&q, 0, placeholder, &evidence) else {
                    continue;
                };
                let Ok(marg) = joint.marginal(&"10".parse().unwrap(), &evidence) else {
                    continue;
                };
                // feature 1's placeholder (-1) never matches a context value
                let induced = joint
                    .induced_conditional(&q, &[placeholder, -1], &evidence)
                    .unwrap();
                for i in 0..3 {
                    assert_eq!(induced[i], marg[i].clone() * ratio[i].clone());
                }
            }
        }
    }

    #[test]
    fn independent_placeholder_gives_unit_ratio() {
        // Y independent of X1 given X2
        let mut entries = Vec::new();
        for x1 in 0..2 {
            for x2 in 0..2 {
                for y in 0..2 {
                    let p = if y == x2 { r(3, 16) } else { r(1, 16) };
                    entries.push((vec![x1, x2], y, p));
                }
            }
        }
        let joint = DiscreteJoint::from_entries(entries).unwrap();
        let ratio = joint.insupport_deviation(&r(1, 3), 0, 0, &[0, 1]).unwrap();
        assert!(ratio.iter().all(|v| *v == r(1, 1)));
    }

    #[test]
    fn unreachable_evidence() {
        let joint = two_point_world();
        assert!(matches!(
            joint.induced_conditional(&r(0, 1), &[0], &[0]),
            Err(Error::UnreachableEvidence)
        ));
    }

    #[test]
    fn table_parsing() {
        let text = "# x y p\n1 0 3/10\n2, 1, 0.7\n";
        let joint = DiscreteJoint::<BigRational>::parse_table(text).unwrap();
        assert_eq!(joint, two_point_world());
        let joint = DiscreteJoint::<f64>::parse_table(text).unwrap();
        let p = joint.induced_conditional(&0.5, &[1], &[1]).unwrap();
        assert!((p[0] - 0.6 / 1.3).abs() < 1e-12);
        assert!(DiscreteJoint::<BigRational>::parse_table("1 0 1/2\n").is_err());
        assert!(DiscreteJoint::<BigRational>::parse_table("1 0\n").is_err());
    }
}
