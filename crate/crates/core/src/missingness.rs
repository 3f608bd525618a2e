//! Masks, the knockout law `p(M)`, observed-missingness injection and
//! pattern enumeration.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::schema::FeatureSchema;

/// Binary indicator over features; `true` means missing or knocked out.
///
/// The same type carries the induced mask `M` and the observed mask `N`;
/// which one it is depends on the call site.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn zeros(d: usize) -> Self {
        Mask(vec![false; d])
    }

    pub fn ones(d: usize) -> Self {
        Mask(vec![true; d])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    pub fn from_indices(d: usize, indices: &[usize]) -> Self {
        let mut bits = vec![false; d];
        for &i in indices {
            bits[i] = true;
        }
        Mask(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn popcount(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_clear(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    /// Indices of unmasked features.
    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.0[i]).collect()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.0[i]).collect()
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(Mask(
            self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect(),
        ))
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Mask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidParameter(format!(
                    "mask {s:?} contains {other:?}; expected only 0 and 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Mask)
    }
}

impl From<Mask> for String {
    fn from(m: Mask) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for Mask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// The law `p(M)` of the induced mask. Sampling never looks at the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaskDistribution {
    Iid {
        d: usize,
        rate: f64,
    },
    /// One Bernoulli draw per group; groups partition `0..d`.
    Grouped {
        d: usize,
        groups: Vec<Vec<usize>>,
        rate: f64,
    },
    Weighted {
        patterns: Vec<(Mask, f64)>,
    },
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::MaskDistribution(format!(
            "rate {rate} outside [0, 1]"
        )));
    }
    Ok(())
}

impl MaskDistribution {
    pub fn iid(d: usize, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(MaskDistribution::Iid { d, rate })
    }

    pub fn grouped(d: usize, groups: Vec<Vec<usize>>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        let mut seen = vec![false; d];
        for &i in groups.iter().flatten() {
            if i >= d || seen[i] {
                return Err(Error::MaskDistribution(format!(
                    "groups are not a partition of 0..{d}"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::MaskDistribution(format!(
                "groups do not cover 0..{d}"
            )));
        }
        Ok(MaskDistribution::Grouped { d, groups, rate })
    }

    /// Probabilities summing to within `1e-6` of one are renormalized.
    pub fn weighted(patterns: Vec<(Mask, f64)>) -> Result<Self> {
        let first = patterns
            .first()
            .ok_or_else(|| Error::MaskDistribution("no patterns".into()))?;
        let d = first.0.len();
        let mut total = 0.0;
        for (m, p) in &patterns {
            if m.len() != d {
                return Err(Error::MaskDistribution(format!(
                    "pattern {m} has length {}, expected {d}",
                    m.len()
                )));
            }
            if !(p.is_finite() && *p >= 0.0) {
                return Err(Error::MaskDistribution(format!("probability {p} for {m}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::MaskDistribution(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let patterns = patterns.into_iter().map(|(m, p)| (m, p / total)).collect();
        Ok(MaskDistribution::Weighted { patterns })
    }

    pub fn dim(&self) -> usize {
        match self {
            MaskDistribution::Iid { d, .. } | MaskDistribution::Grouped { d, .. } => *d,
            MaskDistribution::Weighted { patterns } => patterns[0].0.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Mask {
        let mut bits = vec![false; self.dim()];
        self.sample_into(rng, &mut bits);
        Mask(bits)
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, bits: &mut [bool]) {
        match self {
            MaskDistribution::Iid { rate, .. } => {
                for b in bits.iter_mut() {
                    *b = rng.random::<f64>() < *rate;
                }
            }
            MaskDistribution::Grouped { groups, rate, .. } => {
                for g in groups {
                    let knocked = rng.random::<f64>() < *rate;
                    for &i in g {
                        bits[i] = knocked;
                    }
                }
            }
            MaskDistribution::Weighted { patterns } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = &patterns[patterns.len() - 1].0;
                for (m, p) in patterns {
                    acc += p;
                    if u < acc {
                        chosen = m;
                        break;
                    }
                }
                bits.copy_from_slice(chosen.bits());
            }
        }
    }

    /// Exact probability of drawing `mask`.
    pub fn probability(&self, mask: &Mask) -> f64 {
        match self {
            MaskDistribution::Iid { rate, .. } => mask
                .bits()
                .iter()
                .map(|&b| if b { *rate } else { 1.0 - rate })
                .product(),
            MaskDistribution::Grouped { groups, rate, .. } => {
                let mut p = 1.0;
                for g in groups {
                    let first = mask.get(g[0]);
                    if g.iter().any(|&i| mask.get(i) != first) {
                        return 0.0;
                    }
                    p *= if first { *rate } else { 1.0 - rate };
                }
                p
            }
            MaskDistribution::Weighted { patterns } => patterns
                .iter()
                .filter(|(m, _)| m == mask)
                .map(|(_, p)| p)
                .sum(),
        }
    }
}

/// Knockout rate `r` with `(1 - r)^d = p_clean`.
pub fn calibrate_rate(d: usize, p_clean: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidParameter("d must be at least 1".into()));
    }
    if !(p_clean > 0.0 && p_clean < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p_clean must be in (0, 1), got {p_clean}"
        )));
    }
    Ok(1.0 - p_clean.powf(1.0 / d as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
pub enum MissingnessMechanism {
    /// Each entry independently missing with probability `p`.
    Mcar { p: f64 },
    /// An entry is missing when it exceeds its column's `quantile`.
    MnarSelfCensor { quantile: f64 },
}

impl MissingnessMechanism {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MissingnessMechanism::Mcar { p } if !(0.0..=1.0).contains(&p) => Err(
                Error::InvalidParameter(format!("MCAR probability {p} outside [0, 1]")),
            ),
            MissingnessMechanism::MnarSelfCensor { quantile }
                if !(quantile > 0.0 && quantile < 1.0) =>
            {
                Err(Error::InvalidParameter(format!(
                    "self-censoring quantile {quantile} outside (0, 1)"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        data: Dataset,
        schema: &FeatureSchema,
        rng: &mut R,
    ) -> Result<Dataset> {
        self.validate()?;
        match *self {
            MissingnessMechanism::Mcar { p } => Ok(inject_mcar(data, p, rng)),
            MissingnessMechanism::MnarSelfCensor { quantile } => {
                inject_mnar_self_censor(data, quantile, schema)
            }
        }
    }
}

/// Marks every entry missing independently with probability `p`.
pub fn inject_mcar<R: Rng + ?Sized>(mut data: Dataset, p: f64, rng: &mut R) -> Dataset {
    let missing = (0..data.x.len()).map(|_| rng.random::<f64>() < p).collect();
    data.missing = Some(missing);
    data
}

/// Nearest-rank empirical quantile: the value at 1-based rank `ceil(q n)`.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // tolerate q * n landing a hair above an integer
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Some(sorted[rank - 1])
}

/// Marks entries strictly above their column's nearest-rank `q`-quantile.
/// Categorical columns are never censored. Deterministic.
pub fn inject_mnar_self_censor(
    mut data: Dataset,
    q: f64,
    schema: &FeatureSchema,
) -> Result<Dataset> {
    if schema.len() != data.d {
        return Err(Error::LengthMismatch {
            expected: schema.len(),
            actual: data.d,
        });
    }
    let (n, d) = (data.len(), data.d);
    let mut missing = vec![false; n * d];
    for (j, f) in schema.features.iter().enumerate() {
        if f.kind.is_categorical() {
            continue;
        }
        let column: Vec<f64> = (0..n).map(|i| data.x[i * d + j]).collect();
        if let Some(threshold) = nearest_rank_quantile(&column, q) {
            for (i, &v) in column.iter().enumerate() {
                missing[i * d + j] = v > threshold;
            }
        }
    }
    data.missing = Some(missing);
    Ok(data)
}

/// All masks over `d` features with at most `k_max` ones, ordered by
/// popcount, then by bit string.
pub fn enumerate_patterns(d: usize, k_max: usize) -> Result<Vec<Mask>> {
    if k_max > d {
        return Err(Error::InvalidParameter(format!(
            "k_max {k_max} exceeds d {d}"
        )));
    }
    let mut out = Vec::new();
    for k in 0..=k_max {
        let mut level = Vec::new();
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            level.push(Mask::from_indices(d, &combo));
            // next combination in lexicographic index order
            let mut i = k;
            while i > 0 && combo[i - 1] == d - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..k {
                combo[j] = combo[j - 1] + 1;
            }
        }
        level.sort_by_key(|m| m.to_string());
        out.extend(level);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn calibrated_rates() {
        assert!((calibrate_rate(9, 0.5).unwrap() - 0.0741).abs() < 5e-4);
        assert!((calibrate_rate(1, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let r4 = calibrate_rate(4, 0.5).unwrap();
        assert!((r4 - 0.159_103_584_746_285_5).abs() < 1e-12);
        assert!(((1.0 - r4).powi(4) - 0.5).abs() < 1e-12);
        assert!(calibrate_rate(0, 0.5).is_err());
        assert!(calibrate_rate(3, 1.0).is_err());
    }

    #[test]
    fn calibrated_rate_matches_monte_carlo_clear_frequency() {
        let r = calibrate_rate(4, 0.5).unwrap();
        let dist = MaskDistribution::iid(4, r).unwrap();
        let mut rng = seed::rng(3, &[]);
        let n = 100_000;
        let clear = (0..n).filter(|_| dist.sample(&mut rng).is_clear()).count();
        assert!((clear as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn degenerate_rates() {
        let mut rng = seed::rng(1, &[]);
        let zero = MaskDistribution::iid(5, 0.0).unwrap();
        let one = MaskDistribution::iid(5, 1.0).unwrap();
        for _ in 0..100 {
            assert!(zero.sample(&mut rng).is_clear());
            assert_eq!(one.sample(&mut rng).popcount(), 5);
        }
        assert!(MaskDistribution::iid(2, 1.5).is_err());
    }

    #[test]
    fn grouped_masks_share_a_draw() {
        let dist = MaskDistribution::grouped(3, vec![vec![0, 1], vec![2]], 0.5).unwrap();
        let mut rng = seed::rng(2, &[]);
        let n = 100_000;
        let mut knocked = 0;
        for _ in 0..n {
            let m = dist.sample(&mut rng);
            assert_eq!(m.get(0), m.get(1));
            knocked += m.get(0) as usize;
        }
        assert!((knocked as f64 / n as f64 - 0.5).abs() < 0.01);
        assert!(MaskDistribution::grouped(3, vec![vec![0, 1]], 0.5).is_err());
    }

    #[test]
    fn weighted_distribution_normalizes_small_rounding() {
        let m = |s: &str| s.parse::<Mask>().unwrap();
        let dist = MaskDistribution::weighted(vec![(m("00"), 0.5), (m("11"), 0.5000001)]).unwrap();
        assert!((dist.probability(&m("11")) - 0.5).abs() < 1e-6);
        assert_eq!(dist.probability(&m("01")), 0.0);
        assert!(MaskDistribution::weighted(vec![(m("00"), 0.5), (m("11"), 0.6)]).is_err());
        assert!(MaskDistribution::weighted(vec![(m("00"), 0.5), (m("1"), 0.5)]).is_err());
    }

    #[test]
    fn iid_clear_frequency() {
        let dist = MaskDistribution::iid(9, 0.0741).unwrap();
        let mut rng = seed::rng(4, &[]);
        let n = 100_000;
        let clear = (0..n).filter(|_| dist.sample(&mut rng).is_clear()).count();
        let expected = (1.0f64 - 0.0741).powi(9);
        assert!((clear as f64 / n as f64 - expected).abs() < 0.01);
    }

    #[test]
    fn mcar_injection_rates() {
        let mut rng = seed::rng(5, &[]);
        let data = Dataset::new(9, vec![0.0; 27_000], vec![0.0; 3000]).unwrap();
        assert_eq!(
            inject_mcar(data.clone(), 0.0, &mut rng).missing_fraction(),
            0.0
        );
        assert_eq!(
            inject_mcar(data.clone(), 1.0, &mut rng).missing_fraction(),
            1.0
        );
        let frac = inject_mcar(data, 0.1, &mut rng).missing_fraction();
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn self_censoring_counts() {
        let schema = FeatureSchema::continuous(1);
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        let data = Dataset::new(1, x.clone(), vec![0.0; 100]).unwrap();
        let censored = inject_mnar_self_censor(data.clone(), 0.9, &schema).unwrap();
        let flagged: Vec<f64> = (0..100)
            .filter(|&i| censored.is_missing(i, 0))
            .map(|i| x[i])
            .collect();
        assert_eq!(flagged, (91..=100).map(f64::from).collect::<Vec<_>>());

        let edge = inject_mnar_self_censor(data.clone(), 1.0 - 1.0 / 100.0, &schema).unwrap();
        assert!(edge.missing_fraction() * 100.0 <= 1.0);

        let again = inject_mnar_self_censor(data, 0.9, &schema).unwrap();
        assert_eq!(again.missing, censored.missing);
    }

    #[test]
    fn pattern_counts_and_order() {
        assert_eq!(enumerate_patterns(9, 3).unwrap().len(), 130);
        assert_eq!(enumerate_patterns(5, 0).unwrap(), vec![Mask::zeros(5)]);
        let all = enumerate_patterns(3, 3).unwrap();
        let names: Vec<String> = all.iter().map(Mask::to_string).collect();
        assert_eq!(
            names,
            vec!["000", "001", "010", "100", "011", "101", "110", "111"]
        );
        for d in 0..8 {
            for k in 0..=d {
                let p = enumerate_patterns(d, k).unwrap();
                let expected: usize = (0..=k).map(|j| binom(d, j)).sum();
                assert_eq!(p.len(), expected);
                let mut dedup = p.clone();
                dedup.sort();
                dedup.dedup();
                assert_eq!(dedup.len(), p.len());
            }
        }
        assert!(enumerate_patterns(2, 3).is_err());
    }

    #[test]
    fn mask_strings() {
        let m: Mask = "010000000".parse().unwrap();
        assert_eq!(m.popcount(), 1);
        assert_eq!(m.to_string(), "010000000");
        assert!("01x".parse::<Mask>().is_err());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "\"010000000\"");
    }
}
