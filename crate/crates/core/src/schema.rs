//! Feature descriptions, normalization and placeholder derivation.
//!
//! Every input column has a [`FeatureKind`] that fixes how it is normalized
//! and which placeholder marks it as knocked out. Placeholders live in
//! normalized coordinates: bounded features are scaled into `[0, 1]` (or
//! `[0, inf)`) so that `-1` is outside the support, unbounded scalars are
//! z-scored and use `+/- zscore_magnitude`, and structured groups use the
//! zero vector (the mean after z-scoring).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ZSCORE_MAGNITUDE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Support is `[bound, inf)`.
    Lower,
    /// Support is `(-inf, bound]`.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Integer codes `1..=n_classes`.
    Categorical {
        n_classes: usize,
    },
    ContinuousBounded {
        lo: f64,
        hi: f64,
    },
    ContinuousHalfBounded {
        bound: f64,
        side: Side,
    },
    ContinuousUnbounded,
    /// One scalar column of a jointly missing block. Every member column
    /// carries the same `members` list (0-based column indices).
    StructuredGroup {
        dim: usize,
        members: Vec<usize>,
    },
}

impl FeatureKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }

    pub fn is_continuous(&self) -> bool {
        !self.is_categorical()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    pub fn new(name: impl Into<String>, kind: FeatureKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// How categorical codes are presented to the network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalEncoding {
    /// One-hot of width `n + 2`: the `n` classes, then one slot for the
    /// knockout placeholder (code `n + 1`) and one for the observed-missing
    /// placeholder (code `n + 2`).
    #[default]
    ExtraClass,
    /// One-hot of width `n + 1`: the knockout placeholder is code `0`, which
    /// encodes as all zeros; the observed-missing placeholder keeps an
    /// extra slot (code `n + 1`).
    ZeroOneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<Feature>,
    /// Partition of column indices used by grouped mask sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub categorical_encoding: CategoricalEncoding,
    #[serde(default = "default_magnitude")]
    pub zscore_magnitude: f64,
}

fn default_magnitude() -> f64 {
    DEFAULT_ZSCORE_MAGNITUDE
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let schema = Self {
            features,
            groups: None,
            categorical_encoding: CategoricalEncoding::default(),
            zscore_magnitude: DEFAULT_ZSCORE_MAGNITUDE,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// `d` unbounded continuous features named `x1..xd`.
    pub fn continuous(d: usize) -> Self {
        let features = (0..d)
            .map(|i| Feature::new(format!("x{}", i + 1), FeatureKind::ContinuousUnbounded))
            .collect();
        Self::new(features).expect("unbounded features are always valid")
    }

    pub fn with_groups(mut self, groups: Vec<Vec<usize>>) -> Result<Self> {
        self.groups = Some(groups);
        self.validate()?;
        Ok(self)
    }

    pub fn with_encoding(mut self, encoding: CategoricalEncoding) -> Self {
        self.categorical_encoding = encoding;
        self
    }

    pub fn with_zscore_magnitude(mut self, magnitude: f64) -> Result<Self> {
        self.zscore_magnitude = magnitude;
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.features.len();
        if d == 0 {
            return Err(Error::InvalidSchema("schema has no features".into()));
        }
        if !(self.zscore_magnitude.is_finite() && self.zscore_magnitude > 0.0) {
            return Err(Error::InvalidSchema(format!(
                "zscore_magnitude must be positive, got {}",
                self.zscore_magnitude
            )));
        }
        for (i, f) in self.features.iter().enumerate() {
            match &f.kind {
                FeatureKind::Categorical { n_classes } if *n_classes < 2 => {
                    return Err(Error::InvalidSchema(format!(
                        "{}: categorical needs at least 2 classes",
                        f.name
                    )));
                }
                FeatureKind::ContinuousBounded { lo, hi } if !(lo < hi) => {
                    return Err(Error::InvalidSchema(format!(
                        "{}: bounded support needs lo < hi, got [{lo}, {hi}]",
                        f.name
                    )));
                }
                FeatureKind::ContinuousHalfBounded { bound, .. } if !bound.is_finite() => {
                    return Err(Error::InvalidSchema(format!(
                        "{}: bound must be finite",
                        f.name
                    )));
                }
                FeatureKind::StructuredGroup { dim, members } => {
                    let distinct: BTreeSet<_> = members.iter().copied().collect();
                    if *dim == 0 || members.len() != *dim || distinct.len() != *dim {
                        return Err(Error::InvalidSchema(format!(
                            "{}: structured group needs {dim} distinct members, got {members:?}",
                            f.name
                        )));
                    }
                    if !distinct.contains(&i) {
                        return Err(Error::InvalidSchema(format!(
                            "{}: structured group does not list its own column {i}",
                            f.name
                        )));
                    }
                    for &m in members {
                        if m >= d || self.features[m].kind != f.kind {
                            return Err(Error::InvalidSchema(format!(
                                "{}: group member {m} is missing or disagrees on the group",
                                f.name
                            )));
                        }
                    }
                }
                _ => {}
            }
        }
        if let Some(groups) = &self.groups {
            let mut seen = vec![false; d];
            for g in groups {
                if g.is_empty() {
                    return Err(Error::InvalidSchema("empty group".into()));
                }
                for &i in g {
                    if i >= d || seen[i] {
                        return Err(Error::InvalidSchema(format!(
                            "groups are not a partition of 0..{d}: index {i}"
                        )));
                    }
                    seen[i] = true;
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::InvalidSchema(format!(
                    "groups do not cover every column 0..{d}"
                )));
            }
        }
        Ok(())
    }

    /// Groups used for grouped knockout: the declared partition, or
    /// singletons with structured groups kept together.
    pub fn mask_groups(&self) -> Vec<Vec<usize>> {
        if let Some(groups) = &self.groups {
            return groups.clone();
        }
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut taken = vec![false; self.len()];
        for (i, f) in self.features.iter().enumerate() {
            if taken[i] {
                continue;
            }
            match &f.kind {
                FeatureKind::StructuredGroup { members, .. } => {
                    let mut g = members.clone();
                    g.sort_unstable();
                    for &m in &g {
                        taken[m] = true;
                    }
                    out.push(g);
                }
                _ => {
                    taken[i] = true;
                    out.push(vec![i]);
                }
            }
        }
        out
    }

    /// Width of the network input after categorical expansion.
    pub fn encoded_width(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Categorical { n_classes } => match self.categorical_encoding {
                    CategoricalEncoding::ExtraClass => n_classes + 2,
                    CategoricalEncoding::ZeroOneHot => n_classes + 1,
                },
                _ => 1,
            })
            .sum()
    }

    pub fn has_categorical(&self) -> bool {
        self.features.iter().any(|f| f.kind.is_categorical())
    }

    /// Appends the network encoding of a normalized row to `out`.
    pub fn encode_into(&self, row: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(row.len(), self.len());
        if !self.has_categorical() {
            out.extend_from_slice(row);
            return;
        }
        for (f, &v) in self.features.iter().zip(row) {
            match f.kind {
                FeatureKind::Categorical { n_classes } => {
                    let width = match self.categorical_encoding {
                        CategoricalEncoding::ExtraClass => n_classes + 2,
                        CategoricalEncoding::ZeroOneHot => n_classes + 1,
                    };
                    let start = out.len();
                    out.resize(start + width, 0.0);
                    let code = v.round() as i64;
                    // Codes outside the encodable range stay all-zero.
                    if code >= 1 && (code as usize) <= width {
                        out[start + code as usize - 1] = 1.0;
                    }
                }
                _ => out.push(v),
            }
        }
    }

    /// Checks that every observed categorical entry is a valid class code.
    pub fn check_row(&self, row: &[f64], missing: Option<&[bool]>) -> Result<()> {
        if row.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: row.len(),
            });
        }
        for (i, (f, &v)) in self.features.iter().zip(row).enumerate() {
            if missing.is_some_and(|m| m[i]) {
                continue;
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("feature {}", f.name)));
            }
            if let FeatureKind::Categorical { n_classes } = f.kind {
                if v.fract() != 0.0 || v < 1.0 || v > n_classes as f64 {
                    return Err(Error::InvalidSchema(format!(
                        "{}: {v} is not a class code in 1..={n_classes}",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Normalization {
    Zscore { mean: f64, std: f64 },
    Scale01 { lo: f64, hi: f64 },
    Scale0inf { shift: f64, side: Side },
    None,
}

impl Normalization {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Normalization::Zscore { mean, std } => (x - mean) / std,
            Normalization::Scale01 { lo, hi } => (x - lo) / (hi - lo),
            Normalization::Scale0inf { shift, side } => match side {
                Side::Lower => x - shift,
                Side::Upper => shift - x,
            },
            Normalization::None => x,
        }
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        match *self {
            Normalization::Zscore { mean, std } => z * std + mean,
            Normalization::Scale01 { lo, hi } => z * (hi - lo) + lo,
            Normalization::Scale0inf { shift, side } => match side {
                Side::Lower => z + shift,
                Side::Upper => shift - z,
            },
            Normalization::None => z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub features: Vec<Normalization>,
}

impl NormalizationStats {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_len(row.len())?;
        Ok(row
            .iter()
            .zip(&self.features)
            .map(|(&x, n)| n.apply(x))
            .collect())
    }

    pub fn apply_in_place(&self, row: &mut [f64]) -> Result<()> {
        self.check_len(row.len())?;
        for (x, n) in row.iter_mut().zip(&self.features) {
            *x = n.apply(*x);
        }
        Ok(())
    }

    pub fn denormalize(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_len(row.len())?;
        Ok(row
            .iter()
            .zip(&self.features)
            .map(|(&z, n)| n.invert(z))
            .collect())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.features.len() {
            return Err(Error::LengthMismatch {
                expected: self.features.len(),
                actual: len,
            });
        }
        Ok(())
    }
}

/// Fits per-feature normalization on a row-major `n x d` matrix.
///
/// Entries flagged in `missing` are excluded from the statistics. The
/// standard deviation is the population estimator (divide by `n`).
pub fn fit_normalization(
    schema: &FeatureSchema,
    rows: &[f64],
    missing: Option<&[bool]>,
) -> Result<NormalizationStats> {
    let d = schema.len();
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() % d != 0 {
        return Err(Error::Shape(format!(
            "{} values is not a multiple of {d} features",
            rows.len()
        )));
    }
    if let Some(m) = missing {
        if m.len() != rows.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                actual: m.len(),
            });
        }
    }
    let n = rows.len() / d;
    let mut out = Vec::with_capacity(d);
    for (j, f) in schema.features.iter().enumerate() {
        let column = (0..n)
            .filter(|&r| !missing.is_some_and(|m| m[r * d + j]))
            .map(|r| rows[r * d + j]);
        let norm = match &f.kind {
            FeatureKind::Categorical { .. } => {
                if column.count() == 0 {
                    return Err(empty(j, f));
                }
                Normalization::None
            }
            FeatureKind::ContinuousBounded { lo, hi } => {
                if column.count() == 0 {
                    return Err(empty(j, f));
                }
                Normalization::Scale01 { lo: *lo, hi: *hi }
            }
            FeatureKind::ContinuousHalfBounded { bound, side } => {
                if column.count() == 0 {
                    return Err(empty(j, f));
                }
                Normalization::Scale0inf {
                    shift: *bound,
                    side: *side,
                }
            }
            FeatureKind::ContinuousUnbounded | FeatureKind::StructuredGroup { .. } => {
                let (count, mean, m2) =
                    column.fold((0usize, 0.0f64, 0.0f64), |(c, mean, m2), x| {
                        // Welford update
                        let c = c + 1;
                        let delta = x - mean;
                        let mean = mean + delta / c as f64;
                        (c, mean, m2 + delta * (x - mean))
                    });
                if count == 0 {
                    return Err(empty(j, f));
                }
                let std = (m2 / count as f64).sqrt();
                if !(std > 0.0) || std <= mean.abs() * 1e-14 {
                    return Err(Error::ConstantFeature {
                        index: j,
                        name: f.name.clone(),
                    });
                }
                Normalization::Zscore { mean, std }
            }
        };
        out.push(norm);
    }
    Ok(NormalizationStats { features: out })
}

fn empty(index: usize, f: &Feature) -> Error {
    Error::EmptyColumn {
        index,
        name: f.name.clone(),
    }
}

/// Placeholder values in normalized coordinates.
///
/// `knockout` (x-bar) replaces induced-missing entries and entries missing
/// completely at random; `observed` (x-dot) replaces entries whose
/// missingness depends on the data. The two must differ for every feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceholderPolicy {
    knockout: Vec<f64>,
    observed: Vec<f64>,
    pub zscore_magnitude: f64,
}

impl PlaceholderPolicy {
    pub fn new(knockout: Vec<f64>, observed: Vec<f64>, zscore_magnitude: f64) -> Result<Self> {
        let policy = Self {
            knockout,
            observed,
            zscore_magnitude,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.knockout.len() != self.observed.len() {
            return Err(Error::LengthMismatch {
                expected: self.knockout.len(),
                actual: self.observed.len(),
            });
        }
        for (i, (a, b)) in self.knockout.iter().zip(&self.observed).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Placeholder(format!(
                    "feature {i}: non-finite placeholder"
                )));
            }
            if a == b {
                return Err(Error::Placeholder(format!(
                    "feature {i}: observed-missing placeholder equals knockout placeholder ({a})"
                )));
            }
        }
        Ok(())
    }

    pub fn knockout_values(&self) -> &[f64] {
        &self.knockout
    }

    pub fn observed_values(&self) -> &[f64] {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.knockout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knockout.is_empty()
    }

    /// Replaces the knockout placeholders, keeping the observed-missing ones.
    pub fn with_knockout_values(&self, knockout: Vec<f64>) -> Result<Self> {
        Self::new(knockout, self.observed.clone(), self.zscore_magnitude)
    }

    /// Sets the knockout placeholder of every z-scored scalar to `value`.
    pub fn with_zscore_knockout(&self, schema: &FeatureSchema, value: f64) -> Result<Self> {
        let mut knockout = self.knockout.clone();
        for (i, f) in schema.features.iter().enumerate() {
            if matches!(f.kind, FeatureKind::ContinuousUnbounded) {
                knockout[i] = value;
            }
        }
        self.with_knockout_values(knockout)
    }
}

/// Derives `x-bar` and `x-dot` for every feature from its kind.
///
/// | kind                    | x-bar          | x-dot          |
/// |-------------------------|----------------|----------------|
/// | categorical (extra)     | `n + 1`        | `n + 2`        |
/// | categorical (zero)      | `0`            | `n + 1`        |
/// | bounded / half-bounded  | `-1`           | `-2`           |
/// | unbounded (z-score)     | `+magnitude`   | `-magnitude`   |
/// | structured group        | `0`            | `-magnitude`   |
pub fn derive_placeholders(
    schema: &FeatureSchema,
    stats: &NormalizationStats,
) -> Result<PlaceholderPolicy> {
    if stats.len() != schema.len() {
        return Err(Error::LengthMismatch {
            expected: schema.len(),
            actual: stats.len(),
        });
    }
    let mag = schema.zscore_magnitude;
    let mut knockout = Vec::with_capacity(schema.len());
    let mut observed = Vec::with_capacity(schema.len());
    for (f, norm) in schema.features.iter().zip(&stats.features) {
        let (xbar, xdot) = match (&f.kind, norm) {
            (FeatureKind::Categorical { n_classes }, Normalization::None) => {
                let n = *n_classes as f64;
                match schema.categorical_encoding {
                    CategoricalEncoding::ExtraClass => (n + 1.0, n + 2.0),
                    CategoricalEncoding::ZeroOneHot => (0.0, n + 1.0),
                }
            }
            (FeatureKind::ContinuousBounded { .. }, Normalization::Scale01 { .. })
            | (FeatureKind::ContinuousHalfBounded { .. }, Normalization::Scale0inf { .. }) => {
                (-1.0, -2.0)
            }
            (FeatureKind::ContinuousUnbounded, Normalization::Zscore { .. }) => (mag, -mag),
            (FeatureKind::StructuredGroup { .. }, Normalization::Zscore { .. }) => (0.0, -mag),
            (kind, norm) => {
                return Err(Error::InvalidSchema(format!(
                    "{}: normalization {norm:?} does not fit kind {kind:?}",
                    f.name
                )))
            }
        };
        knockout.push(xbar);
        observed.push(xdot);
    }
    PlaceholderPolicy::new(knockout, observed, mag)
}

/// Schema with fitted statistics and derived placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSchema {
    pub schema: FeatureSchema,
    pub stats: NormalizationStats,
    pub policy: PlaceholderPolicy,
}

impl FittedSchema {
    pub fn fit(schema: &FeatureSchema, rows: &[f64], missing: Option<&[bool]>) -> Result<Self> {
        schema.validate()?;
        let stats = fit_normalization(schema, rows, missing)?;
        let policy = derive_placeholders(schema, &stats)?;
        Ok(Self {
            schema: schema.clone(),
            stats,
            policy,
        })
    }

    /// Per-feature mean (continuous) or mode (categorical) in normalized
    /// coordinates, over observed entries of `rows`.
    pub fn mean_mode(&self, rows: &[f64], missing: Option<&[bool]>) -> Result<Vec<f64>> {
        mean_mode(&self.schema, &self.stats, rows, missing)
    }
}

pub(crate) fn mean_mode(
    schema: &FeatureSchema,
    stats: &NormalizationStats,
    rows: &[f64],
    missing: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let d = schema.len();
    let n = rows.len() / d;
    let mut out = Vec::with_capacity(d);
    for (j, f) in schema.features.iter().enumerate() {
        let values: Vec<f64> = (0..n)
            .filter(|&r| !missing.is_some_and(|m| m[r * d + j]))
            .map(|r| stats.features[j].apply(rows[r * d + j]))
            .collect();
        if values.is_empty() {
            return Err(empty(j, f));
        }
        let v = match f.kind {
            FeatureKind::Categorical { n_classes } => {
                let mut counts = vec![0usize; n_classes + 1];
                for v in &values {
                    let c = (v.round() as usize).min(n_classes);
                    counts[c] += 1;
                }
                // lowest code wins ties
                let best =
                    (1..=n_classes).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
                best.unwrap_or(1) as f64
            }
            _ => values.iter().sum::<f64>() / values.len() as f64,
        };
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(kind: FeatureKind) -> FeatureSchema {
        FeatureSchema::new(vec![Feature::new("f", kind)]).unwrap()
    }

    #[test]
    fn zscore_fit_uses_population_std() {
        let s = one(FeatureKind::ContinuousUnbounded);
        let stats = fit_normalization(&s, &[1.0, 2.0, 3.0], None).unwrap();
        match stats.features[0] {
            Normalization::Zscore { mean, std } => {
                assert!((mean - 2.0).abs() < 1e-15);
                assert!((std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scale01_bounds() {
        let s = one(FeatureKind::ContinuousBounded { lo: 0.0, hi: 10.0 });
        let stats = fit_normalization(&s, &[0.0, 10.0], None).unwrap();
        assert_eq!(
            stats.features[0],
            Normalization::Scale01 { lo: 0.0, hi: 10.0 }
        );
        assert_eq!(stats.apply(&[10.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn constant_feature_is_rejected() {
        let s = one(FeatureKind::ContinuousUnbounded);
        let err = fit_normalization(&s, &[5.0, 5.0, 5.0], None).unwrap_err();
        assert!(
            matches!(err, Error::ConstantFeature { index: 0, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("constant feature"));
    }

    #[test]
    fn missing_entries_are_excluded() {
        let s = one(FeatureKind::ContinuousUnbounded);
        let stats =
            fit_normalization(&s, &[1.0, 3.0, 1000.0], Some(&[false, false, true])).unwrap();
        assert_eq!(
            stats.features[0],
            Normalization::Zscore {
                mean: 2.0,
                std: 1.0
            }
        );
        let err = fit_normalization(&s, &[1.0, 3.0], Some(&[true, true])).unwrap_err();
        assert!(matches!(err, Error::EmptyColumn { .. }));
    }

    #[test]
    fn zscore_apply() {
        let stats = NormalizationStats {
            features: vec![Normalization::Zscore {
                mean: 2.0,
                std: 1.0,
            }],
        };
        assert_eq!(stats.apply(&[2.0]).unwrap(), vec![0.0]);
        assert!(matches!(
            stats.apply(&[1.0, 2.0]),
            Err(Error::LengthMismatch {
                expected: 1,
                actual: 2
            })
        ));
    }

    #[test]
    fn placeholders_follow_kind_table() {
        let schema = FeatureSchema::new(vec![
            Feature::new("cat", FeatureKind::Categorical { n_classes: 10 }),
            Feature::new(
                "score",
                FeatureKind::ContinuousBounded { lo: 0.0, hi: 100.0 },
            ),
            Feature::new(
                "temp",
                FeatureKind::ContinuousHalfBounded {
                    bound: -273.15,
                    side: Side::Lower,
                },
            ),
            Feature::new("noise", FeatureKind::ContinuousUnbounded),
        ])
        .unwrap();
        let rows = [1.0, 10.0, 0.0, -1.0, 10.0, 90.0, 20.0, 1.0];
        let fitted = FittedSchema::fit(&schema, &rows, None).unwrap();
        assert_eq!(fitted.policy.knockout_values(), &[11.0, -1.0, -1.0, 10.0]);
        assert_eq!(fitted.policy.observed_values(), &[12.0, -2.0, -2.0, -10.0]);
    }

    #[test]
    fn structured_group_placeholder_is_zero() {
        let kind = FeatureKind::StructuredGroup {
            dim: 2,
            members: vec![0, 1],
        };
        let schema = FeatureSchema::new(vec![
            Feature::new("z1", kind.clone()),
            Feature::new("z2", kind),
            Feature::new("x", FeatureKind::ContinuousUnbounded),
        ])
        .unwrap();
        let rows = [0.0, 1.0, 2.0, 1.0, 3.0, 5.0];
        let fitted = FittedSchema::fit(&schema, &rows, None).unwrap();
        assert_eq!(fitted.policy.knockout_values(), &[0.0, 0.0, 10.0]);
        assert_eq!(schema.mask_groups(), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn schema_invariants() {
        assert!(FeatureSchema::new(vec![Feature::new(
            "c",
            FeatureKind::Categorical { n_classes: 1 }
        )])
        .is_err());
        assert!(FeatureSchema::new(vec![Feature::new(
            "b",
            FeatureKind::ContinuousBounded { lo: 1.0, hi: 1.0 }
        )])
        .is_err());
        let dup = FeatureKind::StructuredGroup {
            dim: 2,
            members: vec![0, 0],
        };
        assert!(FeatureSchema::new(vec![Feature::new("g", dup)]).is_err());
        let s = FeatureSchema::continuous(3);
        assert!(s.clone().with_groups(vec![vec![0, 1], vec![2]]).is_ok());
        assert!(s.clone().with_groups(vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(s.with_groups(vec![vec![0, 1]]).is_err());
    }

    #[test]
    fn equal_placeholders_are_rejected() {
        let err = PlaceholderPolicy::new(vec![10.0, 1.0], vec![-10.0, 1.0], 10.0).unwrap_err();
        assert!(matches!(err, Error::Placeholder(_)));
    }

    #[test]
    fn categorical_encoding_widths() {
        let schema = FeatureSchema::new(vec![
            Feature::new("c", FeatureKind::Categorical { n_classes: 3 }),
            Feature::new("x", FeatureKind::ContinuousUnbounded),
        ])
        .unwrap();
        assert_eq!(schema.encoded_width(), 6);
        let mut out = Vec::new();
        schema.encode_into(&[2.0, 0.5], &mut out);
        assert_eq!(out, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.5]);
        out.clear();
        schema.encode_into(&[4.0, 0.5], &mut out);
        assert_eq!(out, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.5]);

        let zero = schema
            .clone()
            .with_encoding(CategoricalEncoding::ZeroOneHot);
        assert_eq!(zero.encoded_width(), 5);
        out.clear();
        zero.encode_into(&[0.0, 0.5], &mut out);
        assert_eq!(out, vec![0.0, 0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn mode_breaks_ties_to_lowest_code() {
        let schema = FeatureSchema::new(vec![Feature::new(
            "c",
            FeatureKind::Categorical { n_classes: 3 },
        )])
        .unwrap();
        let fitted = FittedSchema::fit(&schema, &[1.0, 1.0, 2.0], None).unwrap();
        assert_eq!(fitted.mean_mode(&[1.0, 1.0, 2.0], None).unwrap(), vec![1.0]);
        assert_eq!(fitted.mean_mode(&[3.0, 2.0], None).unwrap(), vec![2.0]);
    }
}
