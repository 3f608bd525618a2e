//! The knockout operator `x' = m * xbar + (1 - m) * x` and the rules for
//! combining it with missingness already present in the data.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::missingness::Mask;
use crate::schema::{FeatureKind, FeatureSchema, PlaceholderPolicy};

/// How entries that are missing in the data are encoded during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedMode {
    /// Missingness independent of the data: merged into the knockout mask,
    /// so these entries get `xbar`.
    Mcar,
    /// Missingness that depends on the data: entries get `xdot` unless the
    /// induced mask also knocks them out, in which case `xbar` wins.
    Mnar,
}

/// Tag for an entry missing at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingTag {
    Mcar,
    Mnar,
    /// Treated as `Mcar`, with a warning.
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRow {
    pub values: Vec<f64>,
    pub induced: Mask,
    pub observed: Mask,
}

fn check(len: usize, expected: usize) -> Result<()> {
    if len != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Replaces every knocked-out entry with its placeholder.
pub fn apply_knockout(x: &[f64], m: &Mask, policy: &PlaceholderPolicy) -> Result<Vec<f64>> {
    check(x.len(), policy.len())?;
    check(m.len(), policy.len())?;
    let mut out = x.to_vec();
    knockout_in_place(&mut out, m.bits(), policy.knockout_values());
    Ok(out)
}

#[inline]
pub fn knockout_in_place(row: &mut [f64], m: &[bool], xbar: &[f64]) {
    for ((v, &knocked), &p) in row.iter_mut().zip(m).zip(xbar) {
        if knocked {
            *v = p;
        }
    }
}

/// Extends a mask so that knocking any member of a structured group knocks
/// the whole group.
pub fn close_over_groups(m: &Mask, schema: &FeatureSchema) -> Result<Mask> {
    check(m.len(), schema.len())?;
    let mut bits = m.bits().to_vec();
    for (i, f) in schema.features.iter().enumerate() {
        if let FeatureKind::StructuredGroup { members, .. } = &f.kind {
            if members.iter().any(|&j| m.get(j)) {
                bits[i] = true;
            }
        }
    }
    Ok(Mask::from_bits(bits))
}

/// Combines the induced mask `m` with the observed mask `n`.
///
/// With no observed missingness the mode may be omitted.
pub fn merge_observed(
    x: &[f64],
    n: &Mask,
    m: &Mask,
    mode: Option<ObservedMode>,
    policy: &PlaceholderPolicy,
) -> Result<Vec<f64>> {
    check(x.len(), policy.len())?;
    check(n.len(), policy.len())?;
    check(m.len(), policy.len())?;
    let mode = match mode {
        Some(mode) => mode,
        None if n.is_clear() => ObservedMode::Mcar,
        None => return Err(Error::MissingObservedMode),
    };
    let mut out = x.to_vec();
    merge_in_place(&mut out, n.bits(), m.bits(), mode, policy);
    Ok(out)
}

#[inline]
pub fn merge_in_place(
    row: &mut [f64],
    n: &[bool],
    m: &[bool],
    mode: ObservedMode,
    policy: &PlaceholderPolicy,
) {
    let xbar = policy.knockout_values();
    let xdot = policy.observed_values();
    for i in 0..row.len() {
        if m[i] {
            row[i] = xbar[i];
        } else if n[i] {
            row[i] = match mode {
                ObservedMode::Mcar => xbar[i],
                ObservedMode::Mnar => xdot[i],
            };
        }
    }
}

pub fn augment_row(
    x: &[f64],
    n: &Mask,
    m: &Mask,
    mode: Option<ObservedMode>,
    policy: &PlaceholderPolicy,
) -> Result<AugmentedRow> {
    Ok(AugmentedRow {
        values: merge_observed(x, n, m, mode, policy)?,
        induced: m.clone(),
        observed: n.clone(),
    })
}

static UNTAGGED_WARNED: AtomicBool = AtomicBool::new(false);

/// Fills entries missing at inference: `xbar` for MCAR-tagged entries,
/// `xdot` for MNAR-tagged ones.
pub fn fill_for_inference(
    x: &[f64],
    tags: &[Option<MissingTag>],
    policy: &PlaceholderPolicy,
) -> Result<Vec<f64>> {
    check(x.len(), policy.len())?;
    check(tags.len(), policy.len())?;
    let mut out = x.to_vec();
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            None => {}
            Some(MissingTag::Mcar) => out[i] = policy.knockout_values()[i],
            Some(MissingTag::Mnar) => out[i] = policy.observed_values()[i],
            Some(MissingTag::Unknown) => {
                if !UNTAGGED_WARNED.swap(true, Ordering::Relaxed) {
                    log::warn!("untagged missing entry; using the knockout placeholder");
                }
                out[i] = policy.knockout_values()[i];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy(xbar: &[f64]) -> PlaceholderPolicy {
        let xdot = xbar.iter().map(|v| -v - 1.0).collect();
        PlaceholderPolicy::new(xbar.to_vec(), xdot, 10.0).unwrap()
    }

    fn mask(s: &str) -> Mask {
        s.parse().unwrap()
    }

    #[test]
    fn knockout_definition() {
        let p = policy(&[10.0, 10.0]);
        assert_eq!(
            apply_knockout(&[0.3, 0.7], &mask("10"), &p).unwrap(),
            vec![10.0, 0.7]
        );
        assert_eq!(
            apply_knockout(&[0.3, 0.7], &mask("00"), &p).unwrap(),
            vec![0.3, 0.7]
        );
        assert_eq!(
            apply_knockout(&[0.3, 0.7], &mask("11"), &p).unwrap(),
            vec![10.0, 10.0]
        );
        assert!(apply_knockout(&[0.3], &mask("11"), &p).is_err());
    }

    #[test]
    fn mcar_merge_uses_union() {
        let p = policy(&[10.0, 10.0]);
        let out = merge_observed(
            &[0.3, 0.7],
            &mask("10"),
            &mask("01"),
            Some(ObservedMode::Mcar),
            &p,
        )
        .unwrap();
        assert_eq!(out, vec![10.0, 10.0]);
    }

    #[test]
    fn mnar_merge_uses_dual_placeholder() {
        let p = PlaceholderPolicy::new(vec![10.0, 10.0], vec![-10.0, -10.0], 10.0).unwrap();
        let x = [0.3, 0.7];
        let out =
            merge_observed(&x, &mask("10"), &mask("00"), Some(ObservedMode::Mnar), &p).unwrap();
        assert_eq!(out, vec![-10.0, 0.7]);
        // knockout overrides the observed placeholder
        let out =
            merge_observed(&x, &mask("10"), &mask("10"), Some(ObservedMode::Mnar), &p).unwrap();
        assert_eq!(out, vec![10.0, 0.7]);
    }

    #[test]
    fn mode_is_required_for_nonzero_observed_mask() {
        let p = policy(&[10.0, 10.0]);
        assert!(matches!(
            merge_observed(&[0.0, 0.0], &mask("01"), &mask("00"), None, &p),
            Err(Error::MissingObservedMode)
        ));
        assert!(merge_observed(&[0.0, 0.0], &mask("00"), &mask("01"), None, &p).is_ok());
    }

    #[test]
    fn groups_are_knocked_together() {
        let kind = FeatureKind::StructuredGroup {
            dim: 2,
            members: vec![0, 1],
        };
        let schema = FeatureSchema::new(vec![
            crate::schema::Feature::new("a", kind.clone()),
            crate::schema::Feature::new("b", kind),
            crate::schema::Feature::new("c", FeatureKind::ContinuousUnbounded),
        ])
        .unwrap();
        assert_eq!(
            close_over_groups(&mask("100"), &schema).unwrap(),
            mask("110")
        );
        assert_eq!(
            close_over_groups(&mask("001"), &schema).unwrap(),
            mask("001")
        );
    }

    #[test]
    fn inference_tags() {
        let p = PlaceholderPolicy::new(vec![10.0, 10.0, 10.0], vec![-10.0; 3], 10.0).unwrap();
        let out = fill_for_inference(
            &[1.0, 2.0, 3.0],
            &[
                Some(MissingTag::Mcar),
                Some(MissingTag::Mnar),
                Some(MissingTag::Unknown),
            ],
            &p,
        )
        .unwrap();
        assert_eq!(out, vec![10.0, -10.0, 10.0]);
    }

    fn row_and_masks() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<bool>)> {
        (1usize..8).prop_flat_map(|d| {
            (
                proptest::collection::vec(-5.0f64..5.0, d),
                proptest::collection::vec(any::<bool>(), d),
                proptest::collection::vec(any::<bool>(), d),
            )
        })
    }

    proptest! {
        #[test]
        fn knockout_is_idempotent((x, m, _n) in row_and_masks()) {
            let p = policy(&vec![10.0; x.len()]);
            let m = Mask::from_bits(m);
            let once = apply_knockout(&x, &m, &p).unwrap();
            let twice = apply_knockout(&once, &m, &p).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn mcar_merge_is_knockout_with_union((x, m, n) in row_and_masks()) {
            let p = policy(&vec![10.0; x.len()]);
            let (m, n) = (Mask::from_bits(m), Mask::from_bits(n));
            let merged = merge_observed(&x, &n, &m, Some(ObservedMode::Mcar), &p).unwrap();
            let union = apply_knockout(&x, &n.union(&m).unwrap(), &p).unwrap();
            prop_assert_eq!(merged, union);
        }

        #[test]
        fn augmented_row_invariant((x, m, n) in row_and_masks()) {
            let p = policy(&vec![10.0; x.len()]);
            let (m, n) = (Mask::from_bits(m), Mask::from_bits(n));
            let row = augment_row(&x, &n, &m, Some(ObservedMode::Mnar), &p).unwrap();
            for i in 0..x.len() {
                let expected = if m.get(i) {
                    p.knockout_values()[i]
                } else if n.get(i) {
                    p.observed_values()[i]
                } else {
                    x[i]
                };
                prop_assert_eq!(row.values[i], expected);
            }
        }
    }
}
