//! Training methods compared in the experiments, and the frozen predictors
//! they produce.
//!
//! Every method trains the same dense network; they differ only in how
//! training inputs are prepared and how missing test entries are filled.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::augment::{close_over_groups, merge_in_place, ObservedMode};
use crate::baselines::{
    check_dropout_rate, dropout_augment, fit_imputer, mean_mode_fill, Imputer, ImputerKind,
    DEFAULT_KNN_K,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::missingness::{calibrate_rate, Mask, MaskDistribution};
use crate::nn::{self, BatchInputs, MaskGranularity, Model, NetworkSpec, OutputHead, TrainConfig};
use crate::schema::{FeatureKind, FeatureSchema, FittedSchema};
use crate::seed::Rng;

pub const DEFAULT_P_CLEAN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

impl Task {
    pub fn output_width(&self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification { n_classes } => *n_classes,
        }
    }

    fn head(&self) -> OutputHead {
        match self {
            Task::Regression => OutputHead::Linear,
            Task::Classification { .. } => OutputHead::Logits,
        }
    }

    pub fn check_labels(&self, y: &[f64]) -> Result<()> {
        if let Task::Classification { n_classes } = self {
            if let Some(bad) = y
                .iter()
                .find(|&&v| v.fract() != 0.0 || v < 0.0 || v >= *n_classes as f64)
            {
                return Err(Error::InvalidParameter(format!(
                    "label {bad} is not a class index in 0..{n_classes}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Derived placeholders; observed missingness handled per the regime.
    Knockout,
    /// Knockout with mean/mode placeholders.
    KnockoutStar,
    /// Knockout that treats all observed missingness as MCAR.
    KnockoutMinus,
    /// No augmentation; mean/mode fill for missing training entries and at
    /// inference.
    CommonBaseline,
    /// As the common baseline, but fills with the knockout placeholders at
    /// inference.
    CommonBaselineXbar,
    ZeroIndicator,
    Knn,
    LinReg,
    Dropout,
    /// One network per evaluated pattern, trained on the observed columns.
    FittedMarginals,
}

impl MethodKind {
    pub fn is_knockout(&self) -> bool {
        matches!(
            self,
            MethodKind::Knockout | MethodKind::KnockoutStar | MethodKind::KnockoutMinus
        )
    }
}

/// Per-method settings. Only the fields that apply to a kind may be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub kind: MethodKind,
    /// Knockout rate per mask group; exclusive with `p_clean`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Probability that no group is knocked out; sets the rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_clean: Option<f64>,
    /// Knockout placeholder for z-scored unbounded features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placeholder: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_granularity: Option<MaskGranularity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Dropout probability; defaults to the calibrated knockout rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<bool>,
}

impl MethodSpec {
    pub fn new(name: impl Into<String>, kind: MethodKind) -> Self {
        Self {
            name: name.into(),
            kind,
            rate: None,
            p_clean: None,
            placeholder: None,
            mask_granularity: None,
            k: None,
            dropout_rate: None,
            rescale: None,
        }
    }

    /// Checks field applicability; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, msg: String| Err(Error::Config(format!("{}.{f}: {msg}", self.name)));
        let uses_rate = self.kind.is_knockout() || self.kind == MethodKind::Dropout;
        if self.rate.is_some() && self.p_clean.is_some() {
            return field("rate", "set either rate or p_clean, not both".into());
        }
        if !uses_rate && (self.rate.is_some() || self.p_clean.is_some()) {
            let f = if self.rate.is_some() {
                "rate"
            } else {
                "p_clean"
            };
            return field(f, format!("not used by {:?}", self.kind));
        }
        if let Some(r) = self.rate {
            if !(0.0..=1.0).contains(&r) {
                return field("rate", format!("{r} outside [0, 1]"));
            }
        }
        if let Some(p) = self.p_clean {
            if !(p > 0.0 && p < 1.0) {
                return field("p_clean", format!("{p} outside (0, 1)"));
            }
        }
        if self.placeholder.is_some()
            && !matches!(
                self.kind,
                MethodKind::Knockout | MethodKind::KnockoutMinus | MethodKind::CommonBaselineXbar
            )
        {
            return field("placeholder", format!("not used by {:?}", self.kind));
        }
        if let Some(v) = self.placeholder {
            if !v.is_finite() {
                return field("placeholder", "must be finite".into());
            }
        }
        if self.mask_granularity.is_some() && !self.kind.is_knockout() {
            return field("mask_granularity", format!("not used by {:?}", self.kind));
        }
        match self.k {
            Some(_) if self.kind != MethodKind::Knn => {
                return field("k", "only used by knn".into())
            }
            Some(0) => return field("k", "must be at least 1".into()),
            _ => {}
        }
        if (self.dropout_rate.is_some() || self.rescale.is_some())
            && self.kind != MethodKind::Dropout
        {
            let f = if self.dropout_rate.is_some() {
                "dropout_rate"
            } else {
                "rescale"
            };
            return field(f, "only used by dropout".into());
        }
        if let Some(r) = self.dropout_rate {
            if check_dropout_rate(r).is_err() {
                return field("dropout_rate", format!("{r} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Rate per mask group for a schema with `groups` mask groups.
    pub fn knockout_rate(&self, groups: usize) -> Result<f64> {
        match (self.rate, self.p_clean) {
            (Some(r), _) => Ok(r),
            (None, p) => calibrate_rate(groups, p.unwrap_or(DEFAULT_P_CLEAN)),
        }
    }
}

/// Network shape shared by all methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSettings {
    pub hidden: Vec<usize>,
}

impl Default for NetSettings {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
        }
    }
}

/// How missing entries are filled before the network sees a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputFill {
    /// Fixed per-feature values in normalized coordinates.
    Values {
        values: Vec<f64>,
    },
    Imputer {
        imputer: Imputer,
    },
}

impl InputFill {
    fn fill(&self, rows: &mut [f64], missing: &[bool]) -> Result<()> {
        match self {
            InputFill::Values { values } => {
                let d = values.len();
                for (r, m) in rows.chunks_mut(d).zip(missing.chunks(d)) {
                    for j in 0..d {
                        if m[j] {
                            r[j] = values[j];
                        }
                    }
                }
                Ok(())
            }
            InputFill::Imputer { imputer } => imputer.impute_rows(rows, missing),
        }
    }

    fn indicator(&self) -> bool {
        matches!(self, InputFill::Imputer { imputer } if imputer.appends_indicator())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PatternModel {
    Net {
        columns: Vec<usize>,
        model: Model,
    },
    /// Prediction with nothing observed: the training mean or class
    /// frequencies.
    Constant {
        output: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PredictorBody {
    Net {
        fill: InputFill,
        model: Model,
    },
    /// Keyed by pattern bit string.
    PerPattern {
        models: BTreeMap<String, PatternModel>,
    },
}

/// A frozen method: normalization, fill rule and network(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub version: u32,
    pub method: String,
    pub kind: MethodKind,
    pub task: Task,
    pub fitted: FittedSchema,
    pub body: PredictorBody,
}

impl Predictor {
    pub fn d(&self) -> usize {
        self.fitted.schema.len()
    }

    /// Predictions for raw rows with every `pattern` entry hidden: one value
    /// per row for regression, class probabilities for classification.
    pub fn predict(&self, raw: &[f64], n: usize, pattern: &Mask) -> Result<Vec<f64>> {
        let d = self.d();
        if raw.len() != n * d {
            return Err(Error::LengthMismatch {
                expected: n * d,
                actual: raw.len(),
            });
        }
        if pattern.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                actual: pattern.len(),
            });
        }
        let mut rows = raw.to_vec();
        for r in rows.chunks_mut(d) {
            self.fitted.stats.apply_in_place(r)?;
        }
        match &self.body {
            PredictorBody::Net { fill, model } => {
                let missing: Vec<bool> = (0..n)
                    .flat_map(|_| pattern.bits().iter().copied())
                    .collect();
                fill.fill(&mut rows, &missing)?;
                let mut inputs = Vec::with_capacity(n * model.spec.input_width());
                for (r, m) in rows.chunks(d).zip(missing.chunks(d)) {
                    encode(
                        &self.fitted.schema,
                        r,
                        fill.indicator().then_some(m),
                        &mut inputs,
                    );
                }
                nn::predict(&model.spec, &model.params, &inputs, n)
            }
            PredictorBody::PerPattern { models } => {
                let key = pattern.to_string();
                let pm = models.get(&key).ok_or_else(|| {
                    Error::Eval(format!("{}: no model for pattern {key}", self.method))
                })?;
                match pm {
                    PatternModel::Constant { output } => {
                        Ok((0..n).flat_map(|_| output.iter().copied()).collect())
                    }
                    PatternModel::Net { columns, model } => {
                        let sub = sub_schema(&self.fitted.schema, columns)?;
                        let mut inputs = Vec::with_capacity(n * model.spec.input_width());
                        let mut picked = Vec::with_capacity(columns.len());
                        for r in rows.chunks(d) {
                            picked.clear();
                            picked.extend(columns.iter().map(|&c| r[c]));
                            encode(&sub, &picked, None, &mut inputs);
                        }
                        nn::predict(&model.spec, &model.params, &inputs, n)
                    }
                }
            }
        }
    }
}

fn encode(schema: &FeatureSchema, row: &[f64], indicator: Option<&[bool]>, out: &mut Vec<f64>) {
    schema.encode_into(row, out);
    if let Some(m) = indicator {
        out.extend(m.iter().map(|&b| f64::from(u8::from(b))));
    }
}

fn sub_schema(schema: &FeatureSchema, columns: &[usize]) -> Result<FeatureSchema> {
    let features = columns
        .iter()
        .map(|&c| {
            let mut f = schema.features[c].clone();
            if let FeatureKind::StructuredGroup { .. } = f.kind {
                f.kind = FeatureKind::ContinuousUnbounded;
            }
            f
        })
        .collect();
    Ok(FeatureSchema::new(features)?
        .with_encoding(schema.categorical_encoding)
        .with_zscore_magnitude(schema.zscore_magnitude)?)
}

enum Augmentation {
    None,
    Knockout {
        dist: MaskDistribution,
        policy: crate::schema::PlaceholderPolicy,
        mode: ObservedMode,
    },
    Dropout {
        rate: f64,
        rescale: bool,
    },
}

/// Normalized, pre-filled training rows plus the augmentation applied per
/// batch.
struct TrainingInputs<'a> {
    schema: &'a FeatureSchema,
    rows: Vec<f64>,
    observed: Option<Vec<bool>>,
    indicator: bool,
    aug: Augmentation,
    has_groups: bool,
}

impl BatchInputs for TrainingInputs<'_> {
    fn n_rows(&self) -> usize {
        self.rows.len() / self.schema.len()
    }

    fn input_width(&self) -> usize {
        self.schema.encoded_width() + if self.indicator { self.schema.len() } else { 0 }
    }

    fn fill(
        &self,
        rows: &[usize],
        granularity: MaskGranularity,
        rng: &mut Rng,
        out: &mut Vec<f64>,
    ) {
        let d = self.schema.len();
        let clear = vec![false; d];
        let mut row = vec![0.0; d];
        let mut mask = vec![false; d];
        if let (Augmentation::Knockout { dist, .. }, MaskGranularity::PerBatch) =
            (&self.aug, granularity)
        {
            self.draw(dist, rng, &mut mask);
        }
        for &r in rows {
            row.copy_from_slice(&self.rows[r * d..(r + 1) * d]);
            let n = self
                .observed
                .as_ref()
                .map_or(&clear[..], |o| &o[r * d..(r + 1) * d]);
            match &self.aug {
                Augmentation::None => {}
                Augmentation::Knockout { dist, policy, mode } => {
                    if granularity == MaskGranularity::PerSample {
                        self.draw(dist, rng, &mut mask);
                    }
                    merge_in_place(&mut row, n, &mask, *mode, policy);
                }
                Augmentation::Dropout { rate, rescale } => {
                    dropout_augment(&mut row, *rate, *rescale, rng)
                }
            }
            encode(self.schema, &row, self.indicator.then_some(n), out);
        }
    }
}

impl TrainingInputs<'_> {
    fn draw(&self, dist: &MaskDistribution, rng: &mut Rng, mask: &mut [bool]) {
        dist.sample_into(rng, mask);
        if self.has_groups {
            let closed = close_over_groups(&Mask::from_bits(mask.to_vec()), self.schema)
                .expect("mask width matches schema");
            mask.copy_from_slice(closed.bits());
        }
    }
}

/// Everything a method needs to train.
pub struct FitContext<'a> {
    pub task: Task,
    pub fitted: &'a FittedSchema,
    /// Raw training rows; `missing` is the observed mask `N`.
    pub train: &'a Dataset,
    /// How the regime's observed missingness should be read by Knockout;
    /// `None` when the training data is complete.
    pub observed_mode: Option<ObservedMode>,
    pub net: &'a NetSettings,
    pub train_config: &'a TrainConfig,
    /// Patterns evaluated later; used by fitted marginals.
    pub patterns: &'a [Mask],
}

pub struct Fitted {
    pub predictor: Predictor,
    /// Loss traces, labelled by sub-model (empty label for single networks).
    pub traces: Vec<(String, Vec<(usize, f64)>)>,
}

/// Trains one method.
pub fn fit_method(spec: &MethodSpec, ctx: &FitContext) -> Result<Fitted> {
    spec.validate()?;
    let schema = &ctx.fitted.schema;
    let d = schema.len();
    let train = ctx.train;
    if train.d != d {
        return Err(Error::LengthMismatch {
            expected: d,
            actual: train.d,
        });
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ctx.task.check_labels(&train.y)?;
    let missing = train.missing.as_deref();
    let mut rows = train.x.clone();
    for r in rows.chunks_mut(d) {
        ctx.fitted.stats.apply_in_place(r)?;
    }
    let means = mean_mode_fill(schema, &rows, missing)?;
    let policy = &ctx.fitted.policy;
    let groups = schema.mask_groups();
    let has_groups = groups.iter().any(|g| g.len() > 1);
    let knockout_dist = |spec: &MethodSpec| -> Result<MaskDistribution> {
        let rate = spec.knockout_rate(groups.len())?;
        if has_groups {
            MaskDistribution::grouped(d, groups.clone(), rate)
        } else {
            MaskDistribution::iid(d, rate)
        }
    };
    let xbar = |spec: &MethodSpec| match spec.placeholder {
        Some(v) => policy.with_zscore_knockout(schema, v),
        None => Ok(policy.clone()),
    };
    let regime_mode = ctx.observed_mode.unwrap_or(ObservedMode::Mcar);
    let mut config = ctx.train_config.clone();
    if let Some(g) = spec.mask_granularity {
        config.mask_granularity = g;
    }

    // (training augmentation, fill of missing training entries, test fill)
    let (aug, pre_fill, test_fill) = match spec.kind {
        MethodKind::Knockout | MethodKind::KnockoutMinus => {
            let p = xbar(spec)?;
            let mode = if spec.kind == MethodKind::Knockout {
                regime_mode
            } else {
                ObservedMode::Mcar
            };
            let test = InputFill::Values {
                values: p.knockout_values().to_vec(),
            };
            (
                Augmentation::Knockout {
                    dist: knockout_dist(spec)?,
                    policy: p,
                    mode,
                },
                None,
                test,
            )
        }
        MethodKind::KnockoutStar => {
            let p = star_policy(policy, &means)?;
            (
                Augmentation::Knockout {
                    dist: knockout_dist(spec)?,
                    policy: p,
                    mode: ObservedMode::Mcar,
                },
                None,
                InputFill::Values {
                    values: means.clone(),
                },
            )
        }
        MethodKind::CommonBaseline => {
            let fill = InputFill::Values {
                values: means.clone(),
            };
            (Augmentation::None, Some(fill.clone()), fill)
        }
        MethodKind::CommonBaselineXbar => {
            let p = xbar(spec)?;
            (
                Augmentation::None,
                Some(InputFill::Values {
                    values: means.clone(),
                }),
                InputFill::Values {
                    values: p.knockout_values().to_vec(),
                },
            )
        }
        MethodKind::ZeroIndicator | MethodKind::Knn | MethodKind::LinReg => {
            let kind = match spec.kind {
                MethodKind::ZeroIndicator => ImputerKind::ZeroIndicator,
                MethodKind::Knn => ImputerKind::Knn {
                    k: spec.k.unwrap_or(DEFAULT_KNN_K),
                },
                _ => ImputerKind::LinReg,
            };
            let imputer = fit_imputer(kind, schema, &rows, missing)?;
            let fill = InputFill::Imputer { imputer };
            (Augmentation::None, Some(fill.clone()), fill)
        }
        MethodKind::Dropout => {
            let rate = match spec.dropout_rate {
                Some(r) => r,
                None => spec.knockout_rate(d)?,
            };
            let zeros = InputFill::Values {
                values: vec![0.0; d],
            };
            (
                Augmentation::Dropout {
                    rate,
                    rescale: spec.rescale.unwrap_or(false),
                },
                Some(zeros.clone()),
                zeros,
            )
        }
        MethodKind::FittedMarginals => return fit_marginals(spec, ctx, &rows),
    };

    let observed = match (&aug, missing) {
        (Augmentation::Knockout { .. }, Some(m)) => Some(m.to_vec()),
        _ => None,
    };
    let indicator = test_fill.indicator();
    let mut rows = rows;
    if let (Some(fill), Some(m)) = (&pre_fill, missing) {
        fill.fill(&mut rows, m)?;
    }
    let inputs = TrainingInputs {
        schema,
        rows,
        observed: observed.clone(),
        indicator,
        aug,
        has_groups,
    };
    // the indicator baseline sees N at training time
    let inputs = if indicator {
        TrainingInputs {
            observed: Some(missing.map_or_else(|| vec![false; train.x.len()], <[bool]>::to_vec)),
            ..inputs
        }
    } else {
        inputs
    };
    let net = NetworkSpec::new(
        inputs.input_width(),
        &ctx.net.hidden,
        ctx.task.output_width(),
        ctx.task.head(),
    )?;
    let result = nn::train(&net, &config, &inputs, &train.y)?;
    Ok(Fitted {
        predictor: Predictor {
            version: nn::MODEL_VERSION,
            method: spec.name.clone(),
            kind: spec.kind,
            task: ctx.task,
            fitted: ctx.fitted.clone(),
            body: PredictorBody::Net {
                fill: test_fill,
                model: Model::new(net, result.params),
            },
        },
        traces: vec![(String::new(), result.trace)],
    })
}

/// Knockout* placeholders: mean/mode for induced missingness. The
/// observed-missing slot is unused (merged as MCAR) but must stay distinct.
fn star_policy(
    policy: &crate::schema::PlaceholderPolicy,
    means: &[f64],
) -> Result<crate::schema::PlaceholderPolicy> {
    let observed: Vec<f64> = policy
        .observed_values()
        .iter()
        .zip(means)
        .map(|(&o, &m)| if o == m { m + 1.0 } else { o })
        .collect();
    crate::schema::PlaceholderPolicy::new(means.to_vec(), observed, policy.zscore_magnitude)
}

fn fit_marginals(spec: &MethodSpec, ctx: &FitContext, rows: &[f64]) -> Result<Fitted> {
    let schema = &ctx.fitted.schema;
    let d = schema.len();
    let train = ctx.train;
    let missing = train.missing.as_deref();
    let mut models = BTreeMap::new();
    let mut traces = Vec::new();
    for pattern in ctx.patterns {
        let key = pattern.to_string();
        if models.contains_key(&key) {
            continue;
        }
        let columns = pattern.observed_indices();
        if columns.is_empty() {
            models.insert(
                key,
                PatternModel::Constant {
                    output: constant_output(ctx.task, &train.y),
                },
            );
            continue;
        }
        let sub = sub_schema(schema, &columns)?;
        let keep: Vec<usize> = (0..train.len())
            .filter(|&i| {
                !columns
                    .iter()
                    .any(|&c| missing.is_some_and(|m| m[i * d + c]))
            })
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let picked: Vec<f64> = keep
            .iter()
            .flat_map(|&i| columns.iter().map(move |&c| rows[i * d + c]))
            .collect();
        let y: Vec<f64> = keep.iter().map(|&i| train.y[i]).collect();
        let inputs = TrainingInputs {
            schema: &sub,
            rows: picked,
            observed: None,
            indicator: false,
            aug: Augmentation::None,
            has_groups: false,
        };
        let net = NetworkSpec::new(
            inputs.input_width(),
            &ctx.net.hidden,
            ctx.task.output_width(),
            ctx.task.head(),
        )?;
        let result = nn::train(&net, ctx.train_config, &inputs, &y)?;
        traces.push((key.clone(), result.trace));
        models.insert(
            key,
            PatternModel::Net {
                columns,
                model: Model::new(net, result.params),
            },
        );
    }
    Ok(Fitted {
        predictor: Predictor {
            version: nn::MODEL_VERSION,
            method: spec.name.clone(),
            kind: spec.kind,
            task: ctx.task,
            fitted: ctx.fitted.clone(),
            body: PredictorBody::PerPattern { models },
        },
        traces,
    })
}

fn constant_output(task: Task, y: &[f64]) -> Vec<f64> {
    match task {
        Task::Regression => vec![y.iter().sum::<f64>() / y.len() as f64],
        Task::Classification { n_classes } => {
            let mut counts = vec![0.0; n_classes];
            for &v in y {
                counts[v as usize] += 1.0;
            }
            counts.iter().map(|c| c / y.len() as f64).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::synth::GaussianWorld;

    fn setup() -> (GaussianWorld, Dataset, FittedSchema) {
        let world = GaussianWorld::sample(4, &mut seed::rng(1, &[]));
        let train = world.draw_dataset(400, &mut seed::rng(2, &[])).unwrap();
        let fitted = FittedSchema::fit(&world.schema(), &train.x, None).unwrap();
        (world, train, fitted)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            steps: 200,
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn spec_validation_names_fields() {
        let mut s = MethodSpec::new("cb", MethodKind::CommonBaseline);
        s.k = Some(3);
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("cb.k"), "{err}");
        let mut s = MethodSpec::new("ko", MethodKind::Knockout);
        s.rate = Some(0.1);
        s.p_clean = Some(0.5);
        assert!(s.validate().is_err());
        s.p_clean = None;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn every_method_trains_and_predicts() {
        let (_, train, fitted) = setup();
        let patterns = crate::missingness::enumerate_patterns(3, 1).unwrap();
        let net = NetSettings { hidden: vec![8] };
        let config = quick();
        let ctx = FitContext {
            task: Task::Regression,
            fitted: &fitted,
            train: &train,
            observed_mode: None,
            net: &net,
            train_config: &config,
            patterns: &patterns,
        };
        for kind in [
            MethodKind::Knockout,
            MethodKind::KnockoutStar,
            MethodKind::KnockoutMinus,
            MethodKind::CommonBaseline,
            MethodKind::CommonBaselineXbar,
            MethodKind::ZeroIndicator,
            MethodKind::Knn,
            MethodKind::LinReg,
            MethodKind::Dropout,
            MethodKind::FittedMarginals,
        ] {
            let fitted = fit_method(&MethodSpec::new("m", kind), &ctx).unwrap();
            for p in &patterns {
                let out = fitted.predictor.predict(&train.x[..30], 10, p).unwrap();
                assert_eq!(out.len(), 10, "{kind:?}");
                assert!(out.iter().all(|v| v.is_finite()));
            }
            let json = serde_json::to_string(&fitted.predictor).unwrap();
            let back: Predictor = serde_json::from_str(&json).unwrap();
            assert_eq!(back, fitted.predictor);
        }
    }

    #[test]
    fn knockout_fill_is_placeholder() {
        let (_, train, fitted) = setup();
        let net = NetSettings { hidden: vec![4] };
        let config = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let ctx = FitContext {
            task: Task::Regression,
            fitted: &fitted,
            train: &train,
            observed_mode: None,
            net: &net,
            train_config: &config,
            patterns: &[],
        };
        let mut spec = MethodSpec::new("ko", MethodKind::Knockout);
        spec.placeholder = Some(4.0);
        let f = fit_method(&spec, &ctx).unwrap();
        let PredictorBody::Net {
            fill: InputFill::Values { values },
            ..
        } = &f.predictor.body
        else {
            panic!("unexpected body");
        };
        assert_eq!(values, &vec![4.0; 3]);
    }

    #[test]
    fn star_policy_substitutes_means() {
        let (_, train, fitted) = setup();
        let mut rows = train.x.clone();
        for r in rows.chunks_mut(3) {
            fitted.stats.apply_in_place(r).unwrap();
        }
        let means = mean_mode_fill(&fitted.schema, &rows, None).unwrap();
        let p = star_policy(&fitted.policy, &means).unwrap();
        assert_eq!(p.knockout_values(), &means[..]);
        assert!(means.iter().all(|m| m.abs() < 1e-12));
    }
}
