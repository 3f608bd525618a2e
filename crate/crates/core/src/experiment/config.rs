use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::ObservedMode;
use crate::error::{Error, Result};
use crate::methods::{MethodSpec, NetSettings, Task};
use crate::missingness::MissingnessMechanism;
use crate::nn::{AdamConfig, MaskGranularity, TrainConfig};
use crate::schema::{CategoricalEncoding, Feature, FeatureSchema, PlaceholderPolicy};
use crate::synth::DEFAULT_BINS;

/// One experiment, read from a TOML file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Output directory; relative paths resolve against the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// One repetition per seed, each with a fresh world.
    pub seeds: Vec<u64>,
    /// Largest number of simultaneously missing features evaluated.
    pub k_max: usize,
    /// Write train/test CSVs next to the models.
    #[serde(default = "yes")]
    pub save_data: bool,
    pub world: WorldSpec,
    #[serde(default, skip_serializing_if = "SchemaOverrides::is_empty")]
    pub schema: SchemaOverrides,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<RegimeSpec>,
    pub methods: Vec<MethodSpec>,
}

fn yes() -> bool {
    true
}

fn default_regimes() -> Vec<RegimeSpec> {
    vec![RegimeSpec::complete()]
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldSpec {
    /// Random Gaussian over `dim` variables; the last is the target.
    Gaussian {
        dim: usize,
        n_train: usize,
        n_test: usize,
    },
    Continuous2d {
        n_train: usize,
        n_test: usize,
        /// Histogram bins for the empirical marginals.
        #[serde(default = "default_bins")]
        bins: usize,
    },
    Mixed {
        n_train: usize,
        n_test: usize,
        #[serde(default = "default_bins")]
        bins: usize,
    },
    /// Fixed data; the last CSV column is the target. Paths are relative
    /// to the config file.
    Csv {
        train: PathBuf,
        test: PathBuf,
        task: Task,
        features: Vec<Feature>,
    },
}

impl WorldSpec {
    pub fn task(&self) -> Task {
        match self {
            WorldSpec::Gaussian { .. } => Task::Regression,
            WorldSpec::Continuous2d { .. } | WorldSpec::Mixed { .. } => {
                Task::Classification { n_classes: 2 }
            }
            WorldSpec::Csv { task, .. } => *task,
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            WorldSpec::Gaussian { dim, .. } => dim.saturating_sub(1),
            WorldSpec::Continuous2d { .. } | WorldSpec::Mixed { .. } => 2,
            WorldSpec::Csv { features, .. } => features.len(),
        }
    }
}

/// Adjustments to the derived schema and placeholders.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zscore_magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categorical_encoding: Option<CategoricalEncoding>,
    /// Structured groups knocked out jointly (0-based columns).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    /// Explicit knockout placeholders in normalized coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knockout: Option<Vec<f64>>,
    /// Explicit observed-missing placeholders in normalized coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<Vec<f64>>,
}

impl SchemaOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply_to_schema(&self, mut schema: FeatureSchema) -> Result<FeatureSchema> {
        if let Some(m) = self.zscore_magnitude {
            schema = schema.with_zscore_magnitude(m)?;
        }
        if let Some(e) = self.categorical_encoding {
            schema = schema.with_encoding(e);
        }
        if let Some(g) = &self.groups {
            schema = schema.with_groups(g.clone())?;
        }
        Ok(schema)
    }

    pub fn apply_to_policy(&self, policy: &PlaceholderPolicy) -> Result<PlaceholderPolicy> {
        if self.knockout.is_none() && self.observed.is_none() {
            return Ok(policy.clone());
        }
        let knockout = self
            .knockout
            .clone()
            .unwrap_or_else(|| policy.knockout_values().to_vec());
        let observed = self
            .observed
            .clone()
            .unwrap_or_else(|| policy.observed_values().to_vec());
        PlaceholderPolicy::new(knockout, observed, policy.zscore_magnitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub mask_granularity: MaskGranularity,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.adam.learning_rate,
            hidden: NetSettings::default().hidden,
            mask_granularity: t.mask_granularity,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig::new(self.learning_rate),
            steps: self.steps,
            batch_size: self.batch_size,
            seed,
            mask_granularity: self.mask_granularity,
            loss: None,
        }
    }

    pub fn net(&self) -> NetSettings {
        NetSettings {
            hidden: self.hidden.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismName {
    Mcar,
    MnarSelfCensor,
}

/// A training-data regime: the clean data, optionally with missingness
/// injected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MechanismName>,
    /// MCAR probability per entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// MNAR censoring quantile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile: Option<f64>,
    /// How Knockout reads the data's missing entries. Defaults to the
    /// mechanism's own nature, or MCAR for missingness already in the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<ObservedMode>,
}

impl RegimeSpec {
    pub fn complete() -> Self {
        Self {
            name: "complete".into(),
            mechanism: None,
            p: None,
            quantile: None,
            observed: None,
        }
    }

    pub fn mcar(p: f64) -> Self {
        Self {
            name: "mcar".into(),
            mechanism: Some(MechanismName::Mcar),
            p: Some(p),
            ..Self::complete()
        }
    }

    pub fn mnar(quantile: f64) -> Self {
        Self {
            name: "mnar".into(),
            mechanism: Some(MechanismName::MnarSelfCensor),
            quantile: Some(quantile),
            ..Self::complete()
        }
    }

    pub fn to_mechanism(&self) -> Result<Option<MissingnessMechanism>> {
        let field =
            |f: &str, msg: &str| Err(Error::Config(format!("regimes.{}.{f}: {msg}", self.name)));
        let m = match (self.mechanism, self.p, self.quantile) {
            (None, None, None) => return Ok(None),
            (None, _, _) => return field("mechanism", "p or quantile given without a mechanism"),
            (Some(MechanismName::Mcar), Some(p), None) => MissingnessMechanism::Mcar { p },
            (Some(MechanismName::Mcar), None, _) => return field("p", "required for mcar"),
            (Some(MechanismName::Mcar), Some(_), Some(_)) => {
                return field("quantile", "not used by mcar")
            }
            (Some(MechanismName::MnarSelfCensor), None, Some(quantile)) => {
                MissingnessMechanism::MnarSelfCensor { quantile }
            }
            (Some(MechanismName::MnarSelfCensor), _, None) => {
                return field("quantile", "required for mnar_self_censor")
            }
            (Some(MechanismName::MnarSelfCensor), Some(_), Some(_)) => {
                return field("p", "not used by mnar_self_censor")
            }
        };
        m.validate()
            .map_err(|e| Error::Config(format!("regimes.{}: {e}", self.name)))?;
        Ok(Some(m))
    }

    /// Observed-missingness handling for training data that has missing
    /// entries.
    pub fn observed_mode(&self) -> ObservedMode {
        self.observed.unwrap_or(match self.mechanism {
            Some(MechanismName::MnarSelfCensor) => ObservedMode::Mnar,
            _ => ObservedMode::Mcar,
        })
    }
}

fn check_name(kind: &str, name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{kind} name {name:?} must be non-empty and use only letters, digits, '_', '-' or '.'"
        )))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses and validates a config file; CSV paths are made relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let WorldSpec::Csv { train, test, .. } = &mut config.world {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [train, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        config
            .validate()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        check_name("experiment", &self.name)?;
        if self.seeds.is_empty() {
            return cfg("seeds: at least one seed is required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return cfg("seeds: duplicate seed".into());
        }
        match &self.world {
            WorldSpec::Gaussian {
                dim,
                n_train,
                n_test,
            } => {
                if *dim < 2 {
                    return cfg(format!("world.dim: need at least 2 variables, got {dim}"));
                }
                if *n_train == 0 || *n_test == 0 {
                    return cfg("world: n_train and n_test must be positive".into());
                }
            }
            WorldSpec::Continuous2d {
                n_train,
                n_test,
                bins,
            }
            | WorldSpec::Mixed {
                n_train,
                n_test,
                bins,
            } => {
                if *n_train == 0 || *n_test == 0 {
                    return cfg("world: n_train and n_test must be positive".into());
                }
                if *bins == 0 {
                    return cfg("world.bins: must be positive".into());
                }
            }
            WorldSpec::Csv {
                train,
                test,
                task,
                features,
            } => {
                for (f, p) in [("train", train), ("test", test)] {
                    if !p.is_file() {
                        return cfg(format!("world.{f}: {} does not exist", p.display()));
                    }
                }
                if let Task::Classification { n_classes } = task {
                    if *n_classes < 2 {
                        return cfg("world.task.n_classes: need at least 2 classes".into());
                    }
                }
                FeatureSchema::new(features.clone())
                    .map_err(|e| Error::Config(format!("world.features: {e}")))?;
            }
        }
        let d = self.world.n_inputs();
        if self.k_max > d {
            return cfg(format!(
                "k_max: {} exceeds the {d} input features",
                self.k_max
            ));
        }
        for (field, v) in [
            ("knockout", &self.schema.knockout),
            ("observed", &self.schema.observed),
        ] {
            if let Some(v) = v {
                if v.len() != d {
                    return cfg(format!(
                        "schema.{field}: {} values for {d} features",
                        v.len()
                    ));
                }
            }
        }
        if let (Some(k), Some(o)) = (&self.schema.knockout, &self.schema.observed) {
            PlaceholderPolicy::new(k.clone(), o.clone(), 0.0)
                .map_err(|e| Error::Config(format!("schema: {e}")))?;
        }
        if let Some(m) = self.schema.zscore_magnitude {
            if !(m > 0.0 && m.is_finite()) {
                return cfg(format!("schema.zscore_magnitude: {m} must be positive"));
            }
        }
        let t = &self.train;
        if t.steps == 0 {
            return cfg("train.steps: must be positive".into());
        }
        if t.batch_size == 0 {
            return cfg("train.batch_size: must be positive".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return cfg(format!(
                "train.learning_rate: {} must be positive",
                t.learning_rate
            ));
        }
        if t.hidden.contains(&0) {
            return cfg("train.hidden: layer widths must be positive".into());
        }
        if self.regimes.is_empty() {
            return cfg("regimes: at least one regime is required".into());
        }
        let mut names = BTreeSet::new();
        for r in &self.regimes {
            check_name("regime", &r.name)?;
            if !names.insert(&r.name) {
                return cfg(format!("regimes: duplicate name {:?}", r.name));
            }
            r.to_mechanism()?;
        }
        if self.methods.is_empty() {
            return cfg("methods: at least one method is required".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.methods {
            check_name("method", &m.name)?;
            if !names.insert(&m.name) {
                return cfg(format!("methods: duplicate name {:?}", m.name));
            }
            m.validate().map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("methods.{msg}")),
                other => other,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::MethodKind;

    const FULL: &str = r#"
name = "fig1"
seeds = [0, 1, 2]
k_max = 3

[world]
type = "gaussian"
dim = 10
n_train = 3000
n_test = 3000

[schema]
zscore_magnitude = 10.0

[train]
steps = 5000
batch_size = 128
learning_rate = 0.003
hidden = [100, 100]
mask_granularity = "per_batch"

[[regimes]]
name = "complete"

[[regimes]]
name = "mcar"
mechanism = "mcar"
p = 0.1

[[regimes]]
name = "mnar"
mechanism = "mnar_self_censor"
quantile = 0.9

[[methods]]
name = "knockout"
kind = "knockout"

[[methods]]
name = "knockout_star"
kind = "knockout_star"

[[methods]]
name = "knn"
kind = "knn"
k = 5
"#;

    #[test]
    fn parses_and_round_trips() {
        let a = ExperimentConfig::from_toml_str(FULL).unwrap();
        assert_eq!(a.regimes.len(), 3);
        assert_eq!(a.methods[2].kind, MethodKind::Knn);
        assert_eq!(
            a.regimes[2].to_mechanism().unwrap(),
            Some(MissingnessMechanism::MnarSelfCensor { quantile: 0.9 })
        );
        let text = a.to_toml_string().unwrap();
        let b = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(text, b.to_toml_string().unwrap());
    }

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_toml_str(
            "name = \"m\"\nseeds = [0]\nk_max = 1\n[world]\ntype = \"gaussian\"\ndim = 10\nn_train = 10\nn_test = 10\n[[methods]]\nname = \"k\"\nkind = \"knockout\"\n",
        )
        .unwrap();
        assert_eq!(c.regimes, vec![RegimeSpec::complete()]);
        assert_eq!(c.train, TrainSettings::default());
        assert!(c.save_data);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = FULL.replace("k = 5", "kk = 5");
        let err = ExperimentConfig::from_toml_str(&text)
            .unwrap_err()
            .to_string();
        assert!(err.contains("kk"), "{err}");
        assert!(err.contains("line"), "{err}");
        let text = FULL.replace("steps = 5000", "stepz = 5000");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let check = |from: &str, to: &str, needle: &str| {
            let err = ExperimentConfig::from_toml_str(&FULL.replace(from, to))
                .unwrap_err()
                .to_string();
            assert!(err.contains(needle), "{err}");
        };
        check("k_max = 3", "k_max = 12", "k_max");
        check("name = \"knn\"", "name = \"knockout\"", "duplicate");
        check("p = 0.1", "p = 1.5", "mcar");
        check("k = 5", "k = 0", "knn.k");
        check("quantile = 0.9", "", "quantile");
        check(
            "zscore_magnitude = 10.0",
            "knockout = [1.0,1,1,1,1,1,1,1,1]\nobserved = [1.0,2,2,2,2,2,2,2,2]",
            "placeholder",
        );
    }

    #[test]
    fn csv_paths_resolve_against_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tr.csv"), "a,y\n1,2\n").unwrap();
        std::fs::write(dir.path().join("te.csv"), "a,y\n1,2\n").unwrap();
        let text = r#"
name = "c"
seeds = [0]
k_max = 1
[world]
type = "csv"
train = "tr.csv"
test = "te.csv"
task = { type = "regression" }
features = [{ name = "a", kind = { type = "continuous_unbounded" } }]
[[methods]]
name = "k"
kind = "knockout"
"#;
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        match c.world {
            WorldSpec::Csv { train, .. } => assert_eq!(train, dir.path().join("tr.csv")),
            _ => unreachable!(),
        }
        std::fs::write(&path, text.replace("te.csv", "nope.csv")).unwrap();
        assert!(ExperimentConfig::load(&path)
            .unwrap_err()
            .to_string()
            .contains("world.test"));
    }
}
