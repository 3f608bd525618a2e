use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, WorldSpec};
use crate::augment::ObservedMode;
use crate::data::{write_bytes, Dataset};
use crate::error::{Error, Result};
use crate::eval::{run_pattern_sweep, writer, Reference, SweepInput, SweepReport};
use crate::methods::{fit_method, FitContext, MethodKind, MethodSpec, Predictor, Task};
use crate::missingness::{enumerate_patterns, Mask};
use crate::nn::MODEL_VERSION;
use crate::schema::{FeatureKind, FeatureSchema, FittedSchema};
use crate::seed;
use crate::synth::{
    empirical_conditional, Binning, ClassWorld, EmpiricalConditional, GaussianWorld,
};

pub const REPORT_CSV: &str = "report.csv";
pub const AGGREGATES_JSON: &str = "aggregates.json";
pub const PLOTDATA_CSV: &str = "plotdata.csv";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const CONFIG_TOML: &str = "config.toml";
pub const ABLATION_CSV: &str = "ablation.csv";

#[derive(Debug, Clone)]
enum World {
    Gaussian(GaussianWorld),
    Class(ClassWorld),
    Fixed,
}

struct Regime {
    name: String,
    train: Dataset,
    fitted: FittedSchema,
    observed_mode: Option<ObservedMode>,
}

/// Everything one repetition needs, before training.
struct Repetition {
    seed: u64,
    world: World,
    names: Vec<String>,
    test: Dataset,
    marginals: Vec<EmpiricalConditional>,
    regimes: Vec<Regime>,
}

impl Repetition {
    fn reference(&self) -> Reference<'_> {
        match &self.world {
            World::Gaussian(w) => Reference::Gaussian(w),
            _ if !self.marginals.is_empty() => Reference::Marginals(&self.marginals),
            _ => Reference::None,
        }
    }
}

fn seed_dir(seed: u64) -> String {
    format!("seed_{seed}")
}

fn model_path(out: &Path, seed: u64, regime: &str, method: &str) -> PathBuf {
    out.join(seed_dir(seed))
        .join(regime)
        .join("models")
        .join(format!("{method}.json"))
}

fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    let mut x = a.x.clone();
    x.extend_from_slice(&b.x);
    let mut y = a.y.clone();
    y.extend_from_slice(&b.y);
    Dataset::new(a.d, x, y)
}

fn base_schema(config: &ExperimentConfig) -> Result<FeatureSchema> {
    let schema = match &config.world {
        WorldSpec::Gaussian { dim, .. } => FeatureSchema::continuous(dim - 1),
        WorldSpec::Continuous2d { .. } => ClassWorld::continuous2d().schema(),
        WorldSpec::Mixed { .. } => ClassWorld::mixed().schema(),
        WorldSpec::Csv { features, .. } => FeatureSchema::new(features.clone())?,
    };
    config.schema.apply_to_schema(schema)
}

fn read_fixed(path: &Path, d: usize) -> Result<Dataset> {
    let (_, data) = Dataset::read_csv(path)?;
    if data.d != d {
        return Err(Error::Config(format!(
            "{}: {} input columns, but {d} features are declared",
            path.display(),
            data.d
        )));
    }
    Ok(data)
}

fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Repetition> {
    let schema = base_schema(config)?;
    let names: Vec<String> = schema.features.iter().map(|f| f.name.clone()).collect();
    let rng = |name: &str| seed::rng(seed, &[seed::tag(name)]);
    let (world, train, test, marginals) = match &config.world {
        WorldSpec::Gaussian {
            dim,
            n_train,
            n_test,
        } => {
            let w = GaussianWorld::sample(*dim, &mut rng("world"));
            let train = w.draw_dataset(*n_train, &mut rng("train"))?;
            let test = w.draw_dataset(*n_test, &mut rng("test"))?;
            (World::Gaussian(w), train, test, Vec::new())
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
            let w = match config.world {
                WorldSpec::Continuous2d { .. } => ClassWorld::continuous2d(),
                _ => ClassWorld::mixed(),
            };
            let train = w.generate(*n_train, &mut rng("train"))?;
            let test = w.generate(*n_test, &mut rng("test"))?;
            // reference marginals come from all generated data
            let pooled = concat(&train, &test)?;
            let marginals = schema
                .features
                .iter()
                .enumerate()
                .map(|(j, f)| {
                    let binning = match f.kind {
                        FeatureKind::Categorical { .. } => Binning::Discrete,
                        _ => Binning::Histogram { bins: *bins },
                    };
                    empirical_conditional(&pooled, j, binning, true)
                })
                .collect::<Result<_>>()?;
            (World::Class(w), train, test, marginals)
        }
        WorldSpec::Csv { train, test, .. } => {
            let d = schema.len();
            let tr = read_fixed(train, d)?;
            let te = read_fixed(test, d)?;
            if te.missing.is_some() {
                return Err(Error::Config(format!(
                    "{}: test rows must be complete; patterns are applied by the sweep",
                    test.display()
                )));
            }
            (World::Fixed, tr, te, Vec::new())
        }
    };
    let task = config.world.task();
    task.check_labels(&train.y)?;
    task.check_labels(&test.y)?;

    let mut regimes = Vec::with_capacity(config.regimes.len());
    for spec in &config.regimes {
        let context = || format!("regime {}, seed {seed}", spec.name);
        let data = match spec.to_mechanism()? {
            Some(m) => m
                .apply(
                    train.clone(),
                    &schema,
                    &mut seed::rng(seed, &[seed::tag("regime"), seed::tag(&spec.name)]),
                )
                .map_err(|e| e.context(context()))?,
            None => train.clone(),
        };
        let mut fitted = FittedSchema::fit(&schema, &data.x, data.missing.as_deref())
            .map_err(|e| e.context(context()))?;
        fitted.policy = config.schema.apply_to_policy(&fitted.policy)?;
        let has_missing = data.missing.as_ref().is_some_and(|m| m.iter().any(|&b| b));
        regimes.push(Regime {
            name: spec.name.clone(),
            observed_mode: has_missing.then(|| spec.observed_mode()),
            train: data,
            fitted,
        });
    }
    Ok(Repetition {
        seed,
        world,
        names,
        test,
        marginals,
        regimes,
    })
}

/// Training seed for one (repetition, regime, method) cell.
pub fn train_seed(seed: u64, regime: &str, method: &str) -> u64 {
    seed::derive(
        seed,
        &[seed::tag("train"), seed::tag(regime), seed::tag(method)],
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let mut text = if pretty {
        serde_json::to_string_pretty(value)?
    } else {
        serde_json::to_string(value)?
    };
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_trace(path: &Path, traces: &[(String, Vec<(usize, f64)>)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "step", "loss"])?;
    for (label, trace) in traces {
        for (step, loss) in trace {
            w.write_record([label.clone(), step.to_string(), crate::data::fmt_f64(*loss)])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_inputs(config: &ExperimentConfig, rep: &Repetition, out: &Path) -> Result<()> {
    let dir = out.join(seed_dir(rep.seed));
    mkdir(&dir)?;
    match &rep.world {
        World::Gaussian(w) => write_json(&dir.join("world.json"), w, true)?,
        World::Class(w) => write_json(&dir.join("world.json"), w, true)?,
        World::Fixed => {}
    }
    if config.save_data {
        rep.test.write_csv(&dir.join("test.csv"), &rep.names)?;
    }
    for r in &rep.regimes {
        let rdir = dir.join(&r.name);
        mkdir(&rdir.join("models"))?;
        mkdir(&rdir.join("loss"))?;
        write_json(&rdir.join("schema.json"), &r.fitted, true)?;
        if config.save_data {
            r.train.write_csv(&rdir.join("train.csv"), &rep.names)?;
            r.train
                .write_mask_csv(&rdir.join("train_mask.csv"), &rep.names)?;
        }
    }
    Ok(())
}

/// Whether to train models or load them from an earlier run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    EvaluateSaved,
}

#[derive(Debug)]
pub struct RunOutput {
    pub out: PathBuf,
    pub report: SweepReport,
    pub manifest: Manifest,
}

fn predictors(
    config: &ExperimentConfig,
    reps: &[Repetition],
    patterns: &[Mask],
    out: &Path,
    mode: Mode,
) -> Result<Vec<Vec<Vec<Predictor>>>> {
    let task = config.world.task();
    let net = config.train.net();
    let jobs: Vec<(usize, usize, &MethodSpec)> = reps
        .iter()
        .enumerate()
        .flat_map(|(i, rep)| {
            (0..rep.regimes.len()).flat_map(move |j| config.methods.iter().map(move |m| (i, j, m)))
        })
        .collect();
    let fitted: Vec<Predictor> = jobs
        .par_iter()
        .map(|&(i, j, m)| {
            let rep = &reps[i];
            let regime = &rep.regimes[j];
            let context = || {
                format!(
                    "method {}, regime {}, seed {}",
                    m.name, regime.name, rep.seed
                )
            };
            let path = model_path(out, rep.seed, &regime.name, &m.name);
            if mode == Mode::EvaluateSaved {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(&path, e).context(context()))?;
                let p: Predictor =
                    serde_json::from_str(&text).map_err(|e| Error::from(e).context(context()))?;
                if p.version != MODEL_VERSION || p.method != m.name {
                    return Err(Error::Config(format!(
                        "{}: not a model for {}",
                        path.display(),
                        m.name
                    )));
                }
                return Ok(p);
            }
            log::info!("training {}", context());
            let train_config =
                config
                    .train
                    .train_config(train_seed(rep.seed, &regime.name, &m.name));
            let ctx = FitContext {
                task,
                fitted: &regime.fitted,
                train: &regime.train,
                observed_mode: regime.observed_mode,
                net: &net,
                train_config: &train_config,
                patterns,
            };
            let f = fit_method(m, &ctx).map_err(|e| e.context(context()))?;
            write_json(&path, &f.predictor, false)?;
            let loss = out
                .join(seed_dir(rep.seed))
                .join(&regime.name)
                .join("loss")
                .join(format!("{}.csv", m.name));
            write_trace(&loss, &f.traces)?;
            Ok(f.predictor)
        })
        .collect::<Result<_>>()?;
    let mut it = fitted.into_iter();
    Ok(reps
        .iter()
        .map(|rep| {
            rep.regimes
                .iter()
                .map(|_| it.by_ref().take(config.methods.len()).collect())
                .collect()
        })
        .collect())
}

/// Runs (or, with [`Mode::EvaluateSaved`], re-evaluates) an experiment and
/// writes every artifact except the manifest.
fn execute(config: &ExperimentConfig, out: &Path, mode: Mode) -> Result<SweepReport> {
    config.validate()?;
    mkdir(out)?;
    let mut saved = config.clone();
    saved.out = None;
    write_bytes(&out.join(CONFIG_TOML), saved.to_toml_string()?.as_bytes())?;

    let d = config.world.n_inputs();
    let patterns = enumerate_patterns(d, config.k_max)?;
    let reps: Vec<Repetition> = config
        .seeds
        .iter()
        .map(|&s| prepare(config, s))
        .collect::<Result<_>>()?;
    for rep in &reps {
        write_inputs(config, rep, out)?;
    }
    let models = predictors(config, &reps, &patterns, out, mode)?;

    let mut results = Vec::new();
    for (rep, per_regime) in reps.iter().zip(&models) {
        for (regime, preds) in rep.regimes.iter().zip(per_regime) {
            log::info!("evaluating regime {}, seed {}", regime.name, rep.seed);
            let refs: Vec<&Predictor> = preds.iter().collect();
            let input = SweepInput {
                regime: &regime.name,
                seed: rep.seed,
                test: &rep.test,
                reference: rep.reference(),
                patterns: &patterns,
            };
            results.extend(run_pattern_sweep(&refs, &input)?);
        }
    }
    let report = SweepReport::new(results);
    report.check_complete(&patterns)?;
    report.write_csv(&out.join(REPORT_CSV))?;
    report.write_aggregates_json(&out.join(AGGREGATES_JSON))?;
    report.write_plotdata(&out.join(PLOTDATA_CSV))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub model_version: u32,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST_JSON) {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under `out` (except the manifest itself) and writes
/// `manifest.json`.
pub fn write_manifest(config: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let mut paths = Vec::new();
    collect_files(out, out, &mut paths)?;
    let mut files = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let rel = p.strip_prefix(out).expect("under out");
        let rel: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        files.push(ManifestEntry {
            path: rel.join("/"),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let config_text =
        std::fs::read(out.join(CONFIG_TOML)).map_err(|e| Error::io(out.join(CONFIG_TOML), e))?;
    let manifest = Manifest {
        tool: "knockout".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        model_version: MODEL_VERSION,
        config_sha256: sha256_hex(&config_text),
        seeds: config.seeds.clone(),
        files,
    };
    write_json(&out.join(MANIFEST_JSON), &manifest, true)?;
    Ok(manifest)
}

/// Generates the worlds, trains every method in every regime and
/// repetition, runs the pattern sweep and writes all artifacts to `out`.
/// Identical configs give byte-identical outputs.
pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    let report = execute(config, out, Mode::Train)?;
    let manifest = write_manifest(config, out)?;
    Ok(RunOutput {
        out: out.to_path_buf(),
        report,
        manifest,
    })
}

/// Re-evaluates the models saved by an earlier [`cmd_run`] in `out`.
pub fn cmd_sweep(config: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    let report = execute(config, out, Mode::EvaluateSaved)?;
    let manifest = write_manifest(config, out)?;
    Ok(RunOutput {
        out: out.to_path_buf(),
        report,
        manifest,
    })
}

pub const DEFAULT_ABLATION_VALUES: [f64; 6] = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0];

pub fn ablation_method_name(value: f64) -> String {
    format!("xbar_{value}")
}

/// The config with its methods replaced by one Knockout model per
/// placeholder value. Rate settings are taken from the first Knockout
/// method of the original config, if any.
pub fn ablation_config(config: &ExperimentConfig, values: &[f64]) -> Result<ExperimentConfig> {
    if values.is_empty() {
        return Err(Error::Config("ablation: no placeholder values".into()));
    }
    let schema = base_schema(config)?;
    if !schema
        .features
        .iter()
        .any(|f| matches!(f.kind, FeatureKind::ContinuousUnbounded))
    {
        return Err(Error::Config(
            "ablation: the world has no z-scored features to vary the placeholder of".into(),
        ));
    }
    let template = config
        .methods
        .iter()
        .find(|m| m.kind == MethodKind::Knockout);
    let mut out = config.clone();
    out.methods = values
        .iter()
        .map(|&v| {
            let mut m = MethodSpec::new(ablation_method_name(v), MethodKind::Knockout);
            if let Some(t) = template {
                m.rate = t.rate;
                m.p_clean = t.p_clean;
                m.mask_granularity = t.mask_granularity;
            }
            m.placeholder = Some(v);
            m
        })
        .collect();
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub regime: String,
    pub placeholder: f64,
    pub metric: String,
    /// Mean over all patterns, then over repetitions.
    pub mean: f64,
    pub std: f64,
}

pub fn ablation_summary(
    config: &ExperimentConfig,
    report: &SweepReport,
    values: &[f64],
) -> Vec<AblationRow> {
    let metrics: &[&str] = match config.world.task() {
        Task::Regression => &[crate::eval::MSE_OBS, crate::eval::MSE_BAYES],
        Task::Classification { .. } => &[crate::eval::ERROR],
    };
    let mut rows = Vec::new();
    for r in &config.regimes {
        for &v in values {
            for &metric in metrics {
                if let Some((mean, std)) = report.overall(&r.name, &ablation_method_name(v), metric)
                {
                    rows.push(AblationRow {
                        regime: r.name.clone(),
                        placeholder: v,
                        metric: metric.into(),
                        mean,
                        std,
                    });
                }
            }
        }
    }
    rows
}

/// Trains one Knockout model per placeholder value and summarises the
/// sweep per value in `ablation.csv`.
pub fn cmd_ablate_placeholder(
    config: &ExperimentConfig,
    values: &[f64],
    out: &Path,
) -> Result<(RunOutput, Vec<AblationRow>)> {
    let ablation = ablation_config(config, values)?;
    let report = execute(&ablation, out, Mode::Train)?;
    let rows = ablation_summary(&ablation, &report, values);
    let path = out.join(ABLATION_CSV);
    let mut w = writer(&path)?;
    w.write_record(["regime", "placeholder", "metric", "mean", "std"])?;
    for r in &rows {
        w.write_record([
            r.regime.clone(),
            crate::data::fmt_f64(r.placeholder),
            r.metric.clone(),
            crate::data::fmt_f64(r.mean),
            crate::data::fmt_f64(r.std),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let manifest = write_manifest(&ablation, out)?;
    Ok((
        RunOutput {
            out: out.to_path_buf(),
            report,
            manifest,
        },
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{MSE_BAYES, MSE_OBS};

    fn minimal(steps: usize) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
name = "minimal"
seeds = [0]
k_max = 1
[world]
type = "gaussian"
dim = 10
n_train = 200
n_test = 50
[train]
steps = {steps}
batch_size = 32
learning_rate = 0.003
hidden = [16]
mask_granularity = "per_batch"
[[methods]]
name = "knockout"
kind = "knockout"
"#
        ))
        .unwrap()
    }

    #[test]
    fn minimal_run_has_ten_patterns_per_metric() {
        let dir = tempfile::tempdir().unwrap();
        let out = cmd_run(&minimal(20), dir.path()).unwrap();
        for metric in [MSE_OBS, MSE_BAYES] {
            assert_eq!(
                out.report
                    .results
                    .iter()
                    .filter(|r| r.metric == metric)
                    .count(),
                10
            );
        }
        // every file is listed in the manifest with its hash
        let mut paths = Vec::new();
        collect_files(dir.path(), dir.path(), &mut paths).unwrap();
        assert_eq!(paths.len(), out.manifest.files.len());
        for f in &out.manifest.files {
            let bytes = std::fs::read(dir.path().join(&f.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.path);
        }
        assert!(out
            .manifest
            .files
            .iter()
            .any(|f| f.path == "seed_0/complete/models/knockout.json"));
    }

    #[test]
    fn sweep_of_saved_models_reproduces_the_report() {
        let dir = tempfile::tempdir().unwrap();
        let config = minimal(20);
        cmd_run(&config, dir.path()).unwrap();
        let first = std::fs::read(dir.path().join(REPORT_CSV)).unwrap();
        std::fs::remove_file(dir.path().join(REPORT_CSV)).unwrap();
        cmd_sweep(&config, dir.path()).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join(REPORT_CSV)).unwrap());
    }

    #[test]
    fn missing_models_fail_the_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_sweep(&minimal(20), dir.path()).unwrap_err().to_string();
        assert!(err.contains("method knockout"), "{err}");
    }

    #[test]
    fn divergence_names_method_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = minimal(50);
        config.train.learning_rate = 1e300;
        let err = cmd_run(&config, dir.path()).unwrap_err().to_string();
        assert!(
            err.contains("method knockout, regime complete, seed 0"),
            "{err}"
        );
        assert!(err.contains("diverged"), "{err}");
    }

    #[test]
    fn ablation_with_one_value_is_a_plain_run() {
        let dir = tempfile::tempdir().unwrap();
        let config = minimal(20);
        let (out, rows) = cmd_ablate_placeholder(&config, &[10.0], dir.path()).unwrap();
        assert_eq!(rows.len(), 2);
        let plain_dir = tempfile::tempdir().unwrap();
        let mut plain = config.clone();
        plain.methods[0].name = ablation_method_name(10.0);
        plain.methods[0].placeholder = Some(10.0);
        let plain = cmd_run(&plain, plain_dir.path()).unwrap();
        assert_eq!(out.report, plain.report);
    }

    #[test]
    fn classification_world_reports_jsd_on_single_feature_patterns() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig::from_toml_str(
            r#"
name = "cls"
seeds = [3]
k_max = 2
save_data = false
[world]
type = "mixed"
n_train = 300
n_test = 100
[train]
steps = 20
batch_size = 32
learning_rate = 0.003
hidden = [8]
mask_granularity = "per_sample"
[[regimes]]
name = "mcar"
mechanism = "mcar"
p = 0.1
[[methods]]
name = "knockout"
kind = "knockout"
[[methods]]
name = "cb"
kind = "common_baseline"
"#,
        )
        .unwrap();
        let out = cmd_run(&config, dir.path()).unwrap();
        let jsd: Vec<_> = out
            .report
            .results
            .iter()
            .filter(|r| r.metric == crate::eval::JSD)
            .collect();
        // patterns 01 and 10, two methods
        assert_eq!(jsd.len(), 4);
        assert!(jsd.iter().all(|r| r.pattern.popcount() == 1));
        assert!(!dir.path().join("seed_3/test.csv").exists());
    }
}
