//! Metrics and the missingness-pattern sweep.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::methods::{Predictor, Task};
use crate::missingness::Mask;
use crate::nn::argmax;
use crate::synth::{EmpiricalConditional, GaussianWorld};

pub const MSE_OBS: &str = "mse_obs";
pub const MSE_BAYES: &str = "mse_bayes";
pub const ERROR: &str = "error";
pub const JSD: &str = "jsd";

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Fraction of rows whose argmax class differs from the label.
pub fn error_rate(probs: &[f64], width: usize, labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() * width {
        return Err(Error::LengthMismatch {
            expected: labels.len() * width,
            actual: probs.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let wrong = probs
        .chunks(width)
        .zip(labels)
        .filter(|(p, &y)| argmax(p) as f64 != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Eval(format!(
            "not a probability distribution: {p:?}"
        )));
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats, with `0 log 0 = 0`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (2.0 * x / (x + y)).ln())
            .sum()
    };
    let v = 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
    Ok(v.clamp(0.0, std::f64::consts::LN_2))
}

/// Mean JSD between the model's `P(Y | X_i = center)` (every other feature
/// hidden) and the empirical estimate, weighted by bin mass.
pub fn marginal_fidelity(predictor: &Predictor, est: &EmpiricalConditional) -> Result<f64> {
    if predictor.task != (Task::Classification { n_classes: 2 }) {
        return Err(Error::Eval(
            "marginal fidelity needs a binary classifier".into(),
        ));
    }
    let d = predictor.d();
    let occupied: Vec<usize> = (0..est.centers.len())
        .filter(|&b| est.counts[b] > 0)
        .collect();
    if occupied.is_empty() {
        return Err(Error::Eval("no occupied bins".into()));
    }
    let mut rows = vec![0.0; occupied.len() * d];
    for (r, &b) in occupied.iter().enumerate() {
        rows[r * d + est.feature] = est.centers[b];
    }
    let mut bits = vec![true; d];
    bits[est.feature] = false;
    let probs = predictor.predict(&rows, occupied.len(), &Mask::from_bits(bits))?;
    let total: usize = occupied.iter().map(|&b| est.counts[b]).sum();
    let mut acc = 0.0;
    for (r, &b) in occupied.iter().enumerate() {
        let model = &probs[2 * r..2 * r + 2];
        let q = est.p1[b];
        acc += est.counts[b] as f64 * jsd(model, &[1.0 - q, q])?;
    }
    Ok(acc / total as f64)
}

/// MSE between the model on pattern-masked rows and `E[Y | X_observed]`.
pub fn mse_vs_bayes(
    predictor: &Predictor,
    world: &GaussianWorld,
    test: &Dataset,
    pattern: &Mask,
) -> Result<f64> {
    let pred = predictor.predict(&test.x, test.len(), pattern)?;
    let bayes = world.bayes_predict(test, pattern)?;
    mse(&pred, &bayes)
}

/// Ground truth available for a sweep.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    None,
    Gaussian(&'a GaussianWorld),
    /// Empirical `P(Y | X_i)` per feature, for single-observed patterns.
    Marginals(&'a [EmpiricalConditional]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternResult {
    pub regime: String,
    pub method: String,
    pub pattern: Mask,
    pub metric: String,
    pub seed: u64,
    pub value: f64,
    pub n_test: usize,
}

impl PatternResult {
    fn key(&self) -> (&str, &str, usize, String, &str, u64) {
        (
            &self.regime,
            &self.method,
            self.pattern.popcount(),
            self.pattern.to_string(),
            &self.metric,
            self.seed,
        )
    }
}

pub struct SweepInput<'a> {
    pub regime: &'a str,
    pub seed: u64,
    pub test: &'a Dataset,
    pub reference: Reference<'a>,
    pub patterns: &'a [Mask],
}

/// Evaluates every (method, pattern) pair on the same test rows. The
/// result order is canonical regardless of the order of `predictors`.
pub fn run_pattern_sweep(
    predictors: &[&Predictor],
    input: &SweepInput,
) -> Result<Vec<PatternResult>> {
    if input.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let jobs: Vec<(&Predictor, &Mask)> = predictors
        .iter()
        .flat_map(|p| input.patterns.iter().map(move |m| (*p, m)))
        .collect();
    let chunks: Vec<Vec<PatternResult>> = jobs
        .par_iter()
        .map(|(p, m)| evaluate(p, m, input))
        .collect::<Result<_>>()?;
    let mut out: Vec<PatternResult> = chunks.into_iter().flatten().collect();
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(out)
}

fn evaluate(p: &Predictor, pattern: &Mask, input: &SweepInput) -> Result<Vec<PatternResult>> {
    let test = input.test;
    let n = test.len();
    let result = |metric: &str, value: f64| PatternResult {
        regime: input.regime.to_string(),
        method: p.method.clone(),
        pattern: pattern.clone(),
        metric: metric.to_string(),
        seed: input.seed,
        value,
        n_test: n,
    };
    let pred = p.predict(&test.x, n, pattern)?;
    let mut out = Vec::new();
    match p.task {
        Task::Regression => {
            out.push(result(MSE_OBS, mse(&pred, &test.y)?));
            if let Reference::Gaussian(world) = input.reference {
                let bayes = world.bayes_predict(test, pattern)?;
                out.push(result(MSE_BAYES, mse(&pred, &bayes)?));
            }
        }
        Task::Classification { n_classes } => {
            out.push(result(ERROR, error_rate(&pred, n_classes, &test.y)?));
            if let Reference::Marginals(ests) = input.reference {
                let observed = pattern.observed_indices();
                if observed.len() == 1 {
                    if let Some(est) = ests.iter().find(|e| e.feature == observed[0]) {
                        out.push(result(JSD, marginal_fidelity(p, est)?));
                    }
                }
            }
        }
    }
    if let Some(bad) = out.iter().find(|r| !r.value.is_finite()) {
        return Err(Error::Eval(format!(
            "{} on pattern {pattern}: non-finite {}",
            p.method, bad.metric
        )));
    }
    Ok(out)
}

/// Mean and spread across repetitions of the per-repetition average over
/// patterns with the same popcount.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub regime: String,
    pub method: String,
    pub metric: String,
    pub popcount: usize,
    pub mean: f64,
    /// Population standard deviation across repetitions.
    pub std: f64,
    pub n_patterns: usize,
    pub per_seed: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub results: Vec<PatternResult>,
}

impl SweepReport {
    pub fn new(mut results: Vec<PatternResult>) -> Self {
        results.sort_by(|a, b| a.key().cmp(&b.key()));
        Self { results }
    }

    /// Every `(regime, method, seed)` has each pattern exactly once for its
    /// primary metric.
    pub fn check_complete(&self, patterns: &[Mask]) -> Result<()> {
        let mut seen: BTreeMap<(&str, &str, u64, &str), Vec<String>> = BTreeMap::new();
        for r in &self.results {
            if r.metric == MSE_OBS || r.metric == ERROR {
                seen.entry((&r.regime, &r.method, r.seed, &r.metric))
                    .or_default()
                    .push(r.pattern.to_string());
            }
        }
        let mut want: Vec<String> = patterns.iter().map(Mask::to_string).collect();
        want.sort();
        for (key, mut got) in seen {
            got.sort();
            if got != want {
                return Err(Error::Eval(format!("incomplete sweep for {key:?}")));
            }
        }
        Ok(())
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        // (regime, method, metric, popcount) -> seed -> values
        let mut groups: BTreeMap<(String, String, String, usize), BTreeMap<u64, Vec<f64>>> =
            BTreeMap::new();
        for r in &self.results {
            groups
                .entry((
                    r.regime.clone(),
                    r.method.clone(),
                    r.metric.clone(),
                    r.pattern.popcount(),
                ))
                .or_default()
                .entry(r.seed)
                .or_default()
                .push(r.value);
        }
        groups
            .into_iter()
            .map(|((regime, method, metric, popcount), seeds)| {
                let n_patterns = seeds.values().map(Vec::len).max().unwrap_or(0);
                let per_seed: Vec<(u64, f64)> = seeds
                    .into_iter()
                    .map(|(s, v)| (s, v.iter().sum::<f64>() / v.len() as f64))
                    .collect();
                let k = per_seed.len() as f64;
                let mean = per_seed.iter().map(|p| p.1).sum::<f64>() / k;
                let var = per_seed.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / k;
                Aggregate {
                    regime,
                    method,
                    metric,
                    popcount,
                    mean,
                    std: var.sqrt(),
                    n_patterns,
                    per_seed,
                }
            })
            .collect()
    }

    /// Cross-repetition mean for one cell of the aggregate table.
    pub fn mean(&self, regime: &str, method: &str, metric: &str, popcount: usize) -> Option<f64> {
        self.aggregates()
            .into_iter()
            .find(|a| {
                a.regime == regime
                    && a.method == method
                    && a.metric == metric
                    && a.popcount == popcount
            })
            .map(|a| a.mean)
    }

    /// Mean over every pattern within a repetition, then mean and
    /// population std across repetitions.
    pub fn overall(&self, regime: &str, method: &str, metric: &str) -> Option<(f64, f64)> {
        let mut seeds: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in &self.results {
            if r.regime == regime && r.method == method && r.metric == metric {
                seeds.entry(r.seed).or_default().push(r.value);
            }
        }
        if seeds.is_empty() {
            return None;
        }
        let per: Vec<f64> = seeds
            .values()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        let k = per.len() as f64;
        let mean = per.iter().sum::<f64>() / k;
        let var = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        Some((mean, var.sqrt()))
    }

    /// Long format: `regime,method,pattern,popcount,metric,seed,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        w.write_record([
            "regime", "method", "pattern", "popcount", "metric", "seed", "value",
        ])?;
        for r in &self.results {
            w.write_record([
                r.regime.clone(),
                r.method.clone(),
                r.pattern.to_string(),
                r.pattern.popcount().to_string(),
                r.metric.clone(),
                r.seed.to_string(),
                fmt_f64(r.value),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_aggregates_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.aggregates())?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Popcount against mean metric per method, one row per cell.
    pub fn write_plotdata(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        w.write_record([
            "regime", "method", "metric", "popcount", "mean", "std", "n_seeds",
        ])?;
        for a in self.aggregates() {
            w.write_record([
                a.regime,
                a.method,
                a.metric,
                a.popcount.to_string(),
                fmt_f64(a.mean),
                fmt_f64(a.std),
                a.per_seed.len().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut results = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad =
                |what: &str| Error::Eval(format!("{}: bad {what} in {:?}", path.display(), rec));
            results.push(PatternResult {
                regime: field(0).into(),
                method: field(1).into(),
                pattern: field(2).parse().map_err(|_| bad("pattern"))?,
                metric: field(4).into(),
                seed: field(5).parse().map_err(|_| bad("seed"))?,
                value: field(6).parse().map_err(|_| bad("value"))?,
                n_test: 0,
            });
        }
        Ok(Self::new(results))
    }
}

pub(crate) fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::{InputFill, PredictorBody};
    use crate::nn::{Model, NetworkSpec, OutputHead, Parameters};
    use crate::schema::FittedSchema;
    use crate::seed;

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mse(&[], &[]).is_err());
        use rand::Rng as _;
        let mut rng = seed::rng(1, &[]);
        let a: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let mut naive = 0.0;
        for i in 0..1000 {
            naive += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert!((mse(&a, &b).unwrap() - naive / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn jsd_cases() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // direct summation with m = (0.75, 0.25)
        let want = 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln())
            + 0.5 * (1.0f64 / 0.75).ln();
        assert!((jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - want).abs() < 1e-15);
        assert!(jsd(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn jsd_is_symmetric_and_bounded() {
        use rand::Rng as _;
        let mut rng = seed::rng(2, &[]);
        for _ in 0..200 {
            let mut p: Vec<f64> = (0..4).map(|_| rng.random()).collect();
            let mut q: Vec<f64> = (0..4).map(|_| rng.random()).collect();
            let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
            p.iter_mut().for_each(|v| *v /= sp);
            q.iter_mut().for_each(|v| *v /= sq);
            let a = jsd(&p, &q).unwrap();
            assert_eq!(a, jsd(&q, &p).unwrap());
            assert!((0.0..=std::f64::consts::LN_2).contains(&a));
        }
    }

    #[test]
    fn error_rate_ties_go_to_first_class() {
        let probs = [0.5, 0.5, 0.2, 0.8];
        assert_eq!(error_rate(&probs, 2, &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(error_rate(&probs, 2, &[1.0, 0.0]).unwrap(), 1.0);
    }

    /// A linear predictor that outputs a fixed constant.
    fn constant_predictor(world: &GaussianWorld, value: f64) -> Predictor {
        let schema = world.schema();
        let d = schema.len();
        let data = world.draw_dataset(100, &mut seed::rng(3, &[])).unwrap();
        let fitted = FittedSchema::fit(&schema, &data.x, None).unwrap();
        let spec = NetworkSpec::new(d, &[1], 1, OutputHead::Linear).unwrap();
        let mut params = Parameters::zeros(&spec);
        params.layers[1].b[0] = value;
        Predictor {
            version: 1,
            method: "const".into(),
            kind: crate::methods::MethodKind::CommonBaseline,
            task: Task::Regression,
            fitted,
            body: PredictorBody::Net {
                fill: InputFill::Values {
                    values: vec![0.0; d],
                },
                model: Model::new(spec, params),
            },
        }
    }

    #[test]
    fn constant_prior_mean_is_bayes_under_full_masking() {
        let world = GaussianWorld::sample(5, &mut seed::rng(4, &[]));
        let test = world.draw_dataset(50, &mut seed::rng(5, &[])).unwrap();
        let p = constant_predictor(&world, world.mean[4]);
        let v = mse_vs_bayes(&p, &world, &test, &Mask::ones(4)).unwrap();
        assert!(v < 1e-24, "{v}");
    }

    #[test]
    fn sweep_is_complete_and_order_independent() {
        let world = GaussianWorld::sample(4, &mut seed::rng(6, &[]));
        let test = world.draw_dataset(30, &mut seed::rng(7, &[])).unwrap();
        let mut a = constant_predictor(&world, 0.1);
        a.method = "a".into();
        let mut b = constant_predictor(&world, 0.2);
        b.method = "b".into();
        let patterns = crate::missingness::enumerate_patterns(3, 3).unwrap();
        let input = SweepInput {
            regime: "complete",
            seed: 0,
            test: &test,
            reference: Reference::Gaussian(&world),
            patterns: &patterns,
        };
        let r1 = SweepReport::new(run_pattern_sweep(&[&a, &b], &input).unwrap());
        let r2 = SweepReport::new(run_pattern_sweep(&[&b, &a], &input).unwrap());
        assert_eq!(r1, r2);
        assert_eq!(r1.results.len(), 2 * 8 * 2);
        r1.check_complete(&patterns).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        r1.write_csv(&path).unwrap();
        let back = SweepReport::read_csv(&path).unwrap();
        assert_eq!(back.results.len(), r1.results.len());
        assert!(back
            .results
            .iter()
            .zip(&r1.results)
            .all(|(x, y)| x.value == y.value && x.pattern == y.pattern));
    }

    #[test]
    fn aggregation_averages_patterns_then_seeds() {
        let mk = |pattern: &str, seed: u64, value: f64| PatternResult {
            regime: "r".into(),
            method: "m".into(),
            pattern: pattern.parse().unwrap(),
            metric: MSE_OBS.into(),
            seed,
            value,
            n_test: 1,
        };
        let report = SweepReport::new(vec![
            mk("10", 0, 1.0),
            mk("01", 0, 3.0),
            mk("10", 1, 5.0),
            mk("01", 1, 7.0),
        ]);
        let agg = report.aggregates();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].per_seed, vec![(0, 2.0), (1, 6.0)]);
        assert_eq!(agg[0].mean, 4.0);
        assert_eq!(agg[0].std, 2.0);
    }
}
