use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{grad, LossKind, NetworkSpec, Parameters};
use super::optim::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub const MODEL_VERSION: u32 = 1;
const TRACE_EVERY: usize = 100;

/// Whether one induced mask is shared by a whole mini-batch or drawn per
/// sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskGranularity {
    #[default]
    PerBatch,
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub adam: AdamConfig,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mask_granularity: MaskGranularity,
    /// Defaults to the head's natural loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
}

fn default_batch() -> usize {
    128
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            steps: 5000,
            batch_size: default_batch(),
            seed: 0,
            mask_granularity: MaskGranularity::default(),
            loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.adam.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Produces network inputs for a set of training rows. This is where
/// augmentation happens; it may consume randomness but must not depend on
/// anything other than the rows and the generator.
pub trait BatchInputs {
    fn n_rows(&self) -> usize;
    fn input_width(&self) -> usize;
    fn fill(&self, rows: &[usize], granularity: MaskGranularity, rng: &mut Rng, out: &mut Vec<f64>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: Parameters,
    /// `(step, batch loss)` every 100 steps.
    pub trace: Vec<(usize, f64)>,
}

/// Minimizes the batch-mean loss with Adam at a constant learning rate.
///
/// `targets` holds one value per row for cross-entropy (the class index)
/// and `output_width` values per row for MSE. Reproducible given
/// `config.seed`.
pub fn train(
    spec: &NetworkSpec,
    config: &TrainConfig,
    data: &dyn BatchInputs,
    targets: &[f64],
) -> Result<TrainResult> {
    spec.validate()?;
    config.validate()?;
    let loss = config.loss.unwrap_or(spec.default_loss());
    if data.input_width() != spec.input_width() {
        return Err(Error::Shape(format!(
            "data width {} does not match network input {}",
            data.input_width(),
            spec.input_width()
        )));
    }
    let n = data.n_rows();
    let per_row = match loss {
        LossKind::Mse => spec.output_width(),
        LossKind::CrossEntropy => 1,
    };
    if targets.len() != n * per_row {
        return Err(Error::Shape(format!(
            "{} targets for {n} rows",
            targets.len()
        )));
    }
    let mut init_rng = seed::rng(config.seed, &[seed::tag("init")]);
    let mut params = Parameters::init(spec, &mut init_rng);
    let mut trace = Vec::new();
    if config.steps == 0 {
        return Ok(TrainResult { params, trace });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = seed::rng(config.seed, &[seed::tag("batches")]);
    let mut adam = Adam::new(spec, config.adam);
    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut inputs = Vec::with_capacity(batch * spec.input_width());
    let mut batch_targets = Vec::with_capacity(batch * per_row);
    for step in 0..config.steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let rows = &order[cursor..cursor + batch];
        cursor += batch;
        inputs.clear();
        data.fill(rows, config.mask_granularity, &mut rng, &mut inputs);
        batch_targets.clear();
        for &r in rows {
            batch_targets.extend_from_slice(&targets[r * per_row..(r + 1) * per_row]);
        }
        let (value, grads) = match grad(spec, &params, &inputs, &batch_targets, batch, loss) {
            Ok(ok) => ok,
            Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged {
                    step,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        adam.step(&mut params, &grads);
        if (step + 1) % TRACE_EVERY == 0 || step + 1 == config.steps {
            trace.push((step + 1, value));
        }
    }
    Ok(TrainResult { params, trace })
}

/// Serialized network: architecture and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub version: u32,
    pub spec: NetworkSpec,
    pub params: Parameters,
}

impl Model {
    pub fn new(spec: NetworkSpec, params: Parameters) -> Self {
        Self {
            version: MODEL_VERSION,
            spec,
            params,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, OutputHead};

    /// Rows served verbatim.
    struct Plain {
        x: Vec<f64>,
        d: usize,
    }

    impl BatchInputs for Plain {
        fn n_rows(&self) -> usize {
            self.x.len() / self.d
        }
        fn input_width(&self) -> usize {
            self.d
        }
        fn fill(&self, rows: &[usize], _: MaskGranularity, _: &mut Rng, out: &mut Vec<f64>) {
            for &r in rows {
                out.extend_from_slice(&self.x[r * self.d..(r + 1) * self.d]);
            }
        }
    }

    fn linear_task(n: usize) -> (Plain, Vec<f64>) {
        use rand::Rng as _;
        let mut rng = seed::rng(9, &[]);
        let w = [0.5, -1.0, 2.0];
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = x
            .chunks(3)
            .map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect();
        (Plain { x, d: 3 }, y)
    }

    #[test]
    fn zero_steps_returns_initial_parameters() {
        let spec = NetworkSpec::new(3, &[8], 1, OutputHead::Linear).unwrap();
        let (data, y) = linear_task(10);
        let config = TrainConfig {
            steps: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let out = train(&spec, &config, &data, &y).unwrap();
        let init = Parameters::init(&spec, &mut seed::rng(4, &[seed::tag("init")]));
        assert_eq!(out.params, init);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn learns_noiseless_linear_map() {
        let spec = NetworkSpec::new(3, &[32, 32], 1, OutputHead::Linear).unwrap();
        let (data, y) = linear_task(512);
        let config = TrainConfig {
            steps: 5000,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let out = train(&spec, &config, &data, &y).unwrap();
        let pred = forward(&spec, &out.params, &data.x, 512).unwrap();
        let mse = pred
            .iter()
            .zip(&y)
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / 512.0;
        assert!(mse < 1e-3, "final mse {mse}");
        assert_eq!(out.trace.len(), 50);
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let spec = NetworkSpec::new(3, &[16], 1, OutputHead::Linear).unwrap();
        let (data, y) = linear_task(100);
        let config = TrainConfig {
            steps: 300,
            batch_size: 32,
            seed: 17,
            ..TrainConfig::default()
        };
        let a = train(&spec, &config, &data, &y).unwrap();
        let b = train(&spec, &config, &data, &y).unwrap();
        assert_eq!(a, b);
        let bits = |p: &Parameters| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.params), bits(&b.params));
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let spec = NetworkSpec::new(3, &[16], 1, OutputHead::Linear).unwrap();
        let (data, y) = linear_task(100);
        let huge: Vec<f64> = y.iter().map(|v| v * 1e300).collect();
        let config = TrainConfig {
            steps: 100,
            ..TrainConfig::default()
        };
        let err = train(&spec, &config, &data, &huge).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 0, .. }), "{err}");
    }
}
