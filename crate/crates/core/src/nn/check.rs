use rand::Rng as _;

use super::network::{grad, loss, LossKind, NetworkSpec, OutputHead, Parameters};
use crate::error::Result;
use crate::seed;

pub const FD_STEP: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub spec: NetworkSpec,
    pub loss: LossKind,
    pub n_params: usize,
    pub max_rel_error: f64,
}

/// Relative error `|a - b| / max(|a|, |b|)`, with the denominator floored.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DENOM_FLOOR)
}

/// Analytic gradient of every parameter against central differences with
/// step `h`, on one fixed batch.
pub fn check_gradient(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[f64],
    targets: &[f64],
    n: usize,
    kind: LossKind,
    h: f64,
) -> Result<f64> {
    let (_, analytic) = grad(spec, params, inputs, targets, n, kind)?;
    let analytic = analytic.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.set_flat(&flat);
        let up = loss(spec, &probe, inputs, targets, n, kind)?;
        flat[i] = base[i] - h;
        probe.set_flat(&flat);
        let down = loss(spec, &probe, inputs, targets, n, kind)?;
        flat[i] = base[i];
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// Gradient checks on `count` random networks, batches and heads.
pub fn random_gradient_checks(count: usize, root: u64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::with_capacity(count);
    for c in 0..count {
        let mut rng = seed::rng(root, &[seed::tag("gradcheck"), c as u64]);
        let input = rng.random_range(1..=6);
        let hidden: Vec<usize> = (0..rng.random_range(1..=3))
            .map(|_| rng.random_range(2..=8))
            .collect();
        let classify = rng.random::<bool>();
        let (output, head, kind) = if classify {
            (
                rng.random_range(2..=4),
                OutputHead::Logits,
                LossKind::CrossEntropy,
            )
        } else {
            (rng.random_range(1..=3), OutputHead::Linear, LossKind::Mse)
        };
        let spec = NetworkSpec::new(input, &hidden, output, head)?;
        let mut params = Parameters::init(&spec, &mut rng);
        // nonzero biases so that every unit path is exercised
        for slice in params.slices_mut() {
            for v in slice.iter_mut() {
                if *v == 0.0 {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let n = rng.random_range(1..=8);
        let inputs: Vec<f64> = (0..n * input)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let targets: Vec<f64> = match kind {
            LossKind::CrossEntropy => (0..n).map(|_| rng.random_range(0..output) as f64).collect(),
            LossKind::Mse => (0..n * output)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        };
        let max_rel_error = check_gradient(&spec, &params, &inputs, &targets, n, kind, FD_STEP)?;
        out.push(GradCheck {
            n_params: params.n_params(),
            spec,
            loss: kind,
            max_rel_error,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_random_configurations_agree() {
        let checks = random_gradient_checks(20, 0).unwrap();
        assert_eq!(checks.len(), 20);
        assert!(checks.iter().any(|c| c.loss == LossKind::Mse));
        assert!(checks.iter().any(|c| c.loss == LossKind::CrossEntropy));
        for c in &checks {
            assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(rel_error(1.0, 1.1) > 0.05);
        assert_eq!(rel_error(0.0, 1e-12), 1e-12 / DENOM_FLOOR);
    }
}
