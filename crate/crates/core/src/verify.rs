//! The exact-oracle check suite behind `knockout verify`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng as _;

use crate::augment::knockout_in_place;
use crate::error::Result;
use crate::missingness::{calibrate_rate, enumerate_patterns, Mask, MaskDistribution};
use crate::nn::{forward, random_gradient_checks, NetworkSpec, OutputHead, Parameters};
use crate::oracle::{
    check_out_of_support, random_joint, total_variation, two_point_world, DiscreteJoint,
};
use crate::seed;
use crate::synth::GaussianWorld;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }

    fn from_result(name: &'static str, r: Result<Check>) -> Self {
        r.unwrap_or_else(|e| Check::new(name, false, format!("error: {e}")))
    }
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// `P(Y = 0 | X' = x1)` on the two-point world with an in-support
/// placeholder: must be exactly `6/13`.
pub fn counterexample() -> Check {
    let run = || -> Result<Check> {
        let joint = two_point_world();
        let p = joint.induced_conditional(&ratio(1, 2), &[1], &[1])?;
        let exact = p[0] == ratio(6, 13);
        let float = (to_f64(&p[0]) - 0.6 / 1.3).abs() <= 1e-12;
        Ok(Check::new(
            "in-support counterexample",
            exact && float,
            format!(
                "P(Y=0 | X'=x1) = {} = {:.9} (expected 0.6/1.3)",
                p[0],
                to_f64(&p[0])
            ),
        ))
    };
    Check::from_result("in-support counterexample", run())
}

/// Induced conditional equals the true marginal on random joints with
/// out-of-support placeholders, for every pattern and reachable evidence.
pub fn out_of_support(n_joints: usize, root: u64) -> Check {
    let name = "out-of-support identity";
    let mut rng = seed::rng(root, &[seed::tag("joints")]);
    let mut compared = 0;
    for j in 0..n_joints {
        let d = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..d).map(|_| rng.random_range(1..=4)).collect();
        let labels = rng.random_range(2..=3);
        let joint = random_joint(&mut rng, &sizes, labels);
        let q = ratio(rng.random_range(1..20), 20);
        let placeholders = vec![-1; d];
        match check_out_of_support(&joint, &q, &placeholders) {
            Ok(n) => compared += n,
            Err(e) => return Check::new(name, false, format!("joint {j}: {e}")),
        }
    }
    Check::new(
        name,
        compared > 0,
        format!("{n_joints} joints, {compared} evidence configurations, all exact"),
    )
}

/// World where the placeholder of `X0` has probability `eps`.
fn epsilon_joint(eps: &BigRational) -> Result<DiscreteJoint<BigRational>> {
    let half = ratio(1, 2);
    let rest = (BigRational::one() - eps.clone()) * half.clone();
    let mut entries = Vec::new();
    for (x0, px0) in [(0, eps.clone()), (1, rest.clone()), (2, rest)] {
        for y in 0..2i64 {
            let py = match (x0, y) {
                (0, 0) | (1, 1) => BigRational::one(),
                (0, 1) | (1, 0) => BigRational::zero(),
                _ => half.clone(),
            };
            for x1 in 0..2i64 {
                let p1 = ratio(3 + 4 * y, 10);
                let px1 = if x1 == 1 { p1 } else { BigRational::one() - p1 };
                let p = px0.clone() * py.clone() * px1;
                if !p.is_zero() {
                    entries.push((vec![x0, x1], y, p));
                }
            }
        }
    }
    DiscreteJoint::from_entries(entries)
}

/// Total variation between the induced conditional and the marginal when
/// the placeholder is in the support with mass `eps`, for shrinking `eps`.
/// Returns `(eps, tv)` pairs and the constant `C = max tv q / eps`.
pub fn approximation_bound(q: &BigRational) -> Result<(Vec<(f64, f64)>, f64)> {
    let mut rows = Vec::new();
    for k in [2u32, 4, 6] {
        let eps = BigRational::new(BigInt::one(), BigInt::from(10).pow(k));
        let joint = epsilon_joint(&eps)?;
        let pattern = Mask::from_bits(vec![true, false]);
        let marginal = joint.marginal(&pattern, &[0, 1])?;
        let induced = joint.induced_conditional(q, &[0, -1], &[0, 1])?;
        rows.push((to_f64(&eps), to_f64(&total_variation(&induced, &marginal))));
    }
    let qf = to_f64(q);
    let c = rows.iter().map(|&(e, tv)| tv * qf / e).fold(0.0, f64::max);
    Ok((rows, c))
}

pub fn bound_trend() -> Check {
    let name = "approximation bound trend";
    let run = || -> Result<Check> {
        let q = ratio(1, 2);
        let (rows, c) = approximation_bound(&q)?;
        let monotone = rows.windows(2).all(|w| w[1].1 < w[0].1);
        let within = rows.iter().all(|&(e, tv)| tv <= c * e / 0.5 * (1.0 + 1e-9));
        let vanishing = rows.last().is_some_and(|&(e, tv)| tv < 10.0 * e);
        let detail = rows
            .iter()
            .map(|(e, tv)| format!("eps={e:e}: tv={tv:.3e}"))
            .collect::<Vec<_>>()
            .join(", ");
        Ok(Check::new(
            name,
            monotone && within && vanishing,
            format!("{detail}; C={c:.4}"),
        ))
    };
    Check::from_result(name, run())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub exact: f64,
    pub monte_carlo: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Knockout loss of a fixed network on a fixed dataset with `d = 2`:
/// the mask-weighted sum of per-pattern losses against a Monte Carlo
/// estimate over sampled `(mask, row)` pairs.
pub fn decomposition(samples: usize, root: u64) -> Result<Decomposition> {
    let d = 2;
    let world = GaussianWorld::sample(d + 1, &mut seed::rng(root, &[seed::tag("world")]));
    let data = world.draw_dataset(64, &mut seed::rng(root, &[seed::tag("data")]))?;
    let spec = NetworkSpec::new(d, &[8], 1, OutputHead::Linear)?;
    let params = Parameters::init(&spec, &mut seed::rng(root, &[seed::tag("theta")]));
    let xbar = [10.0, 10.0];
    let patterns = enumerate_patterns(d, d)?;
    let weights = [0.4, 0.3, 0.2, 0.1];
    let dist = MaskDistribution::weighted(patterns.iter().cloned().zip(weights).collect())?;

    let losses = |masks: &[(Mask, usize)]| -> Result<Vec<f64>> {
        let mut inputs = Vec::with_capacity(masks.len() * d);
        for (m, i) in masks {
            let mut row = data.row(*i).to_vec();
            knockout_in_place(&mut row, m.bits(), &xbar);
            inputs.extend_from_slice(&row);
        }
        let out = forward(&spec, &params, &inputs, masks.len())?;
        Ok(out
            .iter()
            .zip(masks)
            .map(|(o, (_, i))| (o - data.y[*i]).powi(2))
            .collect())
    };

    let mut exact = 0.0;
    for p in &patterns {
        let all: Vec<(Mask, usize)> = (0..data.len()).map(|i| (p.clone(), i)).collect();
        let l = losses(&all)?;
        exact += dist.probability(p) * l.iter().sum::<f64>() / l.len() as f64;
    }

    let mut rng = seed::rng(root, &[seed::tag("mc")]);
    let draws: Vec<(Mask, usize)> = (0..samples)
        .map(|_| (dist.sample(&mut rng), rng.random_range(0..data.len())))
        .collect();
    let l = losses(&draws)?;
    let n = l.len() as f64;
    let mean = l.iter().sum::<f64>() / n;
    let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Decomposition {
        exact,
        monte_carlo: mean,
        std_error: (var / n).sqrt(),
        samples,
    })
}

pub fn decomposition_check() -> Check {
    let name = "multi-task decomposition";
    let run = || -> Result<Check> {
        let r = decomposition(100_000, 0)?;
        let z = (r.monte_carlo - r.exact).abs() / r.std_error;
        Ok(Check::new(
            name,
            z <= 3.0,
            format!(
                "exact {:.6}, monte carlo {:.6} (se {:.2e}, {:.2} se apart, {} masks)",
                r.exact, r.monte_carlo, r.std_error, z, r.samples
            ),
        ))
    };
    Check::from_result(name, run())
}

pub fn calibration() -> Check {
    let name = "rate calibration";
    match calibrate_rate(9, 0.5) {
        Ok(r) => Check::new(
            name,
            (r - 0.0741).abs() <= 5e-4,
            format!("d=9, p_clean=0.5: rate {r:.4}"),
        ),
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

pub fn pattern_count() -> Check {
    let name = "pattern count";
    match enumerate_patterns(9, 3) {
        Ok(p) => Check::new(
            name,
            p.len() == 130,
            format!("d=9, k_max=3: {} patterns", p.len()),
        ),
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

pub fn gradients() -> Check {
    let name = "gradient check";
    match random_gradient_checks(20, 0) {
        Ok(checks) => {
            let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
            Check::new(
                name,
                worst < 1e-4,
                format!("{} networks, max relative error {worst:.2e}", checks.len()),
            )
        }
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

/// Runs every check in a fixed order.
pub fn run_all() -> Vec<Check> {
    vec![
        out_of_support(200, 0),
        counterexample(),
        bound_trend(),
        decomposition_check(),
        calibration(),
        pattern_count(),
        gradients(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn bound_shrinks_linearly() {
        let (rows, _) = approximation_bound(&ratio(1, 2)).unwrap();
        // tv / eps settles to a constant
        let slopes: Vec<f64> = rows.iter().map(|(e, tv)| tv / e).collect();
        assert!((slopes[2] / slopes[1] - 1.0).abs() < 0.01, "{slopes:?}");
    }

    #[test]
    fn broken_identity_is_reported() {
        // an in-support placeholder must trip the out-of-support checker
        let joint = two_point_world();
        assert!(check_out_of_support(&joint, &ratio(1, 2), &[1]).is_err());
    }
}
