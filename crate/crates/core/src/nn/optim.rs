use serde::{Deserialize, Serialize};

use super::network::{NetworkSpec, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::new(3e-3)
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Parameters,
    v: Parameters,
    t: u64,
}

impl Adam {
    pub fn new(spec: &NetworkSpec, config: AdamConfig) -> Self {
        Self {
            config,
            m: Parameters::zeros(spec),
            v: Parameters::zeros(spec),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let slices = params
            .slices_mut()
            .zip(grads.slices())
            .zip(self.m.slices_mut().zip(self.v.slices_mut()));
        for ((p, g), (m, v)) in slices {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::OutputHead;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let spec = NetworkSpec::new(1, &[1], 1, OutputHead::Linear).unwrap();
        let mut params = Parameters::zeros(&spec);
        let mut grads = Parameters::zeros(&spec);
        grads.layers[0].w = vec![0.5];
        grads.layers[1].b = vec![-4.0];
        let mut adam = Adam::new(&spec, AdamConfig::new(0.01));
        adam.step(&mut params, &grads);
        assert!((params.layers[0].w[0] + 0.01).abs() < 1e-9);
        assert!((params.layers[1].b[0] - 0.01).abs() < 1e-9);
        assert_eq!(params.layers[1].w[0], 0.0);
    }
}
