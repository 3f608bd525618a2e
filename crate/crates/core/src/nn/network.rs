use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Layer widths from input to output, e.g. `[9, 100, 100, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub head: OutputHead,
}

impl NetworkSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, head: OutputHead) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let spec = Self {
            widths,
            activation: Activation::Relu,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Shape(
                "network needs at least one hidden layer".into(),
            ));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Shape(format!("zero width in {:?}", self.widths)));
        }
        if self.head == OutputHead::Logits && self.output_width() < 2 {
            return Err(Error::Shape(
                "a logits head needs at least two classes".into(),
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn default_loss(&self) -> LossKind {
        match self.head {
            OutputHead::Linear => LossKind::Mse,
            OutputHead::Logits => LossKind::CrossEntropy,
        }
    }
}

/// Dense layer; `w` is `fan_in x fan_out`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            w: vec![0.0; fan_in * fan_out],
            b: vec![0.0; fan_out],
        }
    }

    /// `out = x W + b` for `n` rows.
    fn affine(&self, x: &[f64], n: usize, out: &mut Vec<f64>) {
        let (fi, fo) = (self.fan_in, self.fan_out);
        out.clear();
        out.reserve(n * fo);
        for r in 0..n {
            out.extend_from_slice(&self.b);
            let row = &x[r * fi..(r + 1) * fi];
            let z = &mut out[r * fo..(r + 1) * fo];
            for (i, &xi) in row.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wi = &self.w[i * fo..(i + 1) * fo];
                for (zo, &w) in z.iter_mut().zip(wi) {
                    *zo += xi * w;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub layers: Vec<Layer>,
}

impl Parameters {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .widths
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    /// Uniform weights with standard deviation `sqrt(2 / fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            let bound = (6.0 / layer.fan_in as f64).sqrt();
            for w in &mut layer.w {
                *w = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat view in layer order, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
    }

    pub fn check_shapes(&self, spec: &NetworkSpec) -> Result<()> {
        let ok = self.layers.len() == spec.n_layers()
            && self
                .layers
                .iter()
                .zip(spec.widths.windows(2))
                .all(|(l, w)| {
                    l.fan_in == w[0]
                        && l.fan_out == w[1]
                        && l.w.len() == w[0] * w[1]
                        && l.b.len() == w[1]
                });
        if !ok {
            return Err(Error::Shape(format!(
                "parameters do not match widths {:?}",
                spec.widths
            )));
        }
        Ok(())
    }
}

fn check_input(spec: &NetworkSpec, inputs: &[f64], n: usize) -> Result<()> {
    if inputs.len() != n * spec.input_width() {
        return Err(Error::Shape(format!(
            "{} inputs for {n} rows of width {}",
            inputs.len(),
            spec.input_width()
        )));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    Ok(())
}

/// Pre-activations of every layer, kept for the backward pass.
struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

fn forward_trace(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[f64],
    n: usize,
) -> Result<Trace> {
    let mut pre = Vec::with_capacity(spec.n_layers());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(spec.n_layers());
    let last = spec.n_layers() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let input = if l == 0 { inputs } else { &post[l - 1] };
        let mut z = Vec::new();
        layer.affine(input, n, &mut z);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("layer {l} pre-activation")));
        }
        let a = if l == last {
            z.clone()
        } else {
            match spec.activation {
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            }
        };
        pre.push(z);
        post.push(a);
    }
    Ok(Trace { pre, post })
}

/// Raw network outputs (`n x output_width`): values for a linear head,
/// logits for a logits head.
pub fn forward(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    check_input(spec, inputs, n)?;
    params.check_shapes(spec)?;
    let mut trace = forward_trace(spec, params, inputs, n)?;
    Ok(trace.post.pop().expect("at least one layer"))
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(logits: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

/// Means for a linear head; class probabilities for a logits head.
pub fn predict(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    let out = forward(spec, params, inputs, n)?;
    Ok(match spec.head {
        OutputHead::Linear => out,
        OutputHead::Logits => softmax_rows(&out, spec.output_width()),
    })
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_targets(spec: &NetworkSpec, targets: &[f64], n: usize, loss: LossKind) -> Result<()> {
    match loss {
        LossKind::Mse => {
            if targets.len() != n * spec.output_width() {
                return Err(Error::Shape(format!(
                    "{} targets for {n} rows of width {}",
                    targets.len(),
                    spec.output_width()
                )));
            }
        }
        LossKind::CrossEntropy => {
            if spec.head != OutputHead::Logits {
                return Err(Error::Shape("cross-entropy needs a logits head".into()));
            }
            if targets.len() != n {
                return Err(Error::Shape(format!(
                    "{} class targets for {n} rows",
                    targets.len()
                )));
            }
            let k = spec.output_width();
            if targets
                .iter()
                .any(|&t| t.fract() != 0.0 || t < 0.0 || t >= k as f64)
            {
                return Err(Error::Shape(format!(
                    "class targets must be integers in 0..{k}"
                )));
            }
        }
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("targets".into()));
    }
    Ok(())
}

/// Batch-mean loss. MSE averages over every output entry; cross-entropy
/// averages `-log softmax(z)[t]` over rows using log-sum-exp.
pub fn loss(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[f64],
    targets: &[f64],
    n: usize,
    kind: LossKind,
) -> Result<f64> {
    check_targets(spec, targets, n, kind)?;
    let out = forward(spec, params, inputs, n)?;
    Ok(loss_and_seed(&out, targets, n, spec.output_width(), kind).0)
}

/// Loss value and `dL/dz` at the output layer.
fn loss_and_seed(
    out: &[f64],
    targets: &[f64],
    n: usize,
    width: usize,
    kind: LossKind,
) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Mse => {
            let m = out.len() as f64;
            let mut total = 0.0;
            let seed = out
                .iter()
                .zip(targets)
                .map(|(&o, &t)| {
                    let e = o - t;
                    total += e * e;
                    2.0 * e / m
                })
                .collect();
            (total / m, seed)
        }
        LossKind::CrossEntropy => {
            let mut total = 0.0;
            let mut seed = Vec::with_capacity(out.len());
            for (row, &t) in out.chunks(width).zip(targets) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
                let t = t as usize;
                total += lse - row[t];
                for (k, &z) in row.iter().enumerate() {
                    let p = (z - lse).exp();
                    let onehot = if k == t { 1.0 } else { 0.0 };
                    seed.push((p - onehot) / n as f64);
                }
            }
            (total / n as f64, seed)
        }
    }
}

/// Reverse-mode gradient of the batch-mean loss. Returns the loss and the
/// gradient laid out like `params`.
pub fn grad(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[f64],
    targets: &[f64],
    n: usize,
    kind: LossKind,
) -> Result<(f64, Parameters)> {
    check_input(spec, inputs, n)?;
    params.check_shapes(spec)?;
    check_targets(spec, targets, n, kind)?;
    let trace = forward_trace(spec, params, inputs, n)?;
    let out = trace.post.last().expect("at least one layer");
    let (value, mut delta) = loss_and_seed(out, targets, n, spec.output_width(), kind);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut grads = Parameters::zeros(spec);
    for l in (0..spec.n_layers()).rev() {
        let layer = &params.layers[l];
        let (fi, fo) = (layer.fan_in, layer.fan_out);
        let input = if l == 0 { inputs } else { &trace.post[l - 1] };
        let g = &mut grads.layers[l];
        for r in 0..n {
            let dz = &delta[r * fo..(r + 1) * fo];
            for (gb, &d) in g.b.iter_mut().zip(dz) {
                *gb += d;
            }
            let x = &input[r * fi..(r + 1) * fi];
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let gw = &mut g.w[i * fo..(i + 1) * fo];
                for (gwo, &d) in gw.iter_mut().zip(dz) {
                    *gwo += xi * d;
                }
            }
        }
        if l == 0 {
            break;
        }
        // propagate through W and the activation of layer l - 1
        let pre = &trace.pre[l - 1];
        let mut prev = vec![0.0; n * fi];
        for r in 0..n {
            let dz = &delta[r * fo..(r + 1) * fo];
            for i in 0..fi {
                if pre[r * fi + i] <= 0.0 {
                    continue;
                }
                let wi = &layer.w[i * fo..(i + 1) * fo];
                prev[r * fi + i] = wi.iter().zip(dz).map(|(w, d)| w * d).sum();
            }
        }
        if prev.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("layer {} gradient", l - 1)));
        }
        delta = prev;
    }
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn zero_network_outputs_zero() {
        let spec = NetworkSpec::new(3, &[4], 1, OutputHead::Linear).unwrap();
        let params = Parameters::zeros(&spec);
        let out = forward(&spec, &params, &[1.0, -2.0, 3.0, 0.5, 0.5, 0.5], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layers_pass_positive_inputs() {
        let spec = NetworkSpec::new(2, &[2], 2, OutputHead::Linear).unwrap();
        let mut params = Parameters::zeros(&spec);
        for l in &mut params.layers {
            l.w = vec![1.0, 0.0, 0.0, 1.0];
        }
        let x = [0.25, 3.0];
        assert_eq!(forward(&spec, &params, &x, 1).unwrap(), x.to_vec());
    }

    #[test]
    fn hand_derivative_of_square_loss() {
        // hidden unit: relu(x) with weight 1, output weight 1, so f = x
        let spec = NetworkSpec::new(1, &[1], 1, OutputHead::Linear).unwrap();
        let mut params = Parameters::zeros(&spec);
        params.layers[0].w = vec![1.0];
        params.layers[1].w = vec![1.0];
        let (l, g) = grad(&spec, &params, &[1.0], &[0.0], 1, LossKind::Mse).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.layers[1].w, vec![2.0]);
        assert_eq!(g.layers[1].b, vec![2.0]);
        assert_eq!(g.layers[0].w, vec![2.0]);
    }

    #[test]
    fn gradient_vanishes_at_minimum() {
        let spec = NetworkSpec::new(3, &[5], 2, OutputHead::Linear).unwrap();
        let params = Parameters::init(&spec, &mut seed::rng(1, &[]));
        let x = [0.1, 0.2, -0.3, 1.0, 0.0, 2.0];
        let targets = forward(&spec, &params, &x, 2).unwrap();
        let (l, g) = grad(&spec, &params, &x, &targets, 2, LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rows_are_normalized_and_shift_invariant() {
        let logits = [1.0, 2.0, 3.0, 1000.0, -1000.0, 0.0];
        let p = softmax_rows(&logits, 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted: Vec<f64> = logits.iter().map(|v| v + 5.0).collect();
        let q = softmax_rows(&shifted, 3);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(argmax(&p[..3]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let spec = NetworkSpec::new(2, &[3], 1, OutputHead::Linear).unwrap();
        let params = Parameters::zeros(&spec);
        assert!(matches!(
            forward(&spec, &params, &[1.0], 1),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            forward(&spec, &params, &[1.0, f64::NAN], 1),
            Err(Error::NonFinite(_))
        ));
        let mut big = Parameters::init(&spec, &mut seed::rng(0, &[]));
        big.layers[0].w = vec![f64::MAX; 6];
        let err = forward(&spec, &big, &[1e308, 1e308], 1).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        assert!(NetworkSpec::new(2, &[], 1, OutputHead::Linear).is_err());
        assert!(grad(
            &spec,
            &params,
            &[1.0, 1.0],
            &[0.0],
            1,
            LossKind::CrossEntropy
        )
        .is_err());
    }
}
