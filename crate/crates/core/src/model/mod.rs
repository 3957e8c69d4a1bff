//! Fully connected softmax classifier with analytic gradients with respect to
//! both parameters and inputs.

mod io;
mod train;

use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};

pub use io::{load_model, save_model, ModelFile};
pub use train::{train, train_records, update, TrainingConfig};

/// Predicted probabilities are floored here before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// `-ln(PROBABILITY_FLOOR)`, the largest loss `log_loss` reports.
pub fn max_log_loss() -> f64 {
    -PROBABILITY_FLOOR.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Layer sizes run from the input dimension through the hidden widths to the
/// class count. Hidden layers use `hidden_activation`; the output layer is
/// linear and followed by softmax.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation) -> Result<Self> {
        let spec = ModelSpec {
            layer_sizes,
            hidden_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("a model needs at least an input and an output size".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.class_count() < 2 {
            return Err(Error::Config("a classifier needs at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Dense layer; `weights` is row-major `outputs x inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in self.weights.chunks_exact(self.inputs).zip(&self.bias).enumerate() {
            out[o] = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
}

/// Per-layer pre-activations and outputs of one forward pass.
#[derive(Clone, Debug, Default)]
pub(crate) struct Trace {
    /// `outputs[0]` is the input; `outputs[l + 1]` the output of layer `l`.
    outputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ModelParams {
            spec: spec.clone(),
            layers: spec.layer_sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count()
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: features.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn new_trace(&self) -> Trace {
        let sizes = &self.spec.layer_sizes;
        Trace {
            outputs: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            pre: sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
            delta: Vec::with_capacity(*sizes.iter().max().unwrap_or(&0)),
            delta_prev: Vec::with_capacity(*sizes.iter().max().unwrap_or(&0)),
        }
    }

    /// Forward pass; afterwards `trace.pre.last()` holds the logits.
    pub(crate) fn forward(&self, x: &[f64], trace: &mut Trace) {
        trace.outputs[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        let act = self.spec.hidden_activation;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = trace.outputs.split_at_mut(l + 1);
            let pre = &mut trace.pre[l];
            layer.affine(&before[l], pre);
            let out = &mut after[0];
            if l == last {
                out.copy_from_slice(pre);
            } else {
                for (o, z) in out.iter_mut().zip(pre.iter()) {
                    *o = act.apply(*z);
                }
            }
        }
    }

    /// Back-propagates `dlogits` through the network. When `grad` is given,
    /// parameter gradients are accumulated into it scaled by `scale`; when
    /// `input_grad` is given, the gradient with respect to the input is
    /// written there.
    pub(crate) fn backward(
        &self,
        trace: &mut Trace,
        dlogits: &[f64],
        mut grad: Option<(&mut ModelParams, f64)>,
        input_grad: Option<&mut [f64]>,
    ) {
        let act = self.spec.hidden_activation;
        trace.delta.clear();
        trace.delta.extend_from_slice(dlogits);
        let want_input = input_grad.is_some();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_prev = &trace.outputs[l];
            if let Some((g, scale)) = grad.as_mut() {
                let gl = &mut g.layers[l];
                for (o, &d) in trace.delta.iter().enumerate() {
                    let d = d * *scale;
                    gl.bias[o] += d;
                    let row = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (w, a) in row.iter_mut().zip(a_prev) {
                        *w += d * a;
                    }
                }
            }
            if l == 0 && !want_input {
                break;
            }
            trace.delta_prev.clear();
            trace.delta_prev.resize(layer.inputs, 0.0);
            for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(&trace.delta) {
                for (dp, w) in trace.delta_prev.iter_mut().zip(row) {
                    *dp += w * d;
                }
            }
            if l > 0 {
                let pre = &trace.pre[l - 1];
                for (i, dp) in trace.delta_prev.iter_mut().enumerate() {
                    *dp *= act.derivative(pre[i], a_prev[i]);
                }
            }
            std::mem::swap(&mut trace.delta, &mut trace.delta_prev);
        }
        if let Some(out) = input_grad {
            out.copy_from_slice(&trace.delta);
        }
    }

    /// Pre-softmax outputs of the last layer.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let mut trace = self.new_trace();
        self.forward(features, &mut trace);
        Ok(trace.pre.last().cloned().unwrap_or_default())
    }

    /// Probability vector over classes.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(features)?))
    }

    /// `-ln p_y` for the record's label, with `p_y` floored at
    /// [`PROBABILITY_FLOOR`]. Computed from the logits so that losses of
    /// confidently correct predictions keep their precision.
    pub fn log_loss(&self, record: &Record) -> Result<f64> {
        if record.label >= self.class_count() {
            return Err(Error::Config(format!(
                "record `{}` has label {} outside {} classes",
                record.id,
                record.label,
                self.class_count()
            )));
        }
        let z = self.logits(&record.features)?;
        Ok(cross_entropy(&z, record.label).clamp(0.0, max_log_loss()))
    }

    /// Gradient of `objective(predict(x))` with respect to `x`.
    pub fn input_gradient(&self, features: &[f64], objective: &dyn Objective) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let mut trace = self.new_trace();
        self.forward(features, &mut trace);
        let probs = softmax(trace.pre.last().expect("at least one layer"));
        let g = objective.gradient(&probs);
        let dlogits = softmax_vjp(&probs, &g);
        let mut out = vec![0.0; features.len()];
        self.backward(&mut trace, &dlogits, None, Some(&mut out));
        Ok(out)
    }

    /// Mean cross-entropy over `batch` plus `l2 / 2 * sum(w^2)` over weight
    /// matrices, and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[&Record], l2: f64) -> Result<(f64, ModelParams)> {
        let mut grad = ModelParams::zeros(&self.spec);
        let mut trace = self.new_trace();
        let loss = self.accumulate_gradient(batch, l2, &mut trace, &mut grad)?;
        Ok((loss, grad))
    }

    pub(crate) fn accumulate_gradient(
        &self,
        batch: &[&Record],
        l2: f64,
        trace: &mut Trace,
        grad: &mut ModelParams,
    ) -> Result<f64> {
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; self.class_count()];
        for r in batch {
            self.check_input(&r.features)?;
            self.forward(&r.features, trace);
            let z = trace.pre.last().expect("at least one layer");
            loss += cross_entropy(z, r.label) * scale;
            let p = softmax(z);
            for (c, (d, pc)) in dlogits.iter_mut().zip(&p).enumerate() {
                *d = pc - if c == r.label { 1.0 } else { 0.0 };
            }
            self.backward(trace, &dlogits, Some((&mut *grad, scale)), None);
        }
        if l2 > 0.0 {
            for (gl, l) in grad.layers.iter_mut().zip(&self.layers) {
                for (g, w) in gl.weights.iter_mut().zip(&l.weights) {
                    *g += l2 * w;
                    loss += 0.5 * l2 * w * w;
                }
            }
        }
        Ok(loss)
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.parameter_count() {
            return Err(Error::Dimension {
                expected: spec.parameter_count(),
                actual: flat.len(),
            });
        }
        let mut p = ModelParams::zeros(spec);
        let mut at = 0;
        for l in &mut p.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(p)
    }

    pub fn l2_norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn accuracy<'a>(&self, records: impl IntoIterator<Item = &'a Record>) -> Result<f64> {
        let mut n = 0usize;
        let mut hits = 0usize;
        for r in records {
            let z = self.logits(&r.features)?;
            n += 1;
            if argmax(&z) == r.label {
                hits += 1;
            }
        }
        Ok(if n == 0 { f64::NAN } else { hits as f64 / n as f64 })
    }
}

/// A differentiable scalar function of a prediction vector.
pub trait Objective {
    fn value(&self, probs: &[f64]) -> f64;
    fn gradient(&self, probs: &[f64]) -> Vec<f64>;
}

/// Probability assigned to one class.
#[derive(Clone, Copy, Debug)]
pub struct ClassProbability(pub usize);

impl Objective for ClassProbability {
    fn value(&self, probs: &[f64]) -> f64 {
        probs[self.0]
    }

    fn gradient(&self, probs: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; probs.len()];
        g[self.0] = 1.0;
        g
    }
}

/// Fixed linear combination `sum_c w_c p_c`.
#[derive(Clone, Debug)]
pub struct WeightedProbabilities(pub Vec<f64>);

impl Objective for WeightedProbabilities {
    fn value(&self, probs: &[f64]) -> f64 {
        self.0.iter().zip(probs).map(|(w, p)| w * p).sum()
    }

    fn gradient(&self, _probs: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Unclamped `-ln softmax(z)[label]`.
pub fn cross_entropy(z: &[f64], label: usize) -> f64 {
    log_sum_exp(z) - z[label]
}

/// Vector-Jacobian product of softmax: `J^T g` with `J = diag(p) - p p^T`.
fn softmax_vjp(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec() -> ModelSpec {
        ModelSpec::new(vec![3, 4, 2], Activation::Tanh).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(vec![3], Activation::Tanh).is_err());
        assert!(ModelSpec::new(vec![3, 0, 2], Activation::Tanh).is_err());
        assert!(ModelSpec::new(vec![3, 1], Activation::Relu).is_err());
        assert_eq!(spec().parameter_count(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn zero_params_give_uniform_prediction() {
        let p = ModelParams::zeros(&spec());
        assert_eq!(p.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(p.logits(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn equal_logits_give_half() {
        for z in [-50.0, 0.0, 3.5, 700.0] {
            assert_eq!(softmax(&[z, z]), vec![0.5, 0.5]);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = ModelParams::zeros(&spec());
        assert!(matches!(p.predict(&[1.0]), Err(Error::Dimension { expected: 3, actual: 1 })));
        assert!(p.input_gradient(&[1.0], &ClassProbability(0)).is_err());
    }

    #[test]
    fn log_loss_reference_values() {
        let spec = ModelSpec::new(vec![1, 2], Activation::Tanh).unwrap();
        let mut p = ModelParams::zeros(&spec);
        let r = Record::new("r", vec![0.0], 0);
        assert_abs_diff_eq!(p.log_loss(&r).unwrap(), 0.5f64.ln().abs(), epsilon = 1e-12);
        // p_y -> 1
        p.layers[0].bias = vec![800.0, 0.0];
        assert_abs_diff_eq!(p.log_loss(&r).unwrap(), 0.0, epsilon = 1e-300);
        // p_y -> 0 is clamped at the floor
        p.layers[0].bias = vec![-800.0, 0.0];
        assert_abs_diff_eq!(p.log_loss(&r).unwrap(), 27.631021115928547, epsilon = 1e-9);
        assert_abs_diff_eq!(max_log_loss(), 27.631, epsilon = 1e-3);
    }

    #[test]
    fn constant_objective_has_zero_input_gradient() {
        let mut p = ModelParams::zeros(&spec());
        for (i, w) in p.layers[0].weights.iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        let g = p
            .input_gradient(&[0.3, -0.2, 0.9], &WeightedProbabilities(vec![0.0, 0.0]))
            .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        // sum of all class probabilities is constant
        let g = p
            .input_gradient(&[0.3, -0.2, 0.9], &WeightedProbabilities(vec![1.0, 1.0]))
            .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn flat_round_trip() {
        let s = spec();
        let flat: Vec<f64> = (0..s.parameter_count()).map(|i| i as f64).collect();
        let p = ModelParams::from_flat(&s, &flat).unwrap();
        assert_eq!(p.to_flat(), flat);
        assert!(ModelParams::from_flat(&s, &flat[1..]).is_err());
    }
}
