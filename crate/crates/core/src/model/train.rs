use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec};
use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::rng::{derive_named, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Coefficient of the `l2 / 2 * sum(w^2)` penalty on weight matrices.
    #[serde(default)]
    pub l2: f64,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 coefficient must be >= 0 (got {})", self.l2)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainingConfig { seed, ..self.clone() }
    }
}

fn check_records(records: &[&Record], spec: &ModelSpec) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    for r in records {
        if r.features.len() != spec.input_dim() {
            return Err(Error::Dimension {
                expected: spec.input_dim(),
                actual: r.features.len(),
            });
        }
        if r.label >= spec.class_count() {
            return Err(Error::Config(format!(
                "record `{}` has label {} but the model has {} classes",
                r.id,
                r.label,
                spec.class_count()
            )));
        }
    }
    Ok(())
}

/// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
fn initialize(spec: &ModelSpec, seed: u64) -> ModelParams {
    let mut rng = seeded(derive_named(seed, "init"));
    let mut p = ModelParams::zeros(spec);
    for l in &mut p.layers {
        let bound = 1.0 / (l.inputs as f64).sqrt();
        for w in &mut l.weights {
            *w = rng.random_range(-bound..=bound);
        }
    }
    p
}

fn step(params: &mut ModelParams, grad: &ModelParams, learning_rate: f64) {
    for (l, g) in params.layers.iter_mut().zip(&grad.layers) {
        for (w, d) in l.weights.iter_mut().zip(&g.weights) {
            *w -= learning_rate * d;
        }
        for (b, d) in l.bias.iter_mut().zip(&g.bias) {
            *b -= learning_rate * d;
        }
    }
}

fn clear(grad: &mut ModelParams) {
    for g in &mut grad.layers {
        g.weights.iter_mut().for_each(|v| *v = 0.0);
        g.bias.iter_mut().for_each(|v| *v = 0.0);
    }
}

pub fn train(dataset: &Dataset, spec: &ModelSpec, config: &TrainingConfig) -> Result<ModelParams> {
    let records: Vec<&Record> = dataset.records.iter().collect();
    train_records(&records, spec, config)
}

/// Mini-batch gradient descent on mean log loss plus the L2 penalty. Each
/// epoch is one pass over the records in a freshly shuffled order; the last
/// batch of an epoch may be short.
pub fn train_records(records: &[&Record], spec: &ModelSpec, config: &TrainingConfig) -> Result<ModelParams> {
    spec.validate()?;
    config.validate()?;
    check_records(records, spec)?;
    if config.batch_size > records.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training records",
            config.batch_size,
            records.len()
        )));
    }
    let mut params = initialize(spec, config.seed);
    let mut grad = ModelParams::zeros(spec);
    let mut trace = params.new_trace();
    let mut rng = seeded(derive_named(config.seed, "shuffle"));
    let mut order: Vec<&Record> = records.to_vec();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            clear(&mut grad);
            let loss = params.accumulate_gradient(batch, config.l2, &mut trace, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            step(&mut params, &grad, config.learning_rate);
        }
    }
    if !params.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs.saturating_sub(1),
        });
    }
    Ok(params)
}

/// `config.epochs` full-batch gradient steps on `batch` only, starting from
/// `params`.
pub fn update(params: &ModelParams, batch: &[&Record], config: &TrainingConfig) -> Result<ModelParams> {
    config.validate()?;
    check_records(batch, &params.spec)?;
    let mut out = params.clone();
    if config.learning_rate == 0.0 {
        return Ok(out);
    }
    let mut grad = ModelParams::zeros(&params.spec);
    let mut trace = out.new_trace();
    for epoch in 0..config.epochs {
        clear(&mut grad);
        let loss = out.accumulate_gradient(batch, config.l2, &mut trace, &mut grad)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        step(&mut out, &grad, config.learning_rate);
    }
    if !out.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs.saturating_sub(1),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_toy;
    use crate::model::Activation;

    fn cfg(epochs: usize, batch: usize, lr: f64) -> TrainingConfig {
        TrainingConfig {
            epochs,
            batch_size: batch,
            learning_rate: lr,
            l2: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn memorizes_a_single_record() {
        let spec = ModelSpec::new(vec![2, 4, 2], Activation::Tanh).unwrap();
        let ds = Dataset::new("one", vec![Record::new("a", vec![0.4, -1.2], 1)], 2).unwrap();
        let p = train(&ds, &spec, &cfg(1000, 1, 0.1)).unwrap();
        assert!(p.log_loss(&ds.records[0]).unwrap() < 0.01);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let spec = ModelSpec::new(vec![2, 5, 2], Activation::Relu).unwrap();
        let ds = generate_toy(1).subset("s", &(0..200).collect::<Vec<_>>());
        let a = train(&ds, &spec, &cfg(5, 16, 0.05)).unwrap();
        let b = train(&ds, &spec, &cfg(5, 16, 0.05)).unwrap();
        let bits = |p: &ModelParams| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = train(&ds, &spec, &cfg(5, 16, 0.05).with_seed(43)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn configuration_errors() {
        let spec = ModelSpec::new(vec![2, 2], Activation::Tanh).unwrap();
        let ds = generate_toy(1).subset("s", &[0, 1, 2]);
        assert!(train(&ds, &spec, &cfg(1, 4, 0.1)).is_err());
        let wrong = ModelSpec::new(vec![3, 2], Activation::Tanh).unwrap();
        assert!(matches!(train(&ds, &wrong, &cfg(1, 1, 0.1)), Err(Error::Dimension { .. })));
        let empty = Dataset {
            name: "e".into(),
            records: vec![],
            class_count: 2,
            encoding: None,
        };
        assert!(train(&empty, &spec, &cfg(1, 1, 0.1)).is_err());
    }

    #[test]
    fn divergence_names_the_epoch() {
        let spec = ModelSpec::new(vec![2, 8, 2], Activation::Relu).unwrap();
        let ds = generate_toy(1).subset("s", &(0..100).collect::<Vec<_>>());
        match train(&ds, &spec, &cfg(50, 10, 1e6)) {
            Err(Error::Divergence { epoch }) => assert!(epoch < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn update_semantics() {
        let spec = ModelSpec::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        let ds = generate_toy(2).subset("s", &(0..50).collect::<Vec<_>>());
        let p = train(&ds, &spec, &cfg(3, 10, 0.1)).unwrap();
        let rec = &ds.records[7];
        let frozen = update(&p, &[rec], &cfg(5, 1, 0.0)).unwrap();
        assert_eq!(frozen, p);
        let nudged = update(&p, &[rec], &cfg(1, 1, 1e-3)).unwrap();
        assert!(nudged.log_loss(rec).unwrap() < p.log_loss(rec).unwrap());
        assert_eq!(update(&p, &[rec], &cfg(4, 1, 0.05)).unwrap(), update(&p, &[rec], &cfg(4, 1, 0.05)).unwrap());
        let zero_steps = update(&p, &[rec], &cfg(0, 1, 0.5)).unwrap();
        assert_eq!(zero_steps, p);
    }
}
