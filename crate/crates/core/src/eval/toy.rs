use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{generate_toy, Record, TOY_CONTROL_ID, TOY_OUTLIER_ID};
use crate::error::{Error, Result};
use crate::model::{train_records, Activation, ModelParams, ModelSpec, TrainingConfig};
use crate::par;
use crate::rng::{derive_named, derive_seed, seeded};
use crate::stats::{auc, density_histogram};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    /// Models trained with (and, separately, without) each planted record.
    pub models_per_side: usize,
    /// Background records per training set, excluding planted records.
    pub train_size: usize,
    pub model: ModelSpec,
    pub training: TrainingConfig,
    pub bins: usize,
    pub grid: usize,
}

impl ToyConfig {
    pub fn new(seed: u64) -> Self {
        ToyConfig {
            seed,
            models_per_side: 50,
            train_size: 200,
            model: ModelSpec {
                layer_sizes: vec![2, 16, 2],
                hidden_activation: Activation::Tanh,
            },
            training: TrainingConfig {
                epochs: 150,
                batch_size: 20,
                learning_rate: 0.2,
                l2: 0.0,
                seed: 0,
            },
            bins: 20,
            grid: 10,
        }
    }
}

/// In/out output distributions for one planted record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationSummary {
    pub record_id: String,
    /// Probability of the record's own label from models trained with it.
    pub in_values: Vec<f64>,
    pub out_values: Vec<f64>,
    /// Densities on `[0, 1]`, each integrating to 1.
    pub in_histogram: Vec<f64>,
    pub out_histogram: Vec<f64>,
    /// Shared area under the two histograms.
    pub overlap: f64,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCell {
    pub u: f64,
    pub v: f64,
    /// Smoothed in/out density ratio at output pair `(u, v)`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub seed: u64,
    pub bins: usize,
    pub outlier: SeparationSummary,
    pub control: SeparationSummary,
    /// The two queries behind the likelihood-ratio grid.
    pub queries: [String; 2],
    pub likelihood_grid: Vec<LikelihoodCell>,
}

fn summarize(record: &Record, models: &[ModelParams], is_in: impl Fn(usize) -> bool, bins: usize) -> Result<SeparationSummary> {
    let mut in_values = Vec::new();
    let mut out_values = Vec::new();
    for (j, m) in models.iter().enumerate() {
        let p = m.predict(&record.features)?[record.label];
        if is_in(j) {
            in_values.push(p);
        } else {
            out_values.push(p);
        }
    }
    let in_histogram = density_histogram(&in_values, 0.0, 1.0, bins);
    let out_histogram = density_histogram(&out_values, 0.0, 1.0, bins);
    let width = 1.0 / bins as f64;
    let overlap = in_histogram.iter().zip(&out_histogram).map(|(a, b)| a.min(*b) * width).sum();
    Ok(SeparationSummary {
        record_id: record.id.clone(),
        auc: auc(&in_values, &out_values),
        in_values,
        out_values,
        in_histogram,
        out_histogram,
        overlap,
    })
}

/// Trains `2 * models_per_side` models on background samples of the toy
/// dataset. The planted outlier joins the first half of the models and the
/// planted core record joins every other model, so each has balanced in and
/// out sets.
pub fn toy_demonstration(config: &ToyConfig) -> Result<ToyReport> {
    if config.models_per_side == 0 || config.bins == 0 || config.grid == 0 {
        return Err(Error::Config("toy demonstration needs models, bins and a grid".into()));
    }
    let data = generate_toy(config.seed);
    let outlier = data.get(TOY_OUTLIER_ID).expect("planted outlier").clone();
    let control = data.get(TOY_CONTROL_ID).expect("planted control").clone();
    let background: Vec<&Record> = data
        .records
        .iter()
        .filter(|r| r.id != outlier.id && r.id != control.id)
        .collect();
    if config.train_size > background.len() {
        return Err(Error::Config(format!("train size {} exceeds {} background records", config.train_size, background.len())));
    }
    let n = 2 * config.models_per_side;
    let half = config.models_per_side;
    let sample_seed = derive_named(config.seed, "toy-samples");
    let train_seed = derive_named(config.seed, "toy-train");
    let models = par::try_map_indexed(n, |j| {
        let mut rng = seeded(derive_seed(sample_seed, j as u64));
        let mut records: Vec<&Record> = sample(&mut rng, background.len(), config.train_size)
            .iter()
            .map(|i| background[i])
            .collect();
        if j < half {
            records.push(&outlier);
        }
        if j % 2 == 0 {
            records.push(&control);
        }
        train_records(&records, &config.model, &config.training.with_seed(derive_seed(train_seed, j as u64)))
    })?;

    let outlier_summary = summarize(&outlier, &models, |j| j < half, config.bins)?;
    let control_summary = summarize(&control, &models, |j| j % 2 == 0, config.bins)?;

    // second query: the background record nearest to the outlier
    let neighbor = background
        .iter()
        .min_by(|a, b| a.euclidean_distance(&outlier).total_cmp(&b.euclidean_distance(&outlier)))
        .expect("non-empty background");
    let probe = neighbor.with_label(outlier.label);
    let g = config.grid;
    let cell = |p: f64| ((p * g as f64) as usize).min(g - 1);
    let mut counts_in = vec![0usize; g * g];
    let mut counts_out = vec![0usize; g * g];
    for (j, m) in models.iter().enumerate() {
        let u = m.predict(&outlier.features)?[outlier.label];
        let v = m.predict(&probe.features)?[probe.label];
        let k = cell(u) * g + cell(v);
        if j < half {
            counts_in[k] += 1;
        } else {
            counts_out[k] += 1;
        }
    }
    let alpha = 0.5;
    let total = alpha * (g * g) as f64;
    let (n_in, n_out) = (half as f64, (n - half) as f64);
    let mut likelihood_grid = Vec::with_capacity(g * g);
    for a in 0..g {
        for b in 0..g {
            let k = a * g + b;
            let p_in = (counts_in[k] as f64 + alpha) / (n_in + total);
            let p_out = (counts_out[k] as f64 + alpha) / (n_out + total);
            likelihood_grid.push(LikelihoodCell {
                u: (a as f64 + 0.5) / g as f64,
                v: (b as f64 + 0.5) / g as f64,
                ratio: p_in / p_out,
            });
        }
    }
    Ok(ToyReport {
        seed: config.seed,
        bins: config.bins,
        outlier: outlier_summary,
        control: control_summary,
        queries: [outlier.id.clone(), neighbor.id.clone()],
        likelihood_grid,
    })
}

/// `record_id,side,bin_lo,bin_hi,density`.
pub fn histogram_csv(report: &ToyReport) -> String {
    let mut s = String::from("record_id,side,bin_lo,bin_hi,density\n");
    let w = 1.0 / report.bins as f64;
    for summary in [&report.outlier, &report.control] {
        for (side, h) in [("in", &summary.in_histogram), ("out", &summary.out_histogram)] {
            for (i, d) in h.iter().enumerate() {
                s.push_str(&format!("{},{side},{},{},{d}\n", summary.record_id, i as f64 * w, (i + 1) as f64 * w));
            }
        }
    }
    s
}

/// `u,v,ratio` for a heatmap of the likelihood ratio over two query outputs.
pub fn likelihood_csv(report: &ToyReport) -> String {
    let mut s = String::from("u,v,ratio\n");
    for c in &report.likelihood_grid {
        s.push_str(&format!("{},{},{}\n", c.u, c.v, c.ratio));
    }
    s
}
