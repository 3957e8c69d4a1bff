//! Seeded synthetic datasets: the two-feature toy problem and a tabular
//! stand-in shaped like the breast-cancer benchmark (699 rows, ten integer
//! features in 1..=10, binary label).

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ColumnKind, ColumnSpec, Dataset, Encoding, RawTable, Record, Schema};
use crate::error::Result;
use crate::rng::seeded;

pub const TOY_RECORDS: usize = 1181;
/// Isolated record planted on the far side of the class-0 cluster, labelled 1.
pub const TOY_OUTLIER_ID: &str = "toy-outlier";
/// Record planted at the centre of the class-0 cluster.
pub const TOY_CONTROL_ID: &str = "toy-core";

const TOY_SCATTER: usize = 24;
const TOY_OUTLIER_AT: [f64; 2] = [-2.5, 3.0];
const TOY_CLASS_CENTERS: [[f64; 2]; 2] = [[-1.0, 0.0], [1.0, 0.0]];
const TOY_SPREAD: f64 = 0.7;

/// Two overlapping Gaussian class clusters, about 2% uniformly scattered
/// points with random labels, plus one planted outlier and one planted
/// cluster-core record.
pub fn generate_toy(seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let noise = Normal::new(0.0, TOY_SPREAD).expect("valid spread");
    let clustered = TOY_RECORDS - TOY_SCATTER - 2;
    let mut records = Vec::with_capacity(TOY_RECORDS);
    for i in 0..clustered {
        let label = i % 2;
        let c = TOY_CLASS_CENTERS[label];
        let features = vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)];
        records.push(Record::new(format!("toy-{i:04}"), features, label));
    }
    for i in 0..TOY_SCATTER {
        let features = vec![rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)];
        let label = rng.random_range(0..2);
        records.push(Record::new(format!("toy-{:04}", clustered + i), features, label));
    }
    records.push(Record::new(TOY_OUTLIER_ID, TOY_OUTLIER_AT.to_vec(), 1));
    records.push(Record::new(TOY_CONTROL_ID, TOY_CLASS_CENTERS[0].to_vec(), 0));
    Dataset::new("toy", records, 2).expect("toy generator produces a valid dataset")
}

pub const CANCER_RECORDS: usize = 699;
const CANCER_FEATURES: usize = 10;
const CANCER_MALIGNANT_RATE: f64 = 0.345;
const CANCER_ATYPICAL_RATE: f64 = 0.035;

pub fn cancer_like_schema() -> Schema {
    Schema {
        columns: (1..=CANCER_FEATURES)
            .map(|j| ColumnSpec {
                name: format!("f{j}"),
                kind: ColumnKind::Numeric,
            })
            .collect(),
        label: "class".into(),
        id: Some("id".into()),
    }
}

/// Raw (unencoded) table: benign rows concentrate on low scores, malignant
/// rows spread over high scores with a per-row severity, and a few atypical
/// rows draw every feature uniformly with a random label.
pub fn generate_cancer_like(seed: u64) -> RawTable {
    let mut rng = seeded(seed);
    let jitter = Normal::new(0.0, 1.6).expect("valid jitter");
    let mut header = vec!["id".to_string()];
    header.extend((1..=CANCER_FEATURES).map(|j| format!("f{j}")));
    header.push("class".into());

    let mut rows = Vec::with_capacity(CANCER_RECORDS);
    for i in 0..CANCER_RECORDS {
        let kind: f64 = rng.random();
        let (values, malignant): (Vec<i64>, bool) = if kind < CANCER_ATYPICAL_RATE {
            let v = (0..CANCER_FEATURES).map(|_| rng.random_range(1..=10)).collect();
            (v, rng.random_bool(0.5))
        } else if kind < CANCER_ATYPICAL_RATE + CANCER_MALIGNANT_RATE {
            let severity = rng.random_range(0.35..1.0);
            let v = (0..CANCER_FEATURES)
                .map(|_| (1.0f64 + 9.0 * severity + jitter.sample(&mut rng)).round().clamp(1.0, 10.0) as i64)
                .collect();
            (v, true)
        } else {
            let v = (0..CANCER_FEATURES)
                .map(|_| {
                    let u: f64 = rng.random_range(f64::EPSILON..1.0);
                    (1.0 + (-u.ln() / 1.3).floor()).min(10.0) as i64
                })
                .collect();
            (v, false)
        };
        let mut row = vec![format!("p{i:03}")];
        row.extend(values.iter().map(i64::to_string));
        row.push(if malignant { "4" } else { "2" }.to_string());
        rows.push(row);
    }
    RawTable::new(header, rows)
}

/// The generated table, standardized with an encoding fit on itself.
pub fn cancer_like_dataset(seed: u64) -> Result<Dataset> {
    let table = generate_cancer_like(seed);
    Encoding::fit(&table, &cancer_like_schema())?.encode(&table, "cancer-like")
}
