use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Training-set membership for `n_models` target models. Each repeat splits
/// the record pool into two equal halves, so every record is a member of
/// exactly half of the models.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_models: usize,
    pub seed: u64,
    /// Record ids in each model's training set, in dataset order.
    pub membership: Vec<Vec<String>>,
}

impl SplitPlan {
    pub fn is_member(&self, model: usize, id: &str) -> bool {
        self.membership[model].iter().any(|m| m == id)
    }

    /// Membership matrix, `[model][record]`, over the records of `dataset`.
    pub fn matrix(&self, dataset: &Dataset) -> Vec<Vec<bool>> {
        let index = dataset.id_index();
        self.membership
            .iter()
            .map(|ids| {
                let mut row = vec![false; dataset.len()];
                for id in ids {
                    if let Some(&i) = index.get(id.as_str()) {
                        row[i] = true;
                    }
                }
                row
            })
            .collect()
    }
}

pub fn make_split_plan(dataset: &Dataset, n_repeats: usize, seed: u64) -> Result<SplitPlan> {
    let n = dataset.len();
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Config(format!("split plans need an even, non-zero record count (got {n})")));
    }
    if n_repeats == 0 {
        return Err(Error::Config("n_repeats must be positive".into()));
    }
    let mut membership = Vec::with_capacity(2 * n_repeats);
    for repeat in 0..n_repeats {
        let mut rng = seeded(derive_seed(seed, repeat as u64));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (a, b) = order.split_at(n / 2);
        for half in [a, b] {
            let mut half = half.to_vec();
            half.sort_unstable();
            membership.push(half.into_iter().map(|i| dataset.records[i].id.clone()).collect());
        }
    }
    Ok(SplitPlan {
        n_models: 2 * n_repeats,
        seed,
        membership,
    })
}

/// Ids drawn uniformly with replacement from a source dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSample {
    pub source: String,
    pub ids: Vec<String>,
    pub seed: u64,
}

impl BootstrapSample {
    pub fn contains(&self, id: &str) -> bool {
        self.ids.iter().any(|i| i == id)
    }

    pub fn distinct(&self) -> usize {
        let mut ids: Vec<&str> = self.ids.iter().map(String::as_str).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

pub fn bootstrap_sample(dataset: &Dataset, size: usize, seed: u64) -> Result<BootstrapSample> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot bootstrap an empty dataset".into()));
    }
    if size == 0 {
        return Err(Error::Config("bootstrap size must be positive".into()));
    }
    let mut rng = seeded(seed);
    let n = dataset.len();
    let ids = (0..size).map(|_| dataset.records[rng.random_range(0..n)].id.clone()).collect();
    Ok(BootstrapSample {
        source: dataset.name.clone(),
        ids,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use std::collections::HashSet;

    fn ds(n: usize) -> Dataset {
        Dataset::new(
            "pool",
            (0..n).map(|i| Record::new(format!("r{i}"), vec![i as f64], i % 2)).collect(),
            2,
        )
        .unwrap()
    }

    #[test]
    fn every_record_in_exactly_n_repeats_sets() {
        let d = ds(40);
        let plan = make_split_plan(&d, 50, 3).unwrap();
        assert_eq!(plan.n_models, 100);
        let m = plan.matrix(&d);
        for rec in 0..d.len() {
            assert_eq!(m.iter().filter(|row| row[rec]).count(), 50);
        }
        for row in &m {
            assert_eq!(row.iter().filter(|&&b| b).count(), 20);
        }
    }

    #[test]
    fn halves_partition_the_pool() {
        let d = ds(10);
        let plan = make_split_plan(&d, 1, 9).unwrap();
        let a: HashSet<_> = plan.membership[0].iter().collect();
        let b: HashSet<_> = plan.membership[1].iter().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 10);
    }

    #[test]
    fn odd_pool_rejected() {
        assert!(make_split_plan(&ds(7), 2, 0).is_err());
    }

    #[test]
    fn bootstrap_basics() {
        let one = ds(1);
        let s = bootstrap_sample(&one, 5, 1).unwrap();
        assert_eq!(s.ids, vec!["r0"; 5]);
        assert!(bootstrap_sample(&one, 0, 1).is_err());
        let d = ds(200);
        assert_ne!(bootstrap_sample(&d, 200, 1).unwrap().ids, bootstrap_sample(&d, 200, 2).unwrap().ids);
        assert_eq!(bootstrap_sample(&d, 200, 1).unwrap(), bootstrap_sample(&d, 200, 1).unwrap());
    }
}
