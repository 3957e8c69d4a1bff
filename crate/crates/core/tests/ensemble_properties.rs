use std::sync::OnceLock;

use gmia_core::data::{cancer_like_dataset, Record};
use gmia_core::ensemble::{
    build_positive_reference_models, ensemble_label_probabilities, load_ensemble, save_ensemble, Ensemble, PositiveConfig,
};
use gmia_core::eval::{partition, selection_params, train_reference, Partition, ProtocolConfig, SelectionThresholds};
use gmia_core::selection::{select_vulnerable, ExpectedNeighborRatio};
use gmia_core::model::train_records;
use gmia_core::rng::derive_named;

struct Setup {
    config: ProtocolConfig,
    partition: Partition,
    reference: Ensemble,
    /// Records flagged at a loose threshold; the positive-update checks are
    /// about these, since typical records barely move under any update.
    vulnerable: Vec<Record>,
}

/// Cancer-scale: 200 target-eligible records, a 499-record reference pool,
/// k = 30 models on bootstrap samples of 100.
fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let data = cancer_like_dataset(7).unwrap();
        let mut config = ProtocolConfig::cancer(data.dim());
        config.null_holdout = 0;
        let partition = partition(&data, &config).unwrap();
        let reference = train_reference(&partition, &config).unwrap();
        let loose = SelectionThresholds {
            delta: 0.05,
            beta: 0.5,
            ratio: ExpectedNeighborRatio::Density,
        };
        let params = selection_params(&config, &partition, &loose);
        let vulnerable = select_vulnerable(&partition.target_pool, &partition.reference_pool, &reference, &params)
            .unwrap()
            .into_iter()
            .filter(|v| v.selected)
            .map(|v| partition.target_pool.get(&v.record_id).unwrap().clone())
            .collect();
        Setup {
            config,
            partition,
            reference,
            vulnerable,
        }
    })
}

#[test]
fn cancer_scale_reference_models_fit_their_samples() {
    let s = setup();
    assert_eq!(s.partition.reference_pool.len(), 499);
    assert_eq!(s.reference.k(), 30);
    let mut accs = Vec::new();
    for (m, manifest) in s.reference.models.iter().zip(&s.reference.manifests) {
        assert_eq!(manifest.ids.len(), 100);
        let recs = s.partition.reference_pool.resolve(&manifest.ids).unwrap();
        accs.push(m.accuracy(recs).unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(mean >= 0.9, "mean training accuracy {mean}");
}

#[test]
fn rebuilding_from_manifests_is_bit_exact() {
    let s = setup();
    for (i, (m, manifest)) in s.reference.models.iter().zip(&s.reference.manifests).enumerate().step_by(7) {
        let recs = s.partition.reference_pool.resolve(&manifest.ids).unwrap();
        let cfg = s.config.training.with_seed(derive_named(manifest.seed, "train"));
        let rebuilt = train_records(&recs, &s.config.model, &cfg).unwrap();
        assert_eq!(&rebuilt, m, "model {i}");
    }
    let dir = tempfile::tempdir().unwrap();
    save_ensemble(dir.path(), &s.reference).unwrap();
    assert_eq!(load_ensemble(dir.path()).unwrap(), s.reference);
}

fn positive_for(s: &Setup, target: &Record) -> Ensemble {
    let mut pc = PositiveConfig::default();
    pc.update.seed = 5;
    build_positive_reference_models(&s.reference, &s.partition.reference_pool, target, &pc).unwrap()
}

#[test]
fn positive_models_lower_the_target_loss() {
    let s = setup();
    assert!(s.vulnerable.len() >= 5);
    for target in &s.vulnerable {
        let pos = positive_for(s, target);
        let lower = pos
            .models
            .iter()
            .zip(&s.reference.models)
            .filter(|(p, r)| p.log_loss(target).unwrap() <= r.log_loss(target).unwrap())
            .count();
        assert!(lower * 10 >= 9 * pos.k(), "{}: {lower} of {}", target.id, pos.k());
    }
}

fn mean_shift(pos: &Ensemble, reference: &Ensemble, r: &Record) -> f64 {
    let a = ensemble_label_probabilities(pos, &r.features, r.label).unwrap();
    let b = ensemble_label_probabilities(reference, &r.features, r.label).unwrap();
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[test]
fn positive_update_moves_the_target_more_than_a_bystander() {
    let s = setup();
    let pool = &s.partition.target_pool.records;
    let trials = s.vulnerable.len();
    let mut wins = 0;
    for (t, target) in s.vulnerable.iter().enumerate() {
        let bystander = &pool[(t * 7 + 101) % pool.len()];
        let pos = positive_for(s, target);
        if mean_shift(&pos, &s.reference, bystander) < mean_shift(&pos, &s.reference, target) {
            wins += 1;
        }
    }
    assert!(wins * 10 >= 8 * trials, "{wins} of {trials}");
}

#[test]
fn single_model_ensemble_reduces_to_predict() {
    let s = setup();
    let mut one = s.reference.clone();
    one.models.truncate(1);
    one.manifests.truncate(1);
    let r = &s.partition.target_pool.records[0];
    let p = ensemble_label_probabilities(&one, &r.features, 1).unwrap();
    assert_eq!(p, vec![one.models[0].predict(&r.features).unwrap()[1]]);

    let mut reversed = s.reference.clone();
    reversed.models.reverse();
    let mut fwd = ensemble_label_probabilities(&s.reference, &r.features, 0).unwrap();
    fwd.reverse();
    assert_eq!(ensemble_label_probabilities(&reversed, &r.features, 0).unwrap(), fwd);
}
