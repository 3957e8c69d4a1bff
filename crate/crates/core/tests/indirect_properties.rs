use std::sync::OnceLock;

use gmia_core::data::{cancer_like_dataset, generate_toy, Dataset, FeatureBounds, Record};
use gmia_core::direct::direct_attack;
use gmia_core::ensemble::{build_positive_reference_models, build_reference_models, Ensemble, PositiveConfig};
use gmia_core::eval::{partition, selection_params, train_reference, Partition, ProtocolConfig, SelectionThresholds};
use gmia_core::indirect::{
    cluster_select, estimate_query_correlation, find_enhancing, fisher_combine, indirect_attack, influence, kost_combine,
    optimize_enhancing, probability_shifts, IndirectParams, PreparedIndirect,
};
use gmia_core::model::{Activation, ModelSpec, TrainingConfig};
use gmia_core::rng::seeded;
use gmia_core::selection::{select_vulnerable, ExpectedNeighborRatio};
use proptest::prelude::*;
use rand::Rng;

struct Setup {
    partition: Partition,
    reference: Ensemble,
    bounds: FeatureBounds,
    vulnerable: Vec<Record>,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let data = cancer_like_dataset(7).unwrap();
        let config = ProtocolConfig::cancer(data.dim());
        let partition = partition(&data, &config).unwrap();
        let reference = train_reference(&partition, &config).unwrap();
        let t = SelectionThresholds {
            delta: 0.05,
            beta: 0.5,
            ratio: ExpectedNeighborRatio::Density,
        };
        let params = selection_params(&config, &partition, &t);
        let vulnerable = select_vulnerable(&partition.target_pool, &partition.reference_pool, &reference, &params)
            .unwrap()
            .into_iter()
            .filter(|v| v.selected)
            .map(|v| partition.target_pool.get(&v.record_id).unwrap().clone())
            .collect();
        Setup {
            bounds: partition.reference_pool.bounds(),
            partition,
            reference,
            vulnerable,
        }
    })
}

fn positive(s: &Setup, target: &Record) -> Ensemble {
    let mut pc = PositiveConfig::default();
    pc.update.seed = 17;
    build_positive_reference_models(&s.reference, &s.partition.reference_pool, target, &pc).unwrap()
}

#[test]
fn influence_counts_strict_increases_in_steps_of_one_over_k() {
    let s = setup();
    let target = &s.vulnerable[0];
    let pos = positive(s, target);
    let k = s.reference.k() as f64;
    let mut rng = seeded(3);
    for i in 0..20 {
        let x: Vec<f64> = s.bounds.lower.iter().zip(&s.bounds.upper).map(|(l, u)| rng.random_range(*l..=*u)).collect();
        let q = Record::new(format!("q{i}"), x, 0);
        let score = influence(target, &q, &s.reference, &pos).unwrap();
        let shifts = probability_shifts(&q.features, target.label, &s.reference, &pos).unwrap();
        let count = shifts.iter().filter(|&&d| d > 0.0).count();
        assert_eq!(score.count, count);
        assert_eq!(score.value, count as f64 / k);

        // Neutralizing one positive model removes exactly its contribution.
        let j = i % s.reference.k();
        let mut neutral = pos.clone();
        neutral.models[j] = s.reference.models[j].clone();
        let reduced = influence(target, &q, &s.reference, &neutral).unwrap();
        let expected = if shifts[j] > 0.0 { 1.0 / k } else { 0.0 };
        assert!((score.value - reduced.value - expected).abs() < 1e-15);
    }
}

#[test]
fn target_influences_itself_strongly() {
    let s = setup();
    let mut values = Vec::new();
    for target in &s.vulnerable {
        let pos = positive(s, target);
        values.push(influence(target, target, &s.reference, &pos).unwrap().value);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    assert!(mean >= 0.9, "self-influence {values:?}");
}

#[test]
fn enhancing_records_differ_from_the_target() {
    let s = setup();
    let target = &s.vulnerable[0];
    let pos = positive(s, target);
    let params = IndirectParams {
        n_candidates: 500,
        ..IndirectParams::default()
    };
    let set = find_enhancing(target, &s.reference, &pos, &s.bounds, &params, 8).unwrap();
    let accepted: Vec<_> = set.records.iter().filter(|r| r.accepted).collect();
    assert!(!accepted.is_empty());
    assert!(accepted.iter().all(|r| r.distance_to_target > 0.0 && r.influence > params.theta));
    let (lo, hi) = set.distance_range().unwrap();
    assert!(lo > 0.0 && lo <= hi);

    let copy = Record::new("copy", target.features.clone(), target.label);
    assert!(PreparedIndirect::new(target, &[copy], &s.reference).is_err());
}

#[test]
fn optimization_never_loses_ground() {
    let s = setup();
    let target = &s.vulnerable[0];
    let pos = positive(s, target);
    let params = IndirectParams {
        max_opt_steps: 30,
        ..IndirectParams::default()
    };
    let mut rng = seeded(21);
    for i in 0..15 {
        let x: Vec<f64> = s.bounds.lower.iter().zip(&s.bounds.upper).map(|(l, u)| rng.random_range(*l..=*u)).collect();
        let q = Record::new(format!("q{i}"), x, target.label);
        let out = optimize_enhancing(&q, target, &s.reference, &pos, &s.bounds, &params).unwrap();
        assert!(out.objective <= out.start_objective);
        assert!(out.influence.value >= out.start_influence);
        assert!(s.bounds.contains(&out.query.features));
    }
}

#[test]
fn single_query_indirect_equals_direct() {
    let s = setup();
    let target = &s.vulnerable[0];
    let model = &s.reference.models[0];
    let data = &s.partition.target_pool;
    for q in data.records.iter().filter(|r| r.id != target.id).take(10) {
        let relabelled = q.with_label(target.label);
        let direct = direct_attack(model, "m", &relabelled, &s.reference).unwrap();
        let indirect = indirect_attack(model, "m", target, std::slice::from_ref(q), &s.reference).unwrap();
        assert!((direct.p_value - indirect.p_value).abs() <= 1e-12);
    }
}

fn tiny_ensemble() -> (Dataset, Ensemble) {
    let toy = generate_toy(2);
    let pool = toy.subset("pool", &(0..300).collect::<Vec<_>>());
    let spec = ModelSpec::new(vec![2, 4, 2], Activation::Tanh).unwrap();
    let cfg = TrainingConfig {
        epochs: 5,
        batch_size: 10,
        learning_rate: 0.2,
        l2: 0.0,
        seed: 0,
    };
    let e = build_reference_models(&pool, 3, 50, &spec, &cfg, 1).unwrap();
    (toy, e)
}

fn correlation_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let mut c = vec![vec![1.0; n]; n];
    for (i, j) in (0..n).flat_map(|i| (0..i).map(move |j| (i, j))) {
        let v = rng.random_range(-0.3..0.9);
        c[i][j] = v;
        c[j][i] = v;
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cluster_select_returns_one_candidate_per_cluster(n in 2usize..40, k in 1usize..12, offset in 0usize..800) {
        let (toy, e) = tiny_ensemble();
        let candidates: Vec<Record> = toy.records[offset..offset + n].to_vec();
        if k > n {
            prop_assert!(cluster_select(&candidates, &e, k).is_err());
            return Ok(());
        }
        let picked = cluster_select(&candidates, &e, k).unwrap();
        prop_assert_eq!(picked.len(), k);
        prop_assert!(picked.iter().all(|p| candidates.iter().any(|c| c == p)));
        let mut ids: Vec<&str> = picked.iter().map(|p| p.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), picked.len());
    }

    #[test]
    fn kost_is_symmetric_under_joint_permutation(
        p in proptest::collection::vec(1e-6f64..1.0, 2..9),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let n = p.len();
        let c = correlation_matrix(n, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seeded(seed ^ 1));
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let cp: Vec<Vec<f64>> = perm.iter().map(|&i| perm.iter().map(|&j| c[i][j]).collect()).collect();
        let a = kost_combine(&p, &c).unwrap().p_value;
        let b = kost_combine(&pp, &cp).unwrap().p_value;
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

#[test]
fn identity_correlation_is_fisher_for_n_up_to_20() {
    let mut rng = seeded(5);
    for n in 1..=20 {
        for _ in 0..10 {
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..1.0)).collect();
            let kost = kost_combine(&p, &identity(n)).unwrap().p_value;
            assert!((kost - fisher_combine(&p).unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn all_halves_match_the_closed_form() {
    for n in 1..=12usize {
        let p = vec![0.5; n];
        let got = kost_combine(&p, &identity(n)).unwrap().p_value;
        // chi-square survival with 2n dof at x = 2n ln 2 is e^{-x/2} sum_{j<n} (x/2)^j / j!.
        let half = n as f64 * std::f64::consts::LN_2;
        let mut term = 1.0;
        let mut sum = 0.0;
        for j in 0..n {
            if j > 0 {
                term *= half / j as f64;
            }
            sum += term;
        }
        let expected = (-half).exp() * sum;
        assert!((got - expected).abs() < 1e-12, "n = {n}: {got} vs {expected}");
    }
    assert!((kost_combine(&[0.5], &identity(1)).unwrap().p_value - 0.5).abs() < 1e-12);
}

#[test]
fn correlation_estimates() {
    let a = vec![0.1, 0.4, 0.2, 0.9];
    let c = estimate_query_correlation(&[a.clone(), a.clone()]).unwrap();
    assert!((c[0][1] - 1.0).abs() < 1e-12 && (c[0][0] - 1.0).abs() < 1e-12);
    let x = vec![1.0, -1.0, 1.0, -1.0];
    let y = vec![1.0, 1.0, -1.0, -1.0];
    let c = estimate_query_correlation(&[x, y]).unwrap();
    assert!(c[0][1].abs() < 1e-9);
}
