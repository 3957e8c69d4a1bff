use serde::{Deserialize, Serialize};

use crate::data::{FeatureBounds, Record};
use crate::ensemble::{Ensemble, EnsembleKind};
use crate::error::{Error, Result};
use crate::model::ClassProbability;

use super::IndirectParams;

/// Fraction of paired models whose positive copy assigns strictly higher
/// probability to the target's class on the query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceScore {
    pub value: f64,
    /// Number of pairs with a strict increase.
    pub count: usize,
    pub k: usize,
    pub target_id: String,
    pub query_id: String,
}

/// Checks that `positive` was derived pairwise from `reference`.
pub fn check_paired(reference: &Ensemble, positive: &Ensemble) -> Result<()> {
    if reference.kind != EnsembleKind::Reference || positive.kind != EnsembleKind::Positive {
        return Err(Error::Unpaired("expected a reference and a positive ensemble".into()));
    }
    if positive.parent.as_deref() != Some(reference.id.as_str()) {
        return Err(Error::Unpaired(format!(
            "positive ensemble {} was not derived from {}",
            positive.id, reference.id
        )));
    }
    if positive.k() != reference.k() || positive.k() == 0 {
        return Err(Error::Unpaired(format!("sizes differ: {} vs {}", reference.k(), positive.k())));
    }
    if positive.spec != reference.spec {
        return Err(Error::Unpaired("model specs differ".into()));
    }
    Ok(())
}

/// Per-pair differences `P+_i(q, y) - P_i(q, y)`.
pub fn probability_shifts(features: &[f64], label: usize, reference: &Ensemble, positive: &Ensemble) -> Result<Vec<f64>> {
    reference
        .models
        .iter()
        .zip(&positive.models)
        .map(|(m, p)| Ok(p.predict(features)?[label] - m.predict(features)?[label]))
        .collect()
}

pub fn influence(target: &Record, query: &Record, reference: &Ensemble, positive: &Ensemble) -> Result<InfluenceScore> {
    check_paired(reference, positive)?;
    if positive.target_record_id.as_deref() != Some(target.id.as_str()) {
        return Err(Error::Unpaired(format!("positive ensemble {} does not target {}", positive.id, target.id)));
    }
    let shifts = probability_shifts(&query.features, target.label, reference, positive)?;
    Ok(score_from_shifts(&shifts, &target.id, &query.id))
}

fn score_from_shifts(shifts: &[f64], target_id: &str, query_id: &str) -> InfluenceScore {
    let count = shifts.iter().filter(|&&d| d > 0.0).count();
    InfluenceScore {
        value: count as f64 / shifts.len() as f64,
        count,
        k: shifts.len(),
        target_id: target_id.to_string(),
        query_id: query_id.to_string(),
    }
}

pub fn select_enhancing(score: &InfluenceScore, theta: f64) -> bool {
    score.value > theta
}

/// Sum of hinge penalties `max(0, gamma - shift_i)`.
pub fn hinge_objective(shifts: &[f64], gamma: f64) -> f64 {
    shifts.iter().map(|d| (gamma - d).max(0.0)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub query: Record,
    pub influence: InfluenceScore,
    pub start_influence: f64,
    pub start_objective: f64,
    pub objective: f64,
    /// Accepted descent steps.
    pub steps: usize,
    /// Stopped on a non-finite gradient or objective.
    pub non_finite: bool,
}

struct Evaluation {
    shifts: Vec<f64>,
    objective: f64,
}

fn evaluate(features: &[f64], label: usize, reference: &Ensemble, positive: &Ensemble, gamma: f64) -> Result<Evaluation> {
    let shifts = probability_shifts(features, label, reference, positive)?;
    let objective = hinge_objective(&shifts, gamma);
    Ok(Evaluation { shifts, objective })
}

fn hinge_gradient(
    features: &[f64],
    eval: &Evaluation,
    label: usize,
    reference: &Ensemble,
    positive: &Ensemble,
    gamma: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; features.len()];
    let objective = ClassProbability(label);
    for (i, &d) in eval.shifts.iter().enumerate() {
        if gamma - d <= 0.0 {
            continue;
        }
        let gp = positive.models[i].input_gradient(features, &objective)?;
        let gm = reference.models[i].input_gradient(features, &objective)?;
        for ((g, a), b) in grad.iter_mut().zip(gp).zip(gm) {
            *g -= a - b;
        }
    }
    Ok(grad)
}

const MAX_HALVINGS: usize = 30;

/// Gradient descent on the hinge objective over the query's features, with
/// step halving so that every accepted step lowers the objective. Iterates
/// are clamped to `bounds`. Returns the latest iterate with the highest
/// influence seen.
pub fn optimize_enhancing(
    query0: &Record,
    target: &Record,
    reference: &Ensemble,
    positive: &Ensemble,
    bounds: &FeatureBounds,
    params: &IndirectParams,
) -> Result<OptimizationOutcome> {
    check_paired(reference, positive)?;
    if query0.features.len() != reference.spec.input_dim() || bounds.dim() != query0.features.len() {
        return Err(Error::Dimension {
            expected: reference.spec.input_dim(),
            actual: query0.features.len(),
        });
    }
    let label = target.label;
    let gamma = params.gamma;
    let mut x = query0.features.clone();
    bounds.clamp(&mut x);
    let mut eval = evaluate(&x, label, reference, positive, gamma)?;
    let start = score_from_shifts(&eval.shifts, &target.id, &query0.id);
    let start_objective = eval.objective;
    let mut best = (x.clone(), start.clone(), eval.objective);
    let mut steps = 0;
    let mut non_finite = false;

    for _ in 0..params.max_opt_steps {
        if eval.objective == 0.0 {
            break;
        }
        let grad = hinge_gradient(&x, &eval, label, reference, positive, gamma)?;
        if grad.iter().any(|g| !g.is_finite()) {
            non_finite = true;
            break;
        }
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut lr = params.opt_learning_rate;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v - lr * g).collect();
            bounds.clamp(&mut cand);
            if cand != x {
                let e = evaluate(&cand, label, reference, positive, gamma)?;
                if !e.objective.is_finite() {
                    non_finite = true;
                    break;
                }
                if e.objective < eval.objective {
                    accepted = Some((cand, e));
                    break;
                }
            }
            lr *= 0.5;
        }
        let Some((cand, e)) = accepted else { break };
        x = cand;
        eval = e;
        steps += 1;
        let score = score_from_shifts(&eval.shifts, &target.id, &query0.id);
        if score.value >= best.1.value {
            best = (x.clone(), score, eval.objective);
        }
        if non_finite {
            break;
        }
    }

    let (features, influence, objective) = best;
    Ok(OptimizationOutcome {
        query: Record::new(query0.id.clone(), features, label),
        influence,
        start_influence: start.value,
        start_objective,
        objective,
        steps,
        non_finite,
    })
}
