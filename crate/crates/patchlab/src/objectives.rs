//! Training objectives: ERM / GDRO / SGDRO, the coupled-set consistency
//! regularizers, the annealed combined objective, and the alternate
//! consistency losses used as ablations.
//!
//! Every loss exists in two forms: a value-level function on prediction
//! rows (evaluation, verification) and a tape builder (training). The two
//! paths are independent so one can audit the other.

use serde::{Deserialize, Serialize};

use crate::divergences::{kl, Categorical};
use crate::error::{Error, Result};
use crate::numeric::{NodeId, Tape, Tensor};

// ---------------------------------------------------------------------------
// Value-level losses
// ---------------------------------------------------------------------------

fn row_categorical(pred: &[f64]) -> Result<Categorical> {
    Categorical::new(pred.to_vec())
}

/// Mean cross-entropy of prediction rows against integer labels.
pub fn erm_loss(predictions: &Tensor, labels: &[usize]) -> Result<f64> {
    if predictions.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows vs {} labels",
            predictions.rows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = predictions.row(i)[y];
        total -= p.ln();
    }
    Ok(total / labels.len() as f64)
}

/// Worst per-group mean loss.
pub fn gdro_loss(per_group: &[f64]) -> Result<f64> {
    if per_group.is_empty() {
        return Err(Error::Contract("gdro_loss over zero groups".into()));
    }
    Ok(per_group.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Mean over classes of each class's worst subgroup loss.
/// `per_class[y]` holds the mean losses of class y's nonempty subgroups.
pub fn sgdro_loss(per_class: &[Vec<f64>]) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::Contract("sgdro_loss over zero classes".into()));
    }
    let mut total = 0.0;
    for (y, subgroups) in per_class.iter().enumerate() {
        if subgroups.is_empty() {
            return Err(Error::Contract(format!("class {y} has no nonempty subgroup")));
        }
        total += subgroups.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(total / per_class.len() as f64)
}

/// Simplex state of the stochastic group-robust solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupWeights {
    weights: Vec<f64>,
    pub eta: f64,
}

impl GroupWeights {
    pub fn uniform(groups: usize, eta: f64) -> Result<Self> {
        if groups == 0 {
            return Err(Error::Contract("need at least one group".into()));
        }
        if eta < 0.0 {
            return Err(Error::Parameter(format!("eta must be >= 0, got {eta}")));
        }
        Ok(GroupWeights {
            weights: vec![1.0 / groups as f64; groups],
            eta,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// One exponentiated-gradient step of the stochastic GDRO solver.
///
/// Adjusts each observed loss by the generalization term `C/√n_g`,
/// multiplies weights by `exp(eta · adjusted)`, renormalizes, and returns
/// the weighted adjusted loss `Σ w_g · ℓ̃_g` under the new weights.
pub fn gdro_stochastic_update(
    state: &mut GroupWeights,
    losses: &[f64],
    group_sizes: &[usize],
    adjustment: f64,
) -> Result<f64> {
    if losses.len() != state.weights.len() || group_sizes.len() != losses.len() {
        return Err(Error::Shape(format!(
            "{} weights vs {} losses vs {} sizes",
            state.weights.len(),
            losses.len(),
            group_sizes.len()
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Training(format!("non-finite group losses: {losses:?}")));
    }
    let mut adjusted = Vec::with_capacity(losses.len());
    for (&l, &n) in losses.iter().zip(group_sizes) {
        if n == 0 && adjustment > 0.0 {
            return Err(Error::Parameter(
                "zero group size with a positive adjustment coefficient".into(),
            ));
        }
        let bonus = if adjustment > 0.0 {
            adjustment / (n as f64).sqrt()
        } else {
            0.0
        };
        adjusted.push(l + bonus);
    }
    for (w, &a) in state.weights.iter_mut().zip(&adjusted) {
        *w *= (state.eta * a).exp();
    }
    let sum: f64 = state.weights.iter().sum();
    for w in &mut state.weights {
        *w /= sum;
    }
    Ok(state
        .weights
        .iter()
        .zip(&adjusted)
        .map(|(w, a)| w * a)
        .sum())
}

/// Self-consistency: mean KL of each augmented prediction against their
/// mean. Numerically identical to the JSD of the augmented predictions.
pub fn self_consistency(augmented: &[Vec<f64>]) -> Result<f64> {
    let k = augmented.len();
    if k < 2 {
        return Err(Error::Contract(format!(
            "self-consistency needs k >= 2 augmented predictions, got {k}"
        )));
    }
    let m = mean_prediction(augmented);
    let m = row_categorical(&m)?;
    let mut total = 0.0;
    for a in augmented {
        total += kl(&row_categorical(a)?, &m)?;
    }
    Ok(total / k as f64)
}

/// Translation consistency: KL of the original prediction against the
/// augmented mean.
pub fn translation_consistency(original: &[f64], augmented_mean: &[f64]) -> Result<f64> {
    kl(
        &row_categorical(original)?,
        &row_categorical(augmented_mean)?,
    )
}

pub fn mean_prediction(predictions: &[Vec<f64>]) -> Vec<f64> {
    let k = predictions.len() as f64;
    let mut m = vec![0.0; predictions[0].len()];
    for p in predictions {
        for (mi, &pi) in m.iter_mut().zip(p) {
            *mi += pi / k;
        }
    }
    m
}

/// Per-example consistency terms bundled for the batch mean.
#[derive(Clone, Debug)]
pub struct ConsistencyTerms {
    pub self_consistency: f64,
    pub translation_consistency: f64,
}

/// Total consistency loss: `(1/2) · mean(L_s + L_t)` over examples.
pub fn total_consistency(per_example: &[ConsistencyTerms]) -> Result<f64> {
    if per_example.is_empty() {
        return Err(Error::Contract("total_consistency over an empty batch".into()));
    }
    let sum: f64 = per_example
        .iter()
        .map(|t| t.self_consistency + t.translation_consistency)
        .sum();
    Ok(0.5 * sum / per_example.len() as f64)
}

/// Linear annealing schedule for the consistency strength.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub lambda_target: f64,
    /// Per-step linear increment; 0 disables annealing (λ jumps to target).
    pub anneal_rate: f64,
    pub current_lambda: f64,
}

impl ConsistencyConfig {
    pub fn new(lambda_target: f64, anneal_rate: f64) -> Result<Self> {
        if lambda_target < 0.0 || anneal_rate < 0.0 {
            return Err(Error::Parameter(
                "lambda target and anneal rate must be >= 0".into(),
            ));
        }
        let mut cfg = ConsistencyConfig {
            lambda_target,
            anneal_rate,
            current_lambda: 0.0,
        };
        cfg.anneal(0);
        Ok(cfg)
    }
}

/// Set λ for step `step`: `min(target, step · rate)`; a zero rate means
/// annealing is disabled and λ is the target immediately.
pub fn anneal_lambda(config: &mut ConsistencyConfig, step: u64) {
    config.current_lambda = if config.anneal_rate == 0.0 {
        config.lambda_target
    } else {
        (step as f64 * config.anneal_rate).min(config.lambda_target)
    };
}

impl ConsistencyConfig {
    pub fn anneal(&mut self, step: u64) {
        anneal_lambda(self, step);
    }
}

/// Final objective: robust term plus λ times the consistency term.
pub fn camel_objective(sgdro_term: f64, consistency_term: f64, config: &ConsistencyConfig) -> f64 {
    sgdro_term + config.current_lambda * consistency_term
}

/// Alternate consistency (asymmetric, per augmentation):
/// `Σ_z KL(f(x) ‖ f(x̃_z))`.
pub fn uda_consistency(original: &[f64], augmented: &[Vec<f64>]) -> Result<f64> {
    if augmented.is_empty() {
        return Err(Error::Contract("uda_consistency needs k >= 1".into()));
    }
    let p = row_categorical(original)?;
    let mut total = 0.0;
    for a in augmented {
        total += kl(&p, &row_categorical(a)?)?;
    }
    Ok(total)
}

/// Alternate consistency over the pooled set: the JSD of the original plus
/// all augmented predictions, written as its defining KL-to-mean average.
pub fn augmix_consistency(original: &[f64], augmented: &[Vec<f64>]) -> Result<f64> {
    if augmented.is_empty() {
        return Err(Error::Contract("augmix_consistency needs k >= 1".into()));
    }
    let mut all = vec![original.to_vec()];
    all.extend(augmented.iter().cloned());
    let m = row_categorical(&mean_prediction(&all))?;
    let mut total = 0.0;
    for a in &all {
        total += kl(&row_categorical(a)?, &m)?;
    }
    Ok(total / all.len() as f64)
}

// ---------------------------------------------------------------------------
// Tape builders
// ---------------------------------------------------------------------------

/// Mean cross-entropy over a batch, from taped logits.
pub fn taped_cross_entropy(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    num_classes: usize,
) -> Result<NodeId> {
    let n = tape.value(logits).rows();
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} logit rows vs {} labels", labels.len())));
    }
    let ls = tape.log_softmax(logits);
    let mut onehot = vec![0.0; n * num_classes];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * num_classes + y] = 1.0;
    }
    let oh = tape.input(Tensor::matrix(n, num_classes, onehot)?);
    let picked = tape.mul(ls, oh)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// `KL(p ‖ m)` averaged over the rows of two taped probability tensors.
pub fn taped_mean_kl(tape: &mut Tape, p: NodeId, m: NodeId) -> Result<NodeId> {
    let rows = tape.value(p).rows();
    let log_p = tape.log(p);
    let log_m = tape.log(m);
    let diff = tape.sub(log_p, log_m)?;
    let terms = tape.mul(p, diff)?;
    let total = tape.sum(terms);
    Ok(tape.scale(total, 1.0 / rows as f64))
}

/// Mean of probability tensors (same shape), on tape.
pub fn taped_mean_of(tape: &mut Tape, preds: &[NodeId]) -> Result<NodeId> {
    let mut acc = preds[0];
    for &p in &preds[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(tape.scale(acc, 1.0 / preds.len() as f64))
}

/// Batch-mean self-consistency `(1/k) Σ_z KL(p_z ‖ m̃)` and translation
/// consistency `KL(p ‖ m̃)` from taped softmax outputs, returning
/// `(L_s, L_t)` nodes.
pub fn taped_consistency(
    tape: &mut Tape,
    original: NodeId,
    augmented: &[NodeId],
) -> Result<(NodeId, NodeId)> {
    if augmented.len() < 2 {
        return Err(Error::Contract(
            "consistency needs k >= 2 augmented predictions".into(),
        ));
    }
    let m = taped_mean_of(tape, augmented)?;
    let mut terms = Vec::new();
    for &a in augmented {
        terms.push((1.0 / augmented.len() as f64, taped_mean_kl(tape, a, m)?));
    }
    let ls = tape.weighted_sum(&terms)?;
    let lt = taped_mean_kl(tape, original, m)?;
    Ok((ls, lt))
}
