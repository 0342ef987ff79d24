//! Exact and variational mutual-information machinery, plus the numerical
//! audits of the prediction-invariance results: the conditional-MI/JSD
//! equality on coupled sets, the chain-rule inequality, the variational
//! lower bound, and the squared-sum upper bound on `I(Ŷ; Z | [X])`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::coupled::{CoupledWorld, LabeledExample};
use crate::divergences::{jsd, jsd_from_pair_distance, Categorical};
use crate::error::{Error, Result};
use crate::numeric::{sgd_step, Head, Mlp, Tape, Tensor};
use crate::rng::Rng;
use crate::translate::TranslatorSet;

// ---------------------------------------------------------------------------
// Finite joints and exact conditional MI
// ---------------------------------------------------------------------------

/// Probability table over a tuple of named discrete variables.
#[derive(Clone, Debug)]
pub struct FiniteJoint {
    names: Vec<String>,
    arities: Vec<usize>,
    probs: Vec<f64>,
}

impl FiniteJoint {
    pub fn new(names: &[&str], arities: &[usize], probs: Vec<f64>) -> Result<Self> {
        if names.len() != arities.len() {
            return Err(Error::Contract("names/arities length mismatch".into()));
        }
        let size: usize = arities.iter().product();
        if probs.len() != size {
            return Err(Error::Shape(format!(
                "table holds {} entries, arities need {}",
                probs.len(),
                size
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Contract("negative or NaN probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("table sums to {sum}")));
        }
        Ok(FiniteJoint {
            names: names.iter().map(|s| s.to_string()).collect(),
            arities: arities.to_vec(),
            probs,
        })
    }

    pub fn arity(&self, name: &str) -> Result<usize> {
        Ok(self.arities[self.var(name)?])
    }

    fn var(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Contract(format!("unknown variable `{name}`")))
    }

    /// Iterate (assignment, probability) over all positive entries.
    fn entries(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let arities = self.arities.clone();
        self.probs.iter().enumerate().filter_map(move |(idx, &p)| {
            if p == 0.0 {
                return None;
            }
            let mut rem = idx;
            let mut assign = vec![0; arities.len()];
            for i in (0..arities.len()).rev() {
                assign[i] = rem % arities[i];
                rem /= arities[i];
            }
            Some((assign, p))
        })
    }

    /// Merge several variables into one product variable appended at the
    /// end (in the given order), dropping the originals.
    pub fn merge_vars(&self, new_name: &str, names: &[&str]) -> Result<FiniteJoint> {
        let vars: Vec<usize> = names
            .iter()
            .map(|n| self.var(n))
            .collect::<Result<Vec<_>>>()?;
        let kept: Vec<usize> = (0..self.names.len()).filter(|i| !vars.contains(i)).collect();
        let merged_arity: usize = vars.iter().map(|&v| self.arities[v]).product();
        let mut out_names: Vec<String> = kept.iter().map(|&i| self.names[i].clone()).collect();
        out_names.push(new_name.to_string());
        let mut out_arities: Vec<usize> = kept.iter().map(|&i| self.arities[i]).collect();
        out_arities.push(merged_arity);
        let out_size: usize = out_arities.iter().product();
        let mut out = vec![0.0; out_size];
        for (assign, p) in self.entries() {
            let mut merged = 0;
            for &v in &vars {
                merged = merged * self.arities[v] + assign[v];
            }
            let mut idx = 0;
            for (pos, &i) in kept.iter().enumerate() {
                idx = idx * out_arities[pos] + assign[i];
            }
            idx = idx * merged_arity + merged;
            out[idx] += p;
        }
        FiniteJoint::new(
            &out_names.iter().map(String::as_str).collect::<Vec<_>>(),
            &out_arities,
            out,
        )
    }

    /// Exact conditional mutual information `I(A; B | C)` by enumeration,
    /// where `C` is a (possibly empty) set of variables; all remaining
    /// variables are marginalized out.
    pub fn conditional_mi(&self, a: &str, b: &str, conditioning: &[&str]) -> Result<f64> {
        let va = self.var(a)?;
        let vb = self.var(b)?;
        let vc: Vec<usize> = conditioning
            .iter()
            .map(|n| self.var(n))
            .collect::<Result<Vec<_>>>()?;
        if vc.contains(&va) || vc.contains(&vb) || va == vb {
            return Err(Error::Contract(
                "conditional MI variables must be distinct".into(),
            ));
        }

        // Accumulate joint tables keyed by the needed sub-assignments.
        let mut p_abc: BTreeMap<(usize, usize, Vec<usize>), f64> = BTreeMap::new();
        let mut p_ac: BTreeMap<(usize, Vec<usize>), f64> = BTreeMap::new();
        let mut p_bc: BTreeMap<(usize, Vec<usize>), f64> = BTreeMap::new();
        let mut p_c: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (assign, p) in self.entries() {
            let c: Vec<usize> = vc.iter().map(|&v| assign[v]).collect();
            *p_abc.entry((assign[va], assign[vb], c.clone())).or_insert(0.0) += p;
            *p_ac.entry((assign[va], c.clone())).or_insert(0.0) += p;
            *p_bc.entry((assign[vb], c.clone())).or_insert(0.0) += p;
            *p_c.entry(c).or_insert(0.0) += p;
        }

        let mut mi = 0.0;
        for (&(a_val, b_val, ref c), &pabc) in &p_abc {
            let pac = p_ac[&(a_val, c.clone())];
            let pbc = p_bc[&(b_val, c.clone())];
            let pc = p_c[c];
            mi += pabc * ((pabc * pc) / (pac * pbc)).ln();
        }
        Ok(mi)
    }
}

/// Exact `I(a; b | conditioning)` on a finite joint.
pub fn exact_conditional_mi(
    joint: &FiniteJoint,
    a: &str,
    b: &str,
    conditioning: &[&str],
) -> Result<f64> {
    joint.conditional_mi(a, b, conditioning)
}

// ---------------------------------------------------------------------------
// Model-induced joints over coupled worlds
// ---------------------------------------------------------------------------

/// The joint of (coupled set, subgroup, sampled prediction, class) induced
/// by running `model` on every atom of `world`. Variables are named
/// `"coupled"`, `"z"`, `"yhat"`, `"y"`.
pub fn model_world_joint(model: &Mlp, world: &CoupledWorld) -> Result<FiniteJoint> {
    let c = world.num_classes();
    let l = world.latents_per_class();
    let k = world.subgroups_per_class();
    let classes_out = model.output_dim();
    let arities = [c * l, k, classes_out, c];
    let mut probs = vec![0.0; arities.iter().product()];
    for atom in world.enumerate() {
        if atom.prob == 0.0 {
            continue;
        }
        let pred = model.forward(&Tensor::from_rows(&[atom.input.clone()])?)?;
        let coupled = world.coupled_id(atom.class, atom.latent);
        for (yhat, &p) in pred.row(0).iter().enumerate() {
            let idx = ((coupled * k + atom.subgroup) * classes_out + yhat) * c + atom.class;
            probs[idx] += atom.prob * p;
        }
    }
    FiniteJoint::new(&["coupled", "z", "yhat", "y"], &arities, probs)
}

fn require_uniform_subgroups(world: &CoupledWorld) -> Result<()> {
    if !world.subgroup_weights_uniform() {
        return Err(Error::Contract(
            "coupled-set identities require uniform subgroup weights (equal-probability members)"
                .into(),
        ));
    }
    Ok(())
}

/// Both sides of the conditional-MI equality: the exact `I(Ŷ; Z | [X])`
/// from the induced joint, and the expected JSD of predictions on coupled
/// sets. They agree within 1e-10.
pub fn coupled_mi_as_jsd(model: &Mlp, world: &CoupledWorld) -> Result<(f64, f64)> {
    require_uniform_subgroups(world)?;
    let joint = model_world_joint(model, world)?;
    let mi = joint.conditional_mi("yhat", "z", &["coupled"])?;

    let k = world.subgroups_per_class();
    let mut expected = 0.0;
    for y in 0..world.num_classes() {
        for i in 0..world.latents_per_class() {
            let w = world.class_weight(y) * world.latent_weight(y, i);
            if w == 0.0 {
                continue;
            }
            let preds: Vec<Categorical> = (0..k)
                .map(|z| {
                    let out = model.forward(&Tensor::from_rows(&[world.render(y, i, z)])?)?;
                    Categorical::new(out.row(0).to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            expected += w * jsd(&preds)?;
        }
    }
    Ok((mi, expected))
}

/// `I(Ŷ; Z | [X]) − I(Ŷ; Z | Y)`; non-negative up to float noise for any
/// world with `(Z ⊥ [X]) | Y`.
pub fn chain_rule_gap(model: &Mlp, world: &CoupledWorld) -> Result<f64> {
    let joint = model_world_joint(model, world)?;
    let strong = joint.conditional_mi("yhat", "z", &["coupled"])?;
    let weak = joint.conditional_mi("yhat", "z", &["y"])?;
    Ok(strong - weak)
}

// ---------------------------------------------------------------------------
// Variational MI lower bound
// ---------------------------------------------------------------------------

/// Configuration of the class-conditional domain heads used by the
/// variational estimator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Hidden width; 0 trains a linear softmax head.
    pub hidden: usize,
    pub lr: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Early stopping: epochs without improvement beyond `tol`.
    pub patience: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: 16,
            lr: 0.5,
            momentum: 0.9,
            max_epochs: 400,
            patience: 20,
            tol: 1e-7,
            seed: 0,
        }
    }
}

/// Variational estimate of `I(features; Z | Y)`: `H(Z|Y)` minus the
/// full-batch cross-entropy of per-class domain heads trained to predict
/// `z` from the features. A lower bound up to head-training slack.
///
/// `weights` are per-example probabilities (uniform when `None`), so the
/// estimator can run on exact enumerations as well as samples.
pub fn variational_mi_estimate(
    features: &[Vec<f64>],
    labels: &[(usize, usize)],
    weights: Option<&[f64]>,
    num_classes: usize,
    num_subgroups: usize,
    config: &HeadConfig,
) -> Result<f64> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Contract("features/labels mismatch or empty".into()));
    }
    let uniform = vec![1.0 / features.len() as f64; features.len()];
    let w: &[f64] = weights.unwrap_or(&uniform);
    let total_w: f64 = w.iter().sum();
    if (total_w - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("weights sum to {total_w}")));
    }

    // H(Z|Y) from the (weighted) empirical joint.
    let mut joint = vec![0.0; num_classes * num_subgroups];
    for (&(y, z), &wi) in labels.iter().zip(w) {
        joint[y * num_subgroups + z] += wi;
    }
    let mut h_z_given_y = 0.0;
    for y in 0..num_classes {
        let row = &joint[y * num_subgroups..(y + 1) * num_subgroups];
        let py: f64 = row.iter().sum();
        if py == 0.0 {
            continue;
        }
        for &pzy in row {
            if pzy > 0.0 {
                h_z_given_y -= pzy * (pzy / py).ln();
            }
        }
    }

    // Per-class heads trained on that class's examples.
    let dim = features[0].len();
    let mut rng = Rng::derive(config.seed, "mi-head");
    let mut total_ce = 0.0;
    for y in 0..num_classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].0 == y).collect();
        if idx.is_empty() {
            continue;
        }
        let class_w: f64 = idx.iter().map(|&i| w[i]).sum();
        if class_w == 0.0 {
            continue;
        }
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| features[i].clone()).collect();
        let inputs = Tensor::from_rows(&rows)?;
        let targets: Vec<usize> = idx.iter().map(|&i| labels[i].1).collect();
        let row_w: Vec<f64> = idx.iter().map(|&i| w[i] / class_w).collect();

        let dims: Vec<usize> = if config.hidden == 0 {
            vec![dim, num_subgroups]
        } else {
            vec![dim, config.hidden, num_subgroups]
        };
        let mut head = Mlp::new(&dims, Head::Softmax, &mut rng)?;
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        for _epoch in 0..config.max_epochs {
            let mut tape = Tape::new();
            let input = tape.input(inputs.clone());
            let logits = head.forward_on_tape(&mut tape, input, 0, true)?;
            let ls = tape.log_softmax(logits);
            // Weighted CE: -Σ_i w_i log p(z_i); weights absorb class mass.
            let mut pick = vec![0.0; targets.len() * num_subgroups];
            for (r, (&z, &wi)) in targets.iter().zip(&row_w).enumerate() {
                pick[r * num_subgroups + z] = wi;
            }
            let pick = tape.input(Tensor::matrix(targets.len(), num_subgroups, pick)?);
            let picked = tape.mul(ls, pick)?;
            let sum = tape.sum(picked);
            let loss = tape.scale(sum, -1.0);
            let value = tape.value(loss).item();
            let grads = tape.backward(loss)?;
            head.zero_gradients();
            head.absorb_gradients(&grads, 0);
            sgd_step(head.params_mut(), config.lr, config.momentum, 0.0)
                .map_err(|e| Error::Training(format!("domain head diverged: {e}")))?;
            if value < best - config.tol {
                best = value;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > config.patience {
                    break;
                }
            }
        }
        total_ce += class_w * best;
    }
    Ok(h_z_given_y - total_ce)
}

// ---------------------------------------------------------------------------
// CDAT: class-conditional domain adversarial training
// ---------------------------------------------------------------------------

/// Options for [`cdat_train`].
#[derive(Clone, Debug)]
pub struct CdatConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Scale of the reversed domain-head gradient into the features.
    pub coefficient: f64,
    pub head_hidden: usize,
    pub seed: u64,
    /// Estimate MI on the test split after every epoch.
    pub mi_trace: bool,
}

pub struct CdatOutcome {
    pub model: Mlp,
    pub mi_trace: Vec<f64>,
}

/// Train a classifier with ERM plus class-conditional domain heads whose
/// gradient is scaled by `−coefficient` into the feature extractor. With a
/// zero coefficient the classifier trajectory is identical to plain ERM on
/// the same streams.
pub fn cdat_train(
    split: &crate::coupled::DatasetSplit,
    config: &CdatConfig,
) -> Result<CdatOutcome> {
    let engine = crate::train::TrainConfig {
        hidden: config.hidden.clone(),
        lr: config.lr,
        weight_decay: config.weight_decay,
        momentum: config.momentum,
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        eta: 0.0,
        adjustment: 0.0,
        mi_per_epoch: config.mi_trace,
    };
    let method = crate::train::MethodKind::Cdat {
        coefficient: config.coefficient,
        head_hidden: config.head_hidden,
    };
    let outcome = crate::train::train_classifier(split, &method, &engine)?;
    Ok(CdatOutcome {
        model: outcome.final_model,
        mi_trace: outcome.mi_trace,
    })
}

// ---------------------------------------------------------------------------
// The squared-sum upper bound on I(Ŷ; Z | [X])
// ---------------------------------------------------------------------------

/// Verification report for the prediction-invariance bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    /// Exact `I(Ŷ; Z | [X])`.
    pub lhs: f64,
    /// `E[(√L_s + Σ_z √L_CG^z)²]`.
    pub rhs: f64,
    /// `rhs − lhs`; non-negative up to 1e-9 float slack.
    pub slack: f64,
    pub expected_self_consistency: f64,
    pub expected_translator_divergence: f64,
    pub seed: Option<u64>,
}

/// Audit the bound for one model and one translator set on an enumerable
/// world with k = 2 subgroups per class.
///
/// For each example `x` (every atom), the augmented coupled set is
/// `{F_{z→z'}(x)}`; `L_s(x)` is the JSD of the model's predictions on it,
/// and the per-subgroup translator term is the JSD between the true and
/// translated per-coupled-set (point-mass) distributions, recovered from
/// the pair-conditioned discriminator distance. Exact translators make the
/// bound an equality.
pub fn verify_theorem_bound(
    model: &Mlp,
    world: &CoupledWorld,
    translators: &TranslatorSet,
) -> Result<BoundReport> {
    if world.subgroups_per_class() != 2 {
        return Err(Error::Contract(format!(
            "the bound audit covers the k = 2 case, world has k = {}",
            world.subgroups_per_class()
        )));
    }
    require_uniform_subgroups(world)?;
    let k = 2usize;

    let joint = model_world_joint(model, world)?;
    let lhs = joint.conditional_mi("yhat", "z", &["coupled"])?;

    let mut rhs = 0.0;
    let mut e_ls = 0.0;
    let mut e_cg = 0.0;
    for atom in world.enumerate() {
        if atom.prob == 0.0 {
            continue;
        }
        let (y, i, z) = (atom.class, atom.latent, atom.subgroup);
        // Generated coupled set from this example, identity on its own
        // subgroup.
        let mut sqrt_cg_sum = 0.0;
        let mut cg_total = 0.0;
        let mut aug_preds = Vec::with_capacity(k);
        for zp in 0..k {
            let translated = if zp == z {
                atom.input.clone()
            } else {
                translators
                    .get(y, z, zp)
                    .ok_or_else(|| {
                        Error::Config(format!("no translator for class {y} pair ({z} -> {zp})"))
                    })?
                    .apply(&atom.input)
            };
            let truth = world.render(y, i, zp);
            // Point-mass distributions on {truth, translated}: equal inputs
            // give JSD 0, distinct inputs give JSD log 2.
            let divergence = if translated
                .iter()
                .zip(&truth)
                .all(|(a, b)| (a - b).abs() == 0.0)
            {
                0.0
            } else {
                let p = Categorical::point_mass(0, 2);
                let q = Categorical::point_mass(1, 2);
                jsd_from_pair_distance(&p, &q)?
            };
            sqrt_cg_sum += divergence.sqrt();
            cg_total += divergence;
            let pred = model.forward(&Tensor::from_rows(&[translated])?)?;
            aug_preds.push(Categorical::new(pred.row(0).to_vec())?);
        }
        let ls = jsd(&aug_preds)?;
        rhs += atom.prob * (ls.max(0.0).sqrt() + sqrt_cg_sum).powi(2);
        e_ls += atom.prob * ls;
        e_cg += atom.prob * cg_total;
    }

    Ok(BoundReport {
        lhs,
        rhs,
        slack: rhs - lhs,
        expected_self_consistency: e_ls,
        expected_translator_divergence: e_cg,
        seed: None,
    })
}

/// Data-processing check: the JSD between predictions on true and
/// translated inputs never exceeds the JSD between the underlying
/// point-mass input distributions.
pub fn data_processing_gap(
    model: &Mlp,
    world: &CoupledWorld,
    translators: &TranslatorSet,
) -> Result<f64> {
    let mut worst: f64 = f64::NEG_INFINITY;
    for atom in world.enumerate() {
        for zp in 0..world.subgroups_per_class() {
            if zp == atom.subgroup {
                continue;
            }
            let t = translators.get(atom.class, atom.subgroup, zp).ok_or_else(|| {
                Error::Config(format!(
                    "no translator for class {} pair ({} -> {})",
                    atom.class, atom.subgroup, zp
                ))
            })?;
            let translated = t.apply(&atom.input);
            let truth = world.render(atom.class, atom.latent, zp);
            let input_jsd = if translated.iter().zip(&truth).all(|(a, b)| a == b) {
                0.0
            } else {
                std::f64::consts::LN_2
            };
            let p_true = model.forward(&Tensor::from_rows(&[truth])?)?;
            let p_trans = model.forward(&Tensor::from_rows(&[translated])?)?;
            let pred_jsd = jsd(&[
                Categorical::new(p_true.row(0).to_vec())?,
                Categorical::new(p_trans.row(0).to_vec())?,
            ])?;
            worst = worst.max(pred_jsd - input_jsd);
        }
    }
    Ok(worst)
}

/// Convenience: prediction vectors of a model over a set of examples,
/// paired with (y, z) labels, for feeding the variational estimator.
pub fn prediction_features(
    model: &Mlp,
    examples: &[LabeledExample],
) -> Result<(Vec<Vec<f64>>, Vec<(usize, usize)>)> {
    let rows: Vec<Vec<f64>> = examples.iter().map(|e| e.x.clone()).collect();
    let preds = model.forward(&Tensor::from_rows(&rows)?)?;
    let features = (0..examples.len()).map(|i| preds.row(i).to_vec()).collect();
    let labels = examples.iter().map(|e| (e.y, e.z)).collect();
    Ok((features, labels))
}
