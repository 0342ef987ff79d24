//! The classifier training engine behind every method the harness runs.
//!
//! One loop covers ERM, the group-robust objectives, the consistency-
//! regularized combined objective (with translator, subgroup-pairing or
//! heuristic augmentation sources), and domain-adversarial training. All
//! methods draw from named substreams of the trial seed, so trajectories
//! that should coincide (zero-coefficient reductions) coincide bitwise.

use std::collections::BTreeMap;

use crate::coupled::{batch_tensor, subgroup_batches, DatasetSplit, LabeledExample};
use crate::error::{Error, Result};
use crate::invariance::{prediction_features, variational_mi_estimate, HeadConfig};
use crate::metrics::{evaluate, EvalReport};
use crate::numeric::{sgd_step, Head, Mlp, NodeId, Tape, Tensor};
use crate::objectives::{
    gdro_stochastic_update, taped_consistency, taped_cross_entropy, ConsistencyConfig,
    GroupWeights,
};
use crate::rng::Rng;
use crate::translate::TranslatorSet;

/// Where a consistency-trained method gets its augmented coupled sets.
#[derive(Clone, Debug)]
pub enum AugmentationSource {
    /// Stage-1 translators (analytic or trained), frozen black boxes here.
    Translators(TranslatorSet),
    /// Real same-class examples drawn from the other subgroups.
    SubgroupPairing,
    /// Generic input-space perturbation: Gaussian noise plus affine jitter.
    Heuristic { sigma: f64, jitter: f64 },
}

/// Method selector for [`train_classifier`].
#[derive(Clone, Debug)]
pub enum MethodKind {
    Erm,
    Gdro,
    Sgdro,
    Camel {
        consistency: ConsistencyConfig,
        source: AugmentationSource,
    },
    Cdat {
        coefficient: f64,
        head_hidden: usize,
    },
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Group-weight step size for the robust objectives.
    pub eta: f64,
    /// Generalization adjustment coefficient C in `ℓ + C/√n_g`.
    pub adjustment: f64,
    /// Estimate MI on the test split after every epoch (costly; used by
    /// the domain-adversarial MI traces).
    pub mi_per_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![16],
            lr: 0.05,
            weight_decay: 0.0,
            momentum: 0.9,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            eta: 0.01,
            adjustment: 0.0,
            mi_per_epoch: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub validation: EvalReport,
    pub test: EvalReport,
    pub lambda: f64,
    pub mi_estimate: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters at the best validation-robust-accuracy epoch.
    pub best_model: Mlp,
    pub final_model: Mlp,
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    /// Per-epoch MI estimates when `mi_per_epoch` is set.
    pub mi_trace: Vec<f64>,
}

/// Cells (class, subgroup) with their train-split sizes, in stable order.
fn train_cells(split: &DatasetSplit) -> Vec<((usize, usize), usize)> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for e in &split.train {
        *counts.entry((e.y, e.z)).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

fn plain_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Indices of `batch` split per (y, z) cell, preserving order.
fn split_by_cell(
    examples: &[LabeledExample],
    batch: &[usize],
) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for &i in batch {
        cells.entry((examples[i].y, examples[i].z)).or_default().push(i);
    }
    cells
}

struct CellForward {
    logits: NodeId,
    ce: NodeId,
    inputs: Tensor,
    indices: Vec<usize>,
}

/// Forward one cell's sub-batch and attach its mean cross-entropy node.
fn forward_cell(
    tape: &mut Tape,
    model: &Mlp,
    examples: &[LabeledExample],
    indices: &[usize],
    num_classes: usize,
) -> Result<CellForward> {
    let (inputs, labels, _) = batch_tensor(examples, indices);
    let input = tape.input(inputs.clone());
    let logits = model.forward_on_tape(tape, input, 0, true)?;
    let ce = taped_cross_entropy(tape, logits, &labels, num_classes)?;
    Ok(CellForward {
        logits,
        ce,
        inputs,
        indices: indices.to_vec(),
    })
}

/// Build per-example augmented inputs for one cell according to the
/// source. Returns one tensor per subgroup z' != z (z' == z is the
/// original batch itself).
fn augmented_inputs(
    source: &AugmentationSource,
    cell: (usize, usize),
    cell_inputs: &Tensor,
    train_by_cell: &BTreeMap<(usize, usize), Vec<usize>>,
    examples: &[LabeledExample],
    subgroups: usize,
    rng: &mut Rng,
) -> Result<Vec<(usize, Tensor)>> {
    let (y, z) = cell;
    let mut out = Vec::new();
    for zp in 0..subgroups {
        if zp == z {
            continue;
        }
        let tensor = match source {
            AugmentationSource::Translators(set) => {
                let t = set.get(y, z, zp).ok_or_else(|| {
                    Error::Config(format!("no translator for class {y} pair ({z} -> {zp})"))
                })?;
                t.apply_batch(cell_inputs)
            }
            AugmentationSource::SubgroupPairing => {
                let pool = train_by_cell.get(&(y, zp)).ok_or_else(|| {
                    Error::Data(format!("subgroup pairing needs examples in cell ({y}, {zp})"))
                })?;
                let rows: Vec<Vec<f64>> = (0..cell_inputs.rows())
                    .map(|_| examples[pool[rng.below(pool.len())]].x.clone())
                    .collect();
                Tensor::from_rows(&rows)?
            }
            AugmentationSource::Heuristic { sigma, jitter } => {
                let rows: Vec<Vec<f64>> = (0..cell_inputs.rows())
                    .map(|r| {
                        let scale = 1.0 + jitter * (2.0 * rng.uniform() - 1.0);
                        let shift = jitter * (2.0 * rng.uniform() - 1.0);
                        cell_inputs
                            .row(r)
                            .iter()
                            .map(|&v| scale * v + shift + sigma * rng.normal())
                            .collect()
                    })
                    .collect();
                Tensor::from_rows(&rows)?
            }
        };
        out.push((zp, tensor));
    }
    Ok(out)
}

/// Train one classifier; see the module docs.
pub fn train_classifier(
    split: &DatasetSplit,
    method: &MethodKind,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let num_classes = split.num_classes;
    let subgroups = split.subgroups_per_class;
    let mut dims = vec![split.input_dim];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(num_classes);

    let mut init_rng = Rng::derive(cfg.seed, "model-init");
    let mut model = Mlp::new(&dims, Head::Softmax, &mut init_rng)?;
    let model_slots = model.params().len();

    let mut batch_rng = Rng::derive(cfg.seed, "batches");
    let mut method_rng = Rng::derive(cfg.seed, "method");

    // Group-robust state.
    let cells = train_cells(split);
    let cell_order: Vec<(usize, usize)> = cells.iter().map(|&(c, _)| c).collect();
    let cell_sizes: BTreeMap<(usize, usize), usize> = cells.iter().cloned().collect();
    let mut gdro_state = GroupWeights::uniform(cell_order.len().max(1), cfg.eta)?;
    let mut sgdro_state: BTreeMap<usize, (Vec<(usize, usize)>, GroupWeights)> = BTreeMap::new();
    for y in 0..num_classes {
        let class_cells: Vec<(usize, usize)> = cell_order
            .iter()
            .filter(|&&(cy, _)| cy == y)
            .cloned()
            .collect();
        if !class_cells.is_empty() {
            let n = class_cells.len();
            sgdro_state.insert(y, (class_cells, GroupWeights::uniform(n, cfg.eta)?));
        }
    }

    // Domain-adversarial heads, one per class (their init stream is
    // separate so a zero coefficient reproduces the plain-ERM trajectory).
    let mut heads: Vec<Mlp> = Vec::new();
    if let MethodKind::Cdat { head_hidden, .. } = method {
        let mut head_rng = Rng::derive(cfg.seed, "domain-head");
        let feat_dim = if cfg.hidden.is_empty() {
            split.input_dim
        } else {
            *cfg.hidden.last().unwrap()
        };
        for _ in 0..num_classes {
            let hdims: Vec<usize> = if *head_hidden == 0 {
                vec![feat_dim, subgroups]
            } else {
                vec![feat_dim, *head_hidden, subgroups]
            };
            heads.push(Mlp::new(&hdims, Head::Softmax, &mut head_rng)?);
        }
    }

    let mut consistency = match method {
        MethodKind::Camel { consistency, .. } => Some(consistency.clone()),
        _ => None,
    };
    let train_by_cell = split_by_cell(&split.train, &(0..split.train.len()).collect::<Vec<_>>());

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut mi_trace: Vec<f64> = Vec::new();
    let mut best_epoch = 0;
    let mut best_robust = f64::NEG_INFINITY;
    let mut best_model = model.clone();
    let mut global_step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let batches = match method {
            MethodKind::Erm | MethodKind::Cdat { .. } => {
                plain_batches(split.train.len(), cfg.batch_size, &mut batch_rng)
            }
            _ => subgroup_batches(&split.train, cfg.batch_size, batch_rng.next_u64())?,
        };

        for batch in &batches {
            let mut tape = Tape::new();
            let loss = match method {
                MethodKind::Erm => {
                    let (inputs, labels, _) = batch_tensor(&split.train, batch);
                    let input = tape.input(inputs);
                    let (_feat, logits) =
                        model.forward_features_on_tape(&mut tape, input, 0)?;
                    taped_cross_entropy(&mut tape, logits, &labels, num_classes)?
                }
                MethodKind::Cdat {
                    coefficient,
                    ..
                } => {
                    let (inputs, labels, groups) = batch_tensor(&split.train, batch);
                    let n = labels.len();
                    let input = tape.input(inputs);
                    let (feat, logits) =
                        model.forward_features_on_tape(&mut tape, input, 0)?;
                    let ce = taped_cross_entropy(&mut tape, logits, &labels, num_classes)?;

                    // Per-class domain heads on gathered feature rows.
                    let mut dom_terms: Vec<(f64, NodeId)> = Vec::new();
                    let mut head_slot = model_slots;
                    let mut head_slots: Vec<usize> = Vec::new();
                    for (y, head) in heads.iter().enumerate() {
                        head_slots.push(head_slot);
                        let rows: Vec<usize> =
                            (0..n).filter(|&i| labels[i] == y).collect();
                        if !rows.is_empty() {
                            let zs: Vec<usize> = rows.iter().map(|&i| groups[i]).collect();
                            let frac = rows.len() as f64 / n as f64;
                            let feat_y = tape.gather_rows(feat, rows)?;
                            let dlogits =
                                head.forward_on_tape(&mut tape, feat_y, head_slot, true)?;
                            let dce = taped_cross_entropy(&mut tape, dlogits, &zs, subgroups)?;
                            dom_terms.push((frac, dce));
                        }
                        head_slot += head.params().len();
                    }

                    if dom_terms.is_empty() {
                        ce
                    } else {
                        let dom_total = tape.weighted_sum(&dom_terms)?;
                        // Reversal: features receive −coefficient times the
                        // domain gradient; heads train on the plain domain
                        // loss via a second backward pass below.
                        let combined =
                            tape.weighted_sum(&[(1.0, ce), (-coefficient, dom_total)])?;
                        let head_grads = tape.backward(dom_total)?;
                        for (y, head) in heads.iter_mut().enumerate() {
                            head.zero_gradients();
                            head.absorb_gradients(&head_grads, head_slots[y]);
                        }
                        combined
                    }
                }
                MethodKind::Gdro => {
                    let by_cell = split_by_cell(&split.train, batch);
                    let mut ce_nodes = Vec::new();
                    let mut observed = Vec::new();
                    let mut sizes = Vec::new();
                    for cell in &cell_order {
                        let idx = match by_cell.get(cell) {
                            Some(v) => v,
                            None => {
                                return Err(Error::Contract(format!(
                                    "batch missing cell {cell:?}"
                                )))
                            }
                        };
                        let fwd =
                            forward_cell(&mut tape, &model, &split.train, idx, num_classes)?;
                        let n_g = cell_sizes[cell];
                        let bonus = if cfg.adjustment > 0.0 {
                            cfg.adjustment / (n_g as f64).sqrt()
                        } else {
                            0.0
                        };
                        let adjusted = tape.add_const(fwd.ce, bonus);
                        observed.push(tape.value(fwd.ce).item());
                        sizes.push(n_g);
                        ce_nodes.push(adjusted);
                    }
                    gdro_stochastic_update(&mut gdro_state, &observed, &sizes, cfg.adjustment)?;
                    let terms: Vec<(f64, NodeId)> = gdro_state
                        .weights()
                        .iter()
                        .cloned()
                        .zip(ce_nodes)
                        .collect();
                    tape.weighted_sum(&terms)?
                }
                MethodKind::Sgdro | MethodKind::Camel { .. } => {
                    let by_cell = split_by_cell(&split.train, batch);
                    let mut class_terms: Vec<(f64, NodeId)> = Vec::new();
                    let mut consistency_terms: Vec<(f64, NodeId)> = Vec::new();
                    let batch_n: usize = by_cell.values().map(Vec::len).sum();
                    let class_frac = 1.0 / sgdro_state.len() as f64;

                    for (_y, (class_cells, state)) in sgdro_state.iter_mut() {
                        let mut ce_nodes = Vec::new();
                        let mut observed = Vec::new();
                        let mut sizes = Vec::new();
                        let mut forwards = Vec::new();
                        for cell in class_cells.iter() {
                            let idx = by_cell.get(cell).ok_or_else(|| {
                                Error::Contract(format!("batch missing cell {cell:?}"))
                            })?;
                            let fwd = forward_cell(
                                &mut tape,
                                &model,
                                &split.train,
                                idx,
                                num_classes,
                            )?;
                            let n_g = cell_sizes[cell];
                            let bonus = if cfg.adjustment > 0.0 {
                                cfg.adjustment / (n_g as f64).sqrt()
                            } else {
                                0.0
                            };
                            let adjusted = tape.add_const(fwd.ce, bonus);
                            observed.push(tape.value(fwd.ce).item());
                            sizes.push(n_g);
                            ce_nodes.push(adjusted);
                            forwards.push(fwd);
                        }
                        gdro_stochastic_update(state, &observed, &sizes, cfg.adjustment)?;
                        for (w, node) in state.weights().iter().zip(ce_nodes) {
                            class_terms.push((class_frac * w, node));
                        }

                        // Consistency on each cell of this class.
                        if let MethodKind::Camel { source, .. } = method {
                            for fwd in &forwards {
                                let p_orig = tape.softmax(fwd.logits);
                                let cell = (
                                    split.train[fwd.indices[0]].y,
                                    split.train[fwd.indices[0]].z,
                                );
                                let augs = augmented_inputs(
                                    source,
                                    cell,
                                    &fwd.inputs,
                                    &train_by_cell,
                                    &split.train,
                                    subgroups,
                                    &mut method_rng,
                                )?;
                                let mut aug_nodes: Vec<(usize, NodeId)> = vec![(cell.1, p_orig)];
                                for (zp, tensor) in augs {
                                    let a_in = tape.input(tensor);
                                    let a_logits =
                                        model.forward_on_tape(&mut tape, a_in, 0, true)?;
                                    aug_nodes.push((zp, tape.softmax(a_logits)));
                                }
                                aug_nodes.sort_by_key(|&(zp, _)| zp);
                                let preds: Vec<NodeId> =
                                    aug_nodes.iter().map(|&(_, n)| n).collect();
                                let (ls, lt) = taped_consistency(&mut tape, p_orig, &preds)?;
                                let weight = fwd.indices.len() as f64 / batch_n as f64;
                                consistency_terms.push((0.5 * weight, ls));
                                consistency_terms.push((0.5 * weight, lt));
                            }
                        }
                    }

                    let sgdro_node = tape.weighted_sum(&class_terms)?;
                    match (&mut consistency, consistency_terms.is_empty()) {
                        (Some(cc), false) => {
                            cc.anneal(global_step);
                            let cons = tape.weighted_sum(&consistency_terms)?;
                            tape.weighted_sum(&[(1.0, sgdro_node), (cc.current_lambda, cons)])?
                        }
                        _ => sgdro_node,
                    }
                }
            };

            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::Training(format!(
                    "loss became non-finite at epoch {epoch}, step {global_step}"
                )));
            }
            let grads = tape.backward(loss)?;
            model.zero_gradients();
            model.absorb_gradients(&grads, 0);
            sgd_step(
                model.params_mut(),
                cfg.lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
            if !heads.is_empty() {
                for head in heads.iter_mut() {
                    sgd_step(head.params_mut(), cfg.lr, cfg.momentum, 0.0)?;
                }
            }
            global_step += 1;
        }

        let validation = evaluate(&model, &split.validation)?;
        let test = evaluate(&model, &split.test)?;
        let mi_estimate = if cfg.mi_per_epoch {
            let (features, labels) = prediction_features(&model, &split.test)?;
            let mi = variational_mi_estimate(
                &features,
                &labels,
                None,
                num_classes,
                subgroups,
                &HeadConfig {
                    seed: cfg.seed,
                    ..HeadConfig::default()
                },
            )?;
            mi_trace.push(mi);
            Some(mi)
        } else {
            None
        };
        if validation.robust > best_robust {
            best_robust = validation.robust;
            best_epoch = epoch;
            best_model = model.clone();
        }
        records.push(EpochRecord {
            epoch,
            validation,
            test,
            lambda: consistency.as_ref().map(|c| c.current_lambda).unwrap_or(0.0),
            mi_estimate,
        });
    }

    Ok(TrainOutcome {
        best_model,
        final_model: model,
        best_epoch,
        epochs: records,
        mi_trace,
    })
}
