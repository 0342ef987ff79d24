//! Stage 1: inter-subgroup transformations.
//!
//! Two realizations share one interface: exact analytic translators
//! (available for synthetic worlds, where the renderers are invertible
//! affine maps) and a low-dimensional adversarial translator pair trained
//! with the cycle/identity loss structure plus per-domain discriminators.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::coupled::world::{AffineMap, CoupledWorld};
use crate::coupled::LabeledExample;
use crate::error::{Error, Result};
use crate::numeric::{sgd_step, Head, Mlp, NodeId, Tape, Tensor};
use crate::rng::Rng;

/// A directed inter-subgroup map.
#[derive(Clone, Debug)]
pub struct Translator {
    pub source: usize,
    pub target: usize,
    map: TranslatorMap,
}

#[derive(Clone, Debug)]
enum TranslatorMap {
    Identity,
    Affine(AffineMap),
    Learned(Mlp),
}

impl Translator {
    pub fn identity(z: usize) -> Self {
        Translator {
            source: z,
            target: z,
            map: TranslatorMap::Identity,
        }
    }

    pub fn affine(source: usize, target: usize, map: AffineMap) -> Self {
        Translator {
            source,
            target,
            map: TranslatorMap::Affine(map),
        }
    }

    pub fn learned(source: usize, target: usize, model: Mlp) -> Self {
        Translator {
            source,
            target,
            map: TranslatorMap::Learned(model),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.map {
            TranslatorMap::Identity => x.to_vec(),
            TranslatorMap::Affine(a) => a.apply(x),
            TranslatorMap::Learned(m) => {
                let t = Tensor::from_rows(&[x.to_vec()]).expect("row");
                m.forward(&t).expect("translator width").row(0).to_vec()
            }
        }
    }

    /// Apply to every row of a batch.
    pub fn apply_batch(&self, batch: &Tensor) -> Tensor {
        match &self.map {
            TranslatorMap::Identity => batch.clone(),
            TranslatorMap::Learned(m) => m.forward(batch).expect("translator width"),
            TranslatorMap::Affine(_) => {
                let rows: Vec<Vec<f64>> = (0..batch.rows())
                    .map(|i| self.apply(batch.row(i)))
                    .collect();
                Tensor::from_rows(&rows).expect("rectangular")
            }
        }
    }

    /// Versioned JSON payload: shape header plus row-major values.
    pub fn to_json(&self) -> serde_json::Value {
        match &self.map {
            TranslatorMap::Identity => serde_json::json!({
                "version": 1,
                "kind": "identity",
                "source": self.source,
                "target": self.target,
            }),
            TranslatorMap::Affine(a) => serde_json::json!({
                "version": 1,
                "kind": "affine",
                "source": self.source,
                "target": self.target,
                "dim": a.dim,
                "matrix": a.matrix,
                "offset": a.offset,
            }),
            TranslatorMap::Learned(m) => {
                let layers: Vec<serde_json::Value> = m
                    .params()
                    .iter()
                    .map(|p| {
                        serde_json::json!({
                            "name": p.name,
                            "shape": p.value.shape(),
                            "values": p.value.values(),
                        })
                    })
                    .collect();
                serde_json::json!({
                    "version": 1,
                    "kind": "mlp",
                    "source": self.source,
                    "target": self.target,
                    "dims": m.dims(),
                    "layers": layers,
                })
            }
        }
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("translator payload: {msg}"));
        if v["version"] != 1 {
            return Err(bad("unsupported version"));
        }
        let source = v["source"].as_u64().ok_or_else(|| bad("missing source"))? as usize;
        let target = v["target"].as_u64().ok_or_else(|| bad("missing target"))? as usize;
        match v["kind"].as_str() {
            Some("identity") => Ok(Translator {
                source,
                target,
                map: TranslatorMap::Identity,
            }),
            Some("affine") => {
                let dim = v["dim"].as_u64().ok_or_else(|| bad("missing dim"))? as usize;
                let matrix: Vec<f64> = serde_json::from_value(v["matrix"].clone())?;
                let offset: Vec<f64> = serde_json::from_value(v["offset"].clone())?;
                if matrix.len() != dim * dim || offset.len() != dim {
                    return Err(bad("affine payload shape mismatch"));
                }
                Ok(Translator {
                    source,
                    target,
                    map: TranslatorMap::Affine(AffineMap {
                        matrix,
                        offset,
                        dim,
                    }),
                })
            }
            Some("mlp") => {
                let dims: Vec<usize> = serde_json::from_value(v["dims"].clone())?;
                let mut rng = Rng::new(0);
                let mut m = Mlp::new(&dims, Head::Linear, &mut rng)?;
                let layers = v["layers"].as_array().ok_or_else(|| bad("missing layers"))?;
                if layers.len() != m.params().len() {
                    return Err(bad("layer count mismatch"));
                }
                for (p, l) in m.params_mut().iter_mut().zip(layers) {
                    let values: Vec<f64> = serde_json::from_value(l["values"].clone())?;
                    if values.len() != p.value.len() {
                        return Err(bad("layer value count mismatch"));
                    }
                    p.value.values_mut().copy_from_slice(&values);
                }
                Ok(Translator {
                    source,
                    target,
                    map: TranslatorMap::Learned(m),
                })
            }
            _ => Err(bad("unknown kind")),
        }
    }
}

/// Per-class translator table keyed by (source, target) subgroup.
#[derive(Clone, Debug, Default)]
pub struct TranslatorSet {
    /// maps[class][(z, z')] -> translator
    maps: BTreeMap<usize, BTreeMap<(usize, usize), Translator>>,
}

impl TranslatorSet {
    pub fn insert(&mut self, class: usize, t: Translator) {
        self.maps
            .entry(class)
            .or_default()
            .insert((t.source, t.target), t);
    }

    pub fn get(&self, class: usize, z: usize, z_prime: usize) -> Option<&Translator> {
        self.maps.get(&class).and_then(|m| m.get(&(z, z_prime)))
    }
}

/// Exact translators `g_{z'} ∘ g_z⁻¹` for every ordered subgroup pair of
/// every class of a synthetic world. `F_{z→z}` is the identity.
pub fn analytic_translators(world: &CoupledWorld) -> TranslatorSet {
    let mut set = TranslatorSet::default();
    for y in 0..world.num_classes() {
        for z in 0..world.subgroups_per_class() {
            for zp in 0..world.subgroups_per_class() {
                let t = if z == zp {
                    Translator::identity(z)
                } else {
                    Translator::affine(z, zp, world.true_translator(z, zp))
                };
                set.insert(y, t);
            }
        }
    }
    set
}

/// Forward/backward translators between one subgroup pair with their
/// discriminators and loss coefficients.
#[derive(Clone, Debug)]
pub struct TranslatorPair {
    /// Maps domain B (subgroup `z_b`) into domain A.
    pub back: Mlp,
    /// Maps domain A (subgroup `z_a`) into domain B.
    pub forward: Mlp,
    pub disc_a: Mlp,
    pub disc_b: Mlp,
    pub z_a: usize,
    pub z_b: usize,
    pub cycle_coef: f64,
    pub identity_coef: f64,
    /// (generator loss, discriminator loss, mean cycle residual) per step.
    pub trace: Vec<(f64, f64, f64)>,
}

impl TranslatorPair {
    pub fn forward_translator(&self) -> Translator {
        Translator::learned(self.z_a, self.z_b, self.forward.clone())
    }

    pub fn backward_translator(&self) -> Translator {
        Translator::learned(self.z_b, self.z_a, self.back.clone())
    }
}

/// Training configuration for [`train_translator_pair`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TranslatorConfig {
    pub cycle_coef: f64,
    pub identity_coef: f64,
    pub lr: f64,
    /// Discriminator learning rate; discriminators usually need to move
    /// faster than the generators for the adversarial signal to bite.
    pub disc_lr: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub disc_hidden: usize,
    /// Hidden width of the generators; 0 trains plain affine maps.
    pub gen_hidden: usize,
    /// Learning-rate multiplier reached at the final step (linear decay
    /// from 1.0); 1.0 keeps the rate constant.
    pub final_lr_frac: f64,
    /// Fraction of trailing steps whose generator parameters are averaged
    /// into the returned maps; 0 returns the last iterate.
    pub average_tail: f64,
    /// Exponential-moving-average decay for the discriminator copies the
    /// generators are scored against; damps the discriminator-lag spiral
    /// that otherwise shrinks the learned map. 0 disables the EMA.
    pub disc_ema: f64,
    /// Train the cycle/identity terms on squared differences instead of
    /// absolute ones. The constant-magnitude L1 subgradient never anneals
    /// near the optimum and its kicks bias small translators; the reported
    /// cycle/identity losses stay mean-absolute either way.
    pub squared_distance: bool,
    pub seed: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            cycle_coef: 10.0,
            identity_coef: 1.0,
            lr: 0.008,
            disc_lr: 0.15,
            momentum: 0.5,
            steps: 4000,
            batch_size: 192,
            disc_hidden: 32,
            gen_hidden: 0,
            final_lr_frac: 0.1,
            average_tail: 0.25,
            disc_ema: 0.9,
            squared_distance: true,
            seed: 0,
        }
    }
}

/// Cycle-consistency plus identity loss on one domain:
/// `mean|a − back(forward(a))|·cycle_coef + mean|a − back(a)|·identity_coef`,
/// with mean absolute difference as the distance.
pub fn cyclegan_loss(pair: &TranslatorPair, batch_from_a: &Tensor) -> Result<f64> {
    let fwd = pair.forward.forward(batch_from_a)?;
    let cycled = pair.back.forward(&fwd)?;
    let ident = pair.back.forward(batch_from_a)?;
    let n = (batch_from_a.rows() * batch_from_a.cols()) as f64;
    let cycle: f64 = batch_from_a
        .values()
        .iter()
        .zip(cycled.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let identity: f64 = batch_from_a
        .values()
        .iter()
        .zip(ident.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    Ok(pair.cycle_coef * cycle + pair.identity_coef * identity)
}

/// Same loss for translators that are not part of a trained pair (used by
/// the bound audits, where the pair may be analytic or perturbed):
/// the distance between `x` and `back(forward(x))` plus `x` and `back(x)`.
pub fn cycle_identity_residual(
    forward: &Translator,
    back: &Translator,
    batch: &Tensor,
    cycle_coef: f64,
    identity_coef: f64,
) -> f64 {
    let cycled = back.apply_batch(&forward.apply_batch(batch));
    let ident = back.apply_batch(batch);
    let n = (batch.rows() * batch.cols()) as f64;
    let cycle: f64 = batch
        .values()
        .iter()
        .zip(cycled.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let identity: f64 = batch
        .values()
        .iter()
        .zip(ident.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    cycle_coef * cycle + identity_coef * identity
}

fn mean_abs_diff_on_tape(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

fn mean_sq_diff_on_tape(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let d = tape.sub(a, b)?;
    let d = tape.mul(d, d)?;
    Ok(tape.mean(d))
}

fn sample_rows(data: &Tensor, batch: usize, rng: &mut Rng) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..batch)
        .map(|_| data.row(rng.below(data.rows())).to_vec())
        .collect();
    Tensor::from_rows(&rows).expect("rectangular")
}

/// Train a translator pair between two unpaired samples with alternating
/// (1:1) discriminator/generator updates: discriminators maximize the
/// two-term log loss, generators minimize the non-saturating adversarial
/// loss plus cycle and identity terms.
pub fn train_translator_pair(
    data_a: &Tensor,
    data_b: &Tensor,
    z_a: usize,
    z_b: usize,
    config: &TranslatorConfig,
) -> Result<TranslatorPair> {
    if data_a.rows() == 0 || data_b.rows() == 0 {
        return Err(Error::Data("both domains need at least one example".into()));
    }
    if data_a.cols() != data_b.cols() {
        return Err(Error::Shape(format!(
            "domain dims differ: {} vs {}",
            data_a.cols(),
            data_b.cols()
        )));
    }
    let dim = data_a.cols();
    if dim > 64 {
        return Err(Error::Parameter(format!(
            "adversarial translators are desk-scale: dim {dim} > 64"
        )));
    }
    let mut rng = Rng::derive(config.seed, "translator");
    let make_gen = |rng: &mut Rng| -> Result<Mlp> {
        if config.gen_hidden == 0 {
            Mlp::near_identity(dim, 0.01, rng)
        } else {
            Mlp::new(&[dim, config.gen_hidden, dim], Head::Linear, rng)
        }
    };
    let forward = make_gen(&mut rng)?; // A -> B
    let back = make_gen(&mut rng)?; // B -> A
    let disc_a = Mlp::new(&[dim, config.disc_hidden, 1], Head::Linear, &mut rng)?;
    let disc_b = Mlp::new(&[dim, config.disc_hidden, 1], Head::Linear, &mut rng)?;

    let mut pair = TranslatorPair {
        back,
        forward,
        disc_a,
        disc_b,
        z_a,
        z_b,
        cycle_coef: config.cycle_coef,
        identity_coef: config.identity_coef,
        trace: Vec::with_capacity(config.steps),
    };

    let tail_start = config.steps - (config.average_tail.clamp(0.0, 1.0) * config.steps as f64) as usize;
    let mut fwd_sum: Vec<f64> = vec![0.0; pair.forward.flat_params().len()];
    let mut back_sum: Vec<f64> = vec![0.0; pair.back.flat_params().len()];
    let mut tail_count = 0usize;
    let mut ema_a = pair.disc_a.clone();
    let mut ema_b = pair.disc_b.clone();

    for step in 0..config.steps {
        let decay = if config.steps > 1 {
            1.0 + (config.final_lr_frac - 1.0) * step as f64 / (config.steps - 1) as f64
        } else {
            1.0
        };
        let lr = config.lr * decay;
        let disc_lr = config.disc_lr * decay;
        let batch_a = sample_rows(data_a, config.batch_size, &mut rng);
        let batch_b = sample_rows(data_b, config.batch_size, &mut rng);

        // Discriminator update: real vs frozen-generator fakes.
        let fake_b = pair.forward.forward(&batch_a)?;
        let fake_a = pair.back.forward(&batch_b)?;
        let mut tape = Tape::new();
        let disc_term = |tape: &mut Tape, disc: &Mlp, slot: usize, real: &Tensor, fake: &Tensor| -> Result<NodeId> {
            let real_in = tape.input(real.clone());
            let fake_in = tape.input(fake.clone());
            let l_real = disc.forward_on_tape(tape, real_in, slot, true)?;
            let l_fake = disc.forward_on_tape(tape, fake_in, slot, true)?;
            // -log σ(l_real) - log(1 - σ(l_fake)) = softplus(-l_real) + softplus(l_fake)
            let nr = tape.neg(l_real);
            let a = tape.softplus(nr);
            let b = tape.softplus(l_fake);
            let am = tape.mean(a);
            let bm = tape.mean(b);
            tape.add(am, bm)
        };
        let slot_b = pair.disc_a.params().len();
        let la = disc_term(&mut tape, &pair.disc_a, 0, &batch_a, &fake_a)?;
        let lb = disc_term(&mut tape, &pair.disc_b, slot_b, &batch_b, &fake_b)?;
        let disc_loss = tape.add(la, lb)?;
        let disc_loss_value = tape.value(disc_loss).item();
        let grads = tape.backward(disc_loss)?;
        pair.disc_a.zero_gradients();
        pair.disc_b.zero_gradients();
        pair.disc_a.absorb_gradients(&grads, 0);
        pair.disc_b.absorb_gradients(&grads, slot_b);
        sgd_step(pair.disc_a.params_mut(), disc_lr, config.momentum, 0.0)
            .map_err(|e| step_error(e, step))?;
        sgd_step(pair.disc_b.params_mut(), disc_lr, config.momentum, 0.0)
            .map_err(|e| step_error(e, step))?;

        // Generator update: adversarial + cycle + identity, both directions.
        let mut tape = Tape::new();
        let slot_back = pair.forward.params().len();
        let a_in = tape.input(batch_a.clone());
        let b_in = tape.input(batch_b.clone());
        let gen_b = pair.forward.forward_on_tape(&mut tape, a_in, 0, true)?; // G(a)
        let gen_a = pair.back.forward_on_tape(&mut tape, b_in, slot_back, true)?; // F(b)

        // Non-saturating adversarial terms through frozen (EMA-smoothed)
        // discriminator copies.
        let (score_a, score_b) = if config.disc_ema > 0.0 {
            let keep = config.disc_ema;
            for (ema, live) in [(&mut ema_a, &pair.disc_a), (&mut ema_b, &pair.disc_b)] {
                for (ep, lp) in ema.params_mut().iter_mut().zip(live.params()) {
                    for (e, &l) in ep.value.values_mut().iter_mut().zip(lp.value.values()) {
                        *e = keep * *e + (1.0 - keep) * l;
                    }
                }
            }
            (&ema_a, &ema_b)
        } else {
            (&pair.disc_a, &pair.disc_b)
        };
        let logit_b = score_b.forward_on_tape(&mut tape, gen_b, 0, false)?;
        let logit_a = score_a.forward_on_tape(&mut tape, gen_a, 0, false)?;
        let nb = tape.neg(logit_b);
        let na = tape.neg(logit_a);
        let adv_b = tape.softplus(nb);
        let adv_a = tape.softplus(na);
        let adv_b = tape.mean(adv_b);
        let adv_a = tape.mean(adv_a);

        // Cycle: F(G(a)) ≈ a and G(F(b)) ≈ b.
        let cyc_a = pair.back.forward_on_tape(&mut tape, gen_b, slot_back, true)?;
        let cyc_b = pair.forward.forward_on_tape(&mut tape, gen_a, 0, true)?;
        let dist = if config.squared_distance {
            mean_sq_diff_on_tape
        } else {
            mean_abs_diff_on_tape
        };
        let cycle_a = dist(&mut tape, cyc_a, a_in)?;
        let cycle_b = dist(&mut tape, cyc_b, b_in)?;

        // Identity: F(a) ≈ a and G(b) ≈ b.
        let id_a = pair.back.forward_on_tape(&mut tape, a_in, slot_back, true)?;
        let id_b = pair.forward.forward_on_tape(&mut tape, b_in, 0, true)?;
        let ident_a = dist(&mut tape, id_a, a_in)?;
        let ident_b = dist(&mut tape, id_b, b_in)?;

        let gen_loss = tape.weighted_sum(&[
            (1.0, adv_a),
            (1.0, adv_b),
            (config.cycle_coef, cycle_a),
            (config.cycle_coef, cycle_b),
            (config.identity_coef, ident_a),
            (config.identity_coef, ident_b),
        ])?;
        let gen_loss_value = tape.value(gen_loss).item();
        let cycle_residual = (tape.value(cycle_a).item() + tape.value(cycle_b).item()) / 2.0;
        if !gen_loss_value.is_finite() || !disc_loss_value.is_finite() {
            return Err(Error::Training(format!(
                "translator training diverged at step {step}"
            )));
        }
        let grads = tape.backward(gen_loss)?;
        pair.forward.zero_gradients();
        pair.back.zero_gradients();
        pair.forward.absorb_gradients(&grads, 0);
        pair.back.absorb_gradients(&grads, slot_back);
        sgd_step(pair.forward.params_mut(), lr, config.momentum, 0.0)
            .map_err(|e| step_error(e, step))?;
        sgd_step(pair.back.params_mut(), lr, config.momentum, 0.0)
            .map_err(|e| step_error(e, step))?;

        if step >= tail_start {
            for (s, v) in fwd_sum.iter_mut().zip(pair.forward.flat_params()) {
                *s += v;
            }
            for (s, v) in back_sum.iter_mut().zip(pair.back.flat_params()) {
                *s += v;
            }
            tail_count += 1;
        }
        pair.trace.push((gen_loss_value, disc_loss_value, cycle_residual));
    }
    if tail_count > 0 {
        let fwd_avg: Vec<f64> = fwd_sum.iter().map(|s| s / tail_count as f64).collect();
        let back_avg: Vec<f64> = back_sum.iter().map(|s| s / tail_count as f64).collect();
        pair.forward.set_flat_params(&fwd_avg);
        pair.back.set_flat_params(&back_avg);
    }
    Ok(pair)
}

fn step_error(e: Error, step: usize) -> Error {
    match e {
        Error::Training(msg) => Error::Training(format!("{msg} (step {step})")),
        other => other,
    }
}

/// Augment one example with its generated coupled set: one input per
/// subgroup of its class, with `z' = z` mapping to the example itself.
pub fn augment_coupled(
    example: &LabeledExample,
    translators: &TranslatorSet,
    subgroups: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(subgroups);
    for zp in 0..subgroups {
        if zp == example.z {
            out.push(example.x.clone());
            continue;
        }
        let t = translators.get(example.y, example.z, zp).ok_or_else(|| {
            Error::Config(format!(
                "no translator for class {} subgroup pair ({} -> {})",
                example.y, example.z, zp
            ))
        })?;
        out.push(t.apply(&example.x));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupled::world::WorldParams;

    fn world() -> CoupledWorld {
        CoupledWorld::generate(WorldParams::new(2, 2, 4, 5, 3)).unwrap()
    }

    #[test]
    fn analytic_translators_are_exact() {
        let w = world();
        let set = analytic_translators(&w);
        for y in 0..2 {
            for i in 0..4 {
                for z in 0..2 {
                    for zp in 0..2 {
                        let t = set.get(y, z, zp).unwrap();
                        let moved = t.apply(&w.render(y, i, z));
                        let target = w.render(y, i, zp);
                        for (m, tg) in moved.iter().zip(&target) {
                            assert_eq!(m.to_bits(), tg.to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn identity_translator_is_identity() {
        let t = Translator::identity(0);
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(t.apply(&x), x);
    }

    #[test]
    fn analytic_cycle_loss_is_zero() {
        let w = world();
        let set = analytic_translators(&w);
        let batch = Tensor::from_rows(&[w.render(0, 0, 0), w.render(0, 1, 0)]).unwrap();
        let fwd = set.get(0, 0, 1).unwrap();
        let back = set.get(0, 1, 0).unwrap();
        let r = cycle_identity_residual(fwd, back, &batch, 10.0, 0.0);
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn shift_generators_hand_example() {
        // G = +c shift, F = −c shift on 1-D points: cycle 0, identity |c|·coef.
        let c = 0.75;
        let g = Translator::affine(
            0,
            1,
            AffineMap {
                matrix: vec![1.0],
                offset: vec![c],
                dim: 1,
            },
        );
        let f = Translator::affine(
            1,
            0,
            AffineMap {
                matrix: vec![1.0],
                offset: vec![-c],
                dim: 1,
            },
        );
        let batch = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![-2.0]]).unwrap();
        let cycle_only = cycle_identity_residual(&g, &f, &batch, 10.0, 0.0);
        assert!(cycle_only.abs() < 1e-12);
        let with_identity = cycle_identity_residual(&g, &f, &batch, 10.0, 1.0);
        assert!((with_identity - c).abs() < 1e-12);
    }

    #[test]
    fn augment_coupled_contract() {
        let w = world();
        let set = analytic_translators(&w);
        let e = LabeledExample {
            x: w.render(1, 2, 0),
            y: 1,
            z: 0,
            coupled_id: Some(w.coupled_id(1, 2)),
        };
        let augs = augment_coupled(&e, &set, 2).unwrap();
        assert_eq!(augs.len(), 2);
        assert_eq!(augs[0], e.x);
        let expect = w.render(1, 2, 1);
        for (a, b) in augs[1].iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // repeated calls identical
        assert_eq!(augs, augment_coupled(&e, &set, 2).unwrap());
    }

    #[test]
    fn augment_missing_translator_names_pair() {
        let e = LabeledExample {
            x: vec![0.0],
            y: 0,
            z: 0,
            coupled_id: None,
        };
        let err = augment_coupled(&e, &TranslatorSet::default(), 2).unwrap_err();
        assert!(err.to_string().contains("(0 -> 1)"));
    }

    fn gaussian_rows(rng: &mut Rng, mean: f64, n: usize) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![mean + rng.normal()]).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn identical_domains_drive_back_map_toward_identity() {
        let mut rng = Rng::new(5);
        let data_a = gaussian_rows(&mut rng, 0.0, 1024);
        let data_b = gaussian_rows(&mut rng, 0.0, 1024);
        let config = TranslatorConfig {
            steps: 1200,
            batch_size: 96,
            seed: 1,
            ..TranslatorConfig::default()
        };
        let pair = train_translator_pair(&data_a, &data_b, 0, 1, &config).unwrap();
        let f = pair.backward_translator();
        let mut worst: f64 = 0.0;
        let mut x = -2.0;
        while x <= 2.0 {
            worst = worst.max((f.apply(&[x])[0] - x).abs());
            x += 0.25;
        }
        // mean abs over the grid is the spec target; the max is close here
        assert!(worst < 0.05, "max |F(x) - x| = {worst}");
    }

    #[test]
    fn cycle_residual_decreases_over_training() {
        let mut rng = Rng::new(6);
        let data_a = gaussian_rows(&mut rng, 0.0, 1024);
        let data_b = gaussian_rows(&mut rng, 2.0, 1024);
        let config = TranslatorConfig {
            identity_coef: 0.0,
            steps: 1500,
            batch_size: 96,
            seed: 2,
            ..TranslatorConfig::default()
        };
        let pair = train_translator_pair(&data_a, &data_b, 0, 1, &config).unwrap();
        let head: f64 = pair.trace[..50].iter().map(|t| t.2).sum::<f64>() / 50.0;
        let tail: f64 = pair.trace[pair.trace.len() - 50..]
            .iter()
            .map(|t| t.2)
            .sum::<f64>()
            / 50.0;
        assert!(
            tail < head,
            "trailing cycle residual {tail} vs initial {head}"
        );
    }

    #[test]
    fn mismatched_domain_dims_error() {
        let a = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0]]).unwrap();
        let err = train_translator_pair(&a, &b, 0, 1, &TranslatorConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn translator_json_round_trip() {
        let w = world();
        let set = analytic_translators(&w);
        let t = set.get(0, 0, 1).unwrap();
        let json = t.to_json();
        let back = Translator::from_json(&json).unwrap();
        let x = w.render(0, 1, 0);
        let (a, b) = (t.apply(&x), back.apply(&x));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-15);
        }
    }
}
