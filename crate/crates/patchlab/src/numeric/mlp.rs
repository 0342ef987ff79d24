//! Feedforward models: parameters, initialization, plain and taped forward
//! passes. One `Mlp` type covers classifiers (softmax head), translators
//! (linear head) and discriminators (single logit).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::tape::{NodeId, Tape};
use crate::numeric::tensor::Tensor;
use crate::rng::Rng;

/// Trainable tensor with its gradient and momentum buffer.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub gradient: Tensor,
    pub momentum: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            value,
            gradient: Tensor::zeros(shape.clone()),
            momentum: Tensor::zeros(shape),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    None,
}

/// Output head applied after the last affine layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Probability rows over classes.
    Softmax,
    /// Raw affine output (translators, discriminator logits).
    Linear,
}

/// Dense feedforward network. Layer weights are `(in, out)` row-major.
#[derive(Clone, Debug)]
pub struct Mlp {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    pub head: Head,
    params: Vec<Parameter>,
}

impl Mlp {
    /// Build with Glorot-uniform weights (`±sqrt(6/(fan_in+fan_out))`) and
    /// zero biases, drawn from `rng`.
    pub fn new(dims: &[usize], head: Head, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Parameter(
                "an MLP needs at least input and output dims".into(),
            ));
        }
        let mut params = Vec::new();
        let mut activations = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_in(-bound, bound))
                .collect();
            params.push(Parameter::new(
                format!("layer{l}.weight"),
                Tensor::matrix(fan_in, fan_out, w)?,
            ));
            params.push(Parameter::new(
                format!("layer{l}.bias"),
                Tensor::vector(vec![0.0; fan_out]),
            ));
            activations.push(if l + 2 == dims.len() {
                Activation::None
            } else {
                Activation::Relu
            });
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            activations,
            head,
            params,
        })
    }

    /// Single affine map initialized near the identity: `W = I + eps·noise`,
    /// `b = 0`. Used for translator generators, which should start as a
    /// no-op between subgroups.
    pub fn near_identity(dim: usize, eps: f64, rng: &mut Rng) -> Result<Self> {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                w[i * dim + j] = if i == j { 1.0 } else { 0.0 } + eps * rng.normal();
            }
        }
        Ok(Mlp {
            dims: vec![dim, dim],
            activations: vec![Activation::None],
            head: Head::Linear,
            params: vec![
                Parameter::new("layer0.weight", Tensor::matrix(dim, dim, w)?),
                Parameter::new("layer0.bias", Tensor::vector(vec![0.0; dim])),
            ],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects input width {}, batch has {}",
                self.input_dim(),
                batch.cols()
            )));
        }
        Ok(())
    }

    /// Plain forward pass. Softmax heads return probability rows that are
    /// strictly positive and sum to 1 within 1e-12.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for (l, act) in self.activations.iter().enumerate() {
            let w = &self.params[2 * l].value;
            let b = &self.params[2 * l + 1].value;
            let mut y = x.matmul(w)?;
            let cols = y.cols();
            for (i, v) in y.values_mut().iter_mut().enumerate() {
                *v += b.values()[i % cols];
            }
            if *act == Activation::Relu {
                y = y.map(|v| v.max(0.0));
            }
            x = y;
        }
        match self.head {
            Head::Linear => Ok(x),
            Head::Softmax => {
                let cols = x.cols();
                let mut out = x;
                for r in 0..out.rows() {
                    let row = &mut out.values_mut()[r * cols..(r + 1) * cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Forward pass recorded on `tape`, returning the node before the head
    /// (pre-softmax logits / raw output).
    ///
    /// With `trainable`, layer parameters are registered under slots
    /// `slot_base + param_index`; otherwise they enter as constants and the
    /// tape still propagates gradients *through* them to earlier nodes.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        input: NodeId,
        slot_base: usize,
        trainable: bool,
    ) -> Result<NodeId> {
        if tape.value(input).cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects input width {}, batch has {}",
                self.input_dim(),
                tape.value(input).cols()
            )));
        }
        let mut x = input;
        for (l, act) in self.activations.iter().enumerate() {
            let w = &self.params[2 * l];
            let b = &self.params[2 * l + 1];
            let wn = if trainable {
                tape.param(slot_base + 2 * l, w.value.clone())
            } else {
                tape.input(w.value.clone())
            };
            let bn = if trainable {
                tape.param(slot_base + 2 * l + 1, b.value.clone())
            } else {
                tape.input(b.value.clone())
            };
            x = tape.matmul(x, wn)?;
            x = tape.add_bias(x, bn)?;
            if *act == Activation::Relu {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Forward recorded on `tape` up to the last hidden activation
    /// (the feature layer a domain head attaches to). Returns
    /// `(features, logits)`.
    pub fn forward_features_on_tape(
        &self,
        tape: &mut Tape,
        input: NodeId,
        slot_base: usize,
    ) -> Result<(NodeId, NodeId)> {
        let mut x = input;
        let n_layers = self.activations.len();
        // With no hidden layer the input itself is the feature layer.
        let mut features = input;
        for (l, act) in self.activations.iter().enumerate() {
            let wn = tape.param(slot_base + 2 * l, self.params[2 * l].value.clone());
            let bn = tape.param(slot_base + 2 * l + 1, self.params[2 * l + 1].value.clone());
            x = tape.matmul(x, wn)?;
            x = tape.add_bias(x, bn)?;
            if *act == Activation::Relu {
                x = tape.relu(x);
            }
            if l + 2 == n_layers {
                features = x;
            }
        }
        Ok((features, x))
    }

    /// Add taped gradients into the parameters' gradient buffers.
    pub fn absorb_gradients(&mut self, grads: &[Option<Tensor>], slot_base: usize) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if let Some(Some(g)) = grads.get(slot_base + i) {
                for (pg, gv) in p.gradient.values_mut().iter_mut().zip(g.values()) {
                    *pg += gv;
                }
            }
        }
    }

    pub fn zero_gradients(&mut self) {
        for p in &mut self.params {
            for v in p.gradient.values_mut() {
                *v = 0.0;
            }
        }
    }

    /// Flatten all parameter values (for finite differencing / snapshots).
    pub fn flat_params(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.values().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.values_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        debug_assert_eq!(off, flat.len());
    }
}

/// SGD with momentum and weight decay:
/// `buf <- momentum·buf + grad + weight_decay·param`, then
/// `param <- param − lr·buf`.
pub fn sgd_step(params: &mut [Parameter], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Parameter(format!("learning rate must be > 0, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Parameter(format!(
            "momentum must be in [0, 1), got {momentum}"
        )));
    }
    for p in params.iter_mut() {
        if !p.gradient.all_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient in parameter `{}`",
                p.name
            )));
        }
        for i in 0..p.value.len() {
            let g = p.gradient.values()[i] + weight_decay * p.value.values()[i];
            let m = momentum * p.momentum.values()[i] + g;
            p.momentum.values_mut()[i] = m;
            p.value.values_mut()[i] -= lr * m;
        }
    }
    Ok(())
}

/// Central-difference gradient oracle: `(f(w+h) − f(w−h)) / 2h` per
/// coordinate of the model's flattened parameters.
pub fn finite_difference_gradient(
    model: &mut Mlp,
    step: f64,
    mut loss_fn: impl FnMut(&Mlp) -> Result<f64>,
) -> Result<Vec<f64>> {
    if step <= 0.0 {
        return Err(Error::Parameter(format!("step must be > 0, got {step}")));
    }
    let base = model.flat_params();
    let mut grad = vec![0.0; base.len()];
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + step;
        model.set_flat_params(&work);
        let up = loss_fn(model)?;
        work[i] = base[i] - step;
        model.set_flat_params(&work);
        let down = loss_fn(model)?;
        work[i] = base[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    model.set_flat_params(&base);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> Rng {
        Rng::new(99)
    }

    #[test]
    fn zero_weight_model_is_uniform() {
        let mut r = rng();
        let mut m = Mlp::new(&[4, 3], Head::Softmax, &mut r).unwrap();
        for p in m.params_mut() {
            for v in p.value.values_mut() {
                *v = 0.0;
            }
        }
        let out = m
            .forward(&Tensor::matrix(2, 4, vec![1.0, -2.0, 0.5, 3.0, 0.0, 0.0, 1.0, -1.0]).unwrap())
            .unwrap();
        for r in 0..2 {
            for &v in out.row(r) {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_logits_softmax() {
        // Single affine layer = identity on logits (2, 0)
        let mut r = rng();
        let mut m = Mlp::new(&[2, 2], Head::Softmax, &mut r).unwrap();
        m.params_mut()[0].value = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        m.params_mut()[1].value = Tensor::vector(vec![0.0, 0.0]);
        let out = m.forward(&Tensor::matrix(1, 2, vec![2.0, 0.0]).unwrap()).unwrap();
        assert!((out.values()[0] - 0.8808).abs() < 5e-5);
        assert!((out.values()[1] - 0.1192).abs() < 5e-5);
    }

    #[test]
    fn forward_rows_sum_to_one() {
        let mut r = rng();
        let m = Mlp::new(&[5, 8, 4], Head::Softmax, &mut r).unwrap();
        let x: Vec<f64> = (0..15).map(|i| (i as f64) * 0.3 - 2.0).collect();
        let out = m.forward(&Tensor::matrix(3, 5, x).unwrap()).unwrap();
        assert_eq!(out.rows(), 3);
        for i in 0..3 {
            let s: f64 = out.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(out.row(i).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn forward_rejects_bad_width() {
        let mut r = rng();
        let m = Mlp::new(&[5, 2], Head::Softmax, &mut r).unwrap();
        let err = m.forward(&Tensor::matrix(1, 4, vec![0.0; 4]).unwrap());
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn sgd_plain_step() {
        let mut p = Parameter::new("w", Tensor::vector(vec![1.0, 2.0]));
        p.gradient = Tensor::vector(vec![0.5, -1.0]);
        sgd_step(std::slice::from_mut(&mut p), 0.1, 0.0, 0.0).unwrap();
        assert!((p.value.values()[0] - 0.95).abs() < 1e-15);
        assert!((p.value.values()[1] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_grad_keeps_params() {
        let mut p = Parameter::new("w", Tensor::vector(vec![1.0]));
        sgd_step(std::slice::from_mut(&mut p), 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p.value.values()[0], 1.0);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        // constant grad g: displacement after 2 steps = lr·g·(1 + 1.9)
        let g = 2.0;
        let lr = 0.1;
        let mut p = Parameter::new("w", Tensor::vector(vec![0.0]));
        for _ in 0..2 {
            p.gradient = Tensor::vector(vec![g]);
            sgd_step(std::slice::from_mut(&mut p), lr, 0.9, 0.0).unwrap();
        }
        let expect = -lr * g * (1.0 + 1.9);
        assert!((p.value.values()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn sgd_names_non_finite_param() {
        let mut p = Parameter::new("layer3.weight", Tensor::vector(vec![1.0]));
        p.gradient = Tensor::vector(vec![f64::NAN]);
        let err = sgd_step(std::slice::from_mut(&mut p), 0.1, 0.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("layer3.weight"));
    }

    #[test]
    fn finite_difference_on_square() {
        let mut r = rng();
        let mut m = Mlp::new(&[1, 1], Head::Linear, &mut r).unwrap();
        m.params_mut()[0].value = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        m.params_mut()[1].value = Tensor::vector(vec![0.0]);
        // f(model) = w^2 (ignoring bias)
        let grad = finite_difference_gradient(&mut m, 1e-5, |mm| {
            let w = mm.params()[0].value.values()[0];
            Ok(w * w)
        })
        .unwrap();
        assert!((grad[0] - 6.0).abs() < 1e-8);
        assert!(grad[1].abs() < 1e-8);
    }

    #[test]
    fn finite_difference_constant_is_zero() {
        let mut r = rng();
        let mut m = Mlp::new(&[2, 2], Head::Linear, &mut r).unwrap();
        let grad = finite_difference_gradient(&mut m, 1e-5, |_| Ok(7.5)).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }
}
