//! Minimal differentiable-computation core: dense tensors, a reverse-mode
//! tape, feedforward models and SGD. Everything runs in f64 — the
//! verification suites assert identities at 1e-9..1e-12 tolerances that
//! f32 cannot hold.

pub mod mlp;
pub mod tape;
pub mod tensor;

pub use mlp::{finite_difference_gradient, sgd_step, Activation, Head, Mlp, Parameter};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod gradient_check {
    use super::*;
    use crate::rng::Rng;

    /// Mean cross-entropy of a taped classifier forward pass.
    fn taped_ce(tape: &mut Tape, model: &Mlp, x: &Tensor, labels: &[usize]) -> NodeId {
        let input = tape.input(x.clone());
        let logits = model.forward_on_tape(tape, input, 0, true).unwrap();
        let ls = tape.log_softmax(logits);
        let c = model.output_dim();
        let mut onehot = vec![0.0; labels.len() * c];
        for (i, &y) in labels.iter().enumerate() {
            onehot[i * c + y] = 1.0;
        }
        let oh = tape.input(Tensor::matrix(labels.len(), c, onehot).unwrap());
        let picked = tape.mul(ls, oh).unwrap();
        let total = tape.sum(picked);
        let scaled = tape.scale(total, -1.0 / labels.len() as f64);
        scaled
    }

    #[test]
    fn backprop_matches_central_differences() {
        // 100 random 2-layer models/batches, relative error < 1e-5.
        let mut rng = Rng::new(2024);
        for trial in 0..100 {
            let dims = [3 + trial % 3, 4 + trial % 2, 2 + trial % 2];
            let mut model = Mlp::new(&dims, Head::Softmax, &mut rng).unwrap();
            let n = 3;
            let x: Vec<f64> = (0..n * dims[0]).map(|_| rng.normal()).collect();
            let x = Tensor::matrix(n, dims[0], x).unwrap();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(dims[2])).collect();

            let mut tape = Tape::new();
            let loss = taped_ce(&mut tape, &model, &x, &labels);
            let grads = tape.backward(loss).unwrap();
            model.zero_gradients();
            model.absorb_gradients(&grads, 0);
            let analytic: Vec<f64> = model
                .params()
                .iter()
                .flat_map(|p| p.gradient.values().iter().copied())
                .collect();

            let numeric = finite_difference_gradient(&mut model, 1e-5, |m| {
                let mut t = Tape::new();
                let l = taped_ce(&mut t, m, &x, &labels);
                Ok(t.value(l).item())
            })
            .unwrap();

            for (a, n) in analytic.iter().zip(&numeric) {
                let denom = a.abs().max(n.abs()).max(1e-4);
                assert!(
                    ((a - n) / denom).abs() < 1e-5,
                    "trial {trial}: analytic {a} vs numeric {n}"
                );
            }
        }
    }
}
