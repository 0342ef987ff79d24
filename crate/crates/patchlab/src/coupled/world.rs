//! Finite, exactly enumerable generative worlds with coupled sets.
//!
//! A world draws a class `y`, a latent coupled-set identity `i` within the
//! class, and a subgroup `z` — with `z` and `i` independent given `y` by
//! construction — and renders the example through a per-subgroup affine map
//! `g_z(u) = P_z·u + b_z`, where `P_z` is a signed permutation of the
//! class-signal coordinates and every value is a multiple of 2⁻²⁰. All
//! renderer arithmetic is therefore exact in f64: the true inter-subgroup
//! translator `g_{z'} ∘ g_z⁻¹` is a known affine map that reproduces
//! coupled-set members bit for bit, and every information-theoretic
//! quantity over the world is computable by exact enumeration.
//!
//! Structure of an example: coordinate 0 carries the subgroup offset (the
//! spurious shortcut), the remaining coordinates carry the class anchor
//! plus per-latent variation, laid out in a subgroup-dependent order. A
//! model keyed on coordinate 0 is perfectly correlated with the majority
//! pairing; class evidence transfers across subgroups only by undoing the
//! permutation — which is what the translators provide.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Affine map `x ↦ A·x + b` on input vectors.
#[derive(Clone, Debug)]
pub struct AffineMap {
    /// Row-major `(dim, dim)` matrix, applied as `x ↦ x·Aᵀ` on row vectors.
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
    pub dim: usize,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        AffineMap {
            matrix,
            offset: vec![0.0; dim],
            dim,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = self.offset.clone();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * d..(i + 1) * d];
            *o += row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        }
        out
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &AffineMap) -> AffineMap {
        let d = self.dim;
        let mut matrix = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += self.matrix[i * d + l] * other.matrix[l * d + j];
                }
                matrix[i * d + j] = s;
            }
        }
        let offset = self.apply(&other.offset);
        AffineMap {
            matrix,
            offset,
            dim: d,
        }
    }
}

/// Structural knobs for world generation. The defaults make the subgroup
/// offset a strong linear shortcut while the class signal lives in the
/// latent distribution and is rotated per subgroup, which is what the
/// training experiments need to separate ERM / GDRO / consistency-trained
/// models.
#[derive(Clone, Debug)]
pub struct WorldParams {
    pub num_classes: usize,
    pub subgroups_per_class: usize,
    pub latents_per_class: usize,
    pub input_dim: usize,
    pub seed: u64,
    /// Norm of the per-class latent anchor.
    pub class_separation: f64,
    /// Spread of latent identities around their class anchor.
    pub latent_scale: f64,
    /// Norm of the per-subgroup offset (the spurious cue).
    pub subgroup_offset: f64,
}

impl WorldParams {
    pub fn new(
        num_classes: usize,
        subgroups_per_class: usize,
        latents_per_class: usize,
        input_dim: usize,
        seed: u64,
    ) -> Self {
        WorldParams {
            num_classes,
            subgroups_per_class,
            latents_per_class,
            input_dim,
            seed,
            class_separation: 1.0,
            latent_scale: 0.35,
            subgroup_offset: 3.0,
        }
    }
}

/// Finite coupled generative model; see the module docs.
#[derive(Clone, Debug)]
pub struct CoupledWorld {
    params: WorldParams,
    /// Latent vectors, `latents[y][i]` of length `input_dim`.
    latents: Vec<Vec<Vec<f64>>>,
    /// Per-subgroup renderers (shared across classes).
    renderers: Vec<AffineMap>,
    inverse_renderers: Vec<AffineMap>,
    /// p(y); sums to 1.
    class_weights: Vec<f64>,
    /// p(z | y) per class; each sums to 1.
    subgroup_weights: Vec<Vec<f64>>,
    /// p(i | y) per class; each sums to 1.
    latent_weights: Vec<Vec<f64>>,
}

/// One enumerated atom of the world distribution.
#[derive(Clone, Debug)]
pub struct WorldAtom {
    pub class: usize,
    pub latent: usize,
    pub subgroup: usize,
    pub prob: f64,
    pub input: Vec<f64>,
}

impl CoupledWorld {
    /// Build a world with uniform sampling weights.
    pub fn generate(params: WorldParams) -> Result<Self> {
        if params.subgroups_per_class < 2 {
            return Err(Error::Parameter("need at least 2 subgroups per class".into()));
        }
        if params.latents_per_class < 2 {
            return Err(Error::Parameter("need at least 2 latents per class".into()));
        }
        if params.input_dim < 1 {
            return Err(Error::Parameter("need input_dim >= 1".into()));
        }
        let d = params.input_dim;
        let k = params.subgroups_per_class;
        let block = d.saturating_sub(1);
        let mut rng = Rng::derive(params.seed, "world");

        // Latents: coordinate 0 is reserved for the subgroup offset; the
        // class anchor lives on coordinates 1 and 2 (when present) with
        // per-latent spread over the whole class block. Everything is
        // quantized so renderer arithmetic stays exact.
        let mut latents = Vec::new();
        for y in 0..params.num_classes {
            let angle = std::f64::consts::TAU * y as f64 / params.num_classes as f64;
            let mut anchor = vec![0.0; d];
            if d > 1 {
                anchor[1] = quantize(params.class_separation * angle.cos());
            }
            if d > 2 {
                anchor[2] = quantize(params.class_separation * angle.sin());
            }
            let mut class_latents = Vec::new();
            for _ in 0..params.latents_per_class {
                let mut u = anchor.clone();
                for coord in u.iter_mut().skip(1) {
                    *coord = quantize(*coord + params.latent_scale * rng.normal());
                }
                class_latents.push(u);
            }
            latents.push(class_latents);
        }

        // Renderers: subgroup z cyclically shifts the class block by z
        // positions (sign-flipped for odd z) and adds its offset along
        // coordinate 0. Signed permutations keep each output coordinate a
        // single exact sum.
        let mut renderers = Vec::new();
        let mut inverse_renderers = Vec::new();
        for z in 0..k {
            let shift = if block > 0 { z % block } else { 0 };
            let sign = if z % 2 == 0 { 1.0 } else { -1.0 };
            let mut matrix = vec![0.0; d * d];
            matrix[0] = 1.0; // offset axis untouched
            for j in 0..block {
                let target = 1 + (j + shift) % block;
                matrix[target * d + (1 + j)] = sign;
            }
            let dir = if k == 2 {
                if z == 0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                quantize((k as f64 - 1.0 - 2.0 * z as f64) / (k as f64 - 1.0))
            };
            let mut offset = vec![0.0; d];
            offset[0] = quantize(params.subgroup_offset) * dir;

            // Inverse of x = P·u + b is u = Pᵀ·(x − b).
            let mut inv_matrix = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    inv_matrix[j * d + i] = matrix[i * d + j];
                }
            }
            let inv = AffineMap {
                matrix: inv_matrix.clone(),
                offset: {
                    let neg: Vec<f64> = offset.iter().map(|&o| -o).collect();
                    AffineMap {
                        matrix: inv_matrix,
                        offset: vec![0.0; d],
                        dim: d,
                    }
                    .apply(&neg)
                },
                dim: d,
            };
            renderers.push(AffineMap {
                matrix,
                offset,
                dim: d,
            });
            inverse_renderers.push(inv);
        }

        let c = params.num_classes;
        Ok(CoupledWorld {
            class_weights: vec![1.0 / c as f64; c],
            subgroup_weights: vec![vec![1.0 / k as f64; k]; c],
            latent_weights: vec![vec![1.0 / params.latents_per_class as f64; params.latents_per_class]; c],
            latents,
            renderers,
            inverse_renderers,
            params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.params.num_classes
    }

    pub fn subgroups_per_class(&self) -> usize {
        self.params.subgroups_per_class
    }

    pub fn latents_per_class(&self) -> usize {
        self.params.latents_per_class
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn class_weight(&self, y: usize) -> f64 {
        self.class_weights[y]
    }

    pub fn subgroup_weight(&self, y: usize, z: usize) -> f64 {
        self.subgroup_weights[y][z]
    }

    pub fn latent_weight(&self, y: usize, i: usize) -> f64 {
        self.latent_weights[y][i]
    }

    pub fn subgroup_weights_uniform(&self) -> bool {
        let k = self.params.subgroups_per_class as f64;
        self.subgroup_weights
            .iter()
            .all(|w| w.iter().all(|&p| (p - 1.0 / k).abs() < 1e-12))
    }

    /// Tilt p(z|y) to correlate subgroup with class: for 2×2 worlds,
    /// `p(z = y | y) = (1 + rho) / 2`.
    pub fn set_correlation(&mut self, rho: f64) -> Result<()> {
        if self.params.num_classes != 2 || self.params.subgroups_per_class != 2 {
            return Err(Error::Parameter(
                "correlation tilt is defined for 2-class / 2-subgroup worlds".into(),
            ));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::Parameter(format!("rho must be in [-1, 1], got {rho}")));
        }
        let maj = (1.0 + rho) / 2.0;
        self.subgroup_weights[0] = vec![maj, 1.0 - maj];
        self.subgroup_weights[1] = vec![1.0 - maj, maj];
        Ok(())
    }

    /// Globally unique coupled-set identity.
    pub fn coupled_id(&self, y: usize, latent: usize) -> usize {
        y * self.params.latents_per_class + latent
    }

    pub fn render(&self, y: usize, latent: usize, z: usize) -> Vec<f64> {
        self.renderers[z].apply(&self.latents[y][latent])
    }

    /// Exact joint probability of the atom `(y, i, z)`.
    pub fn atom_prob(&self, y: usize, latent: usize, z: usize) -> f64 {
        self.class_weights[y] * self.latent_weights[y][latent] * self.subgroup_weights[y][z]
    }

    /// Enumerate every atom of the joint.
    pub fn enumerate(&self) -> Vec<WorldAtom> {
        let mut out = Vec::new();
        for y in 0..self.params.num_classes {
            for i in 0..self.params.latents_per_class {
                for z in 0..self.params.subgroups_per_class {
                    out.push(WorldAtom {
                        class: y,
                        latent: i,
                        subgroup: z,
                        prob: self.atom_prob(y, i, z),
                        input: self.render(y, i, z),
                    });
                }
            }
        }
        out
    }

    /// The exact affine translator `g_{z'} ∘ g_z⁻¹`.
    pub fn true_translator(&self, z: usize, z_prime: usize) -> AffineMap {
        self.renderers[z_prime].compose(&self.inverse_renderers[z])
    }
}

/// Round to the 2⁻²⁰ grid; every grid value (and any small sum of them)
/// is exactly representable in f64.
fn quantize(v: f64) -> f64 {
    const GRID: f64 = (1u64 << 20) as f64;
    (v * GRID).round() / GRID
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_world() -> CoupledWorld {
        CoupledWorld::generate(WorldParams::new(2, 2, 4, 6, 9)).unwrap()
    }

    #[test]
    fn counting_examples_and_coupled_sets() {
        let w = small_world();
        let atoms = w.enumerate();
        assert_eq!(atoms.len(), 16); // 2 classes · 4 latents · 2 subgroups
        let ids: std::collections::HashSet<usize> = atoms
            .iter()
            .map(|a| w.coupled_id(a.class, a.latent))
            .collect();
        assert_eq!(ids.len(), 8); // 8 coupled sets of size 2
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_coupled_set_has_k_members() {
        let w = small_world();
        let mut per_id = std::collections::HashMap::new();
        for a in w.enumerate() {
            *per_id.entry(w.coupled_id(a.class, a.latent)).or_insert(0usize) += 1;
        }
        assert!(per_id.values().all(|&c| c == 2));
    }

    #[test]
    fn renderers_are_injective_on_the_latent_set() {
        let w = small_world();
        let atoms = w.enumerate();
        for a in &atoms {
            for b in &atoms {
                if a.subgroup == b.subgroup && (a.class, a.latent) != (b.class, b.latent) {
                    let dist: f64 = a
                        .input
                        .iter()
                        .zip(&b.input)
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    assert!(dist > 1e-12);
                }
            }
        }
    }

    #[test]
    fn true_translator_maps_coupled_members_bit_exactly() {
        let w = small_world();
        for y in 0..2 {
            for i in 0..4 {
                for z in 0..2 {
                    for zp in 0..2 {
                        let t = w.true_translator(z, zp);
                        let moved = t.apply(&w.render(y, i, z));
                        let target = w.render(y, i, zp);
                        for (m, t) in moved.iter().zip(&target) {
                            assert_eq!(m.to_bits(), t.to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn translator_round_trip_is_identity() {
        let w = small_world();
        let fwd = w.true_translator(0, 1);
        let back = w.true_translator(1, 0);
        let x = w.render(1, 2, 0);
        let back_again = back.apply(&fwd.apply(&x));
        for (a, b) in x.iter().zip(&back_again) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn correlation_tilt_keeps_normalization() {
        let mut w = small_world();
        w.set_correlation(0.98).unwrap();
        assert!((w.subgroup_weight(0, 0) - 0.99).abs() < 1e-15);
        assert!((w.subgroup_weight(1, 1) - 0.99).abs() < 1e-15);
        let total: f64 = w.enumerate().iter().map(|a| a.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(!w.subgroup_weights_uniform());
    }
}
