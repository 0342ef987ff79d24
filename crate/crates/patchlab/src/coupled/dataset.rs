//! Group-annotated datasets and the correlated sampling procedure.

use serde::Serialize;
use std::collections::BTreeMap;

use crate::coupled::world::CoupledWorld;
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::rng::Rng;

/// One training example with its class, subgroup and (for synthetic worlds)
/// coupled-set identity.
#[derive(Clone, Debug)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
    pub z: usize,
    pub coupled_id: Option<usize>,
}

/// Per-split example collections with exact per-(y, z) accounting.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub num_classes: usize,
    pub subgroups_per_class: usize,
    pub input_dim: usize,
    pub meta: DatasetMeta,
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetMeta {
    pub source: String,
    pub n: usize,
    pub rho: f64,
    pub seed: u64,
    /// True when the zigzag subgroup was synthesized rather than read from
    /// a corrupted-image file.
    pub corruption_synthetic: bool,
}

/// `counts[(y, z)]` for one split.
pub type CellCounts = BTreeMap<(usize, usize), usize>;

pub fn cell_counts(examples: &[LabeledExample]) -> CellCounts {
    let mut counts = CellCounts::new();
    for e in examples {
        *counts.entry((e.y, e.z)).or_insert(0) += 1;
    }
    counts
}

impl DatasetSplit {
    pub fn train_counts(&self) -> CellCounts {
        cell_counts(&self.train)
    }

    pub fn validation_counts(&self) -> CellCounts {
        cell_counts(&self.validation)
    }

    pub fn test_counts(&self) -> CellCounts {
        cell_counts(&self.test)
    }

    /// JSON manifest with per-cell counts and provenance.
    pub fn manifest(&self) -> serde_json::Value {
        let render = |c: &CellCounts| {
            c.iter()
                .map(|(&(y, z), &n)| (format!("y{y}_z{z}"), serde_json::json!(n)))
                .collect::<serde_json::Map<_, _>>()
        };
        serde_json::json!({
            "meta": self.meta,
            "train": render(&self.train_counts()),
            "validation": render(&self.validation_counts()),
            "test": render(&self.test_counts()),
        })
    }
}

/// Assemble a `(n, dim)` input tensor and label vectors for a set of
/// example indices.
pub fn batch_tensor(examples: &[LabeledExample], indices: &[usize]) -> (Tensor, Vec<usize>, Vec<usize>) {
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| examples[i].x.clone()).collect();
    let labels = indices.iter().map(|&i| examples[i].y).collect();
    let groups = indices.iter().map(|&i| examples[i].z).collect();
    (
        Tensor::from_rows(&rows).expect("batch rows are rectangular"),
        labels,
        groups,
    )
}

/// The four cell counts of the correlated sampling procedure:
/// `floor((rho+1)·n/4)` for the two majority cells `(y = z)` and
/// `n/2 − floor((rho+1)·n/4)` for the two minority cells.
pub fn correlation_cell_counts(n: usize, rho: f64) -> Result<[(usize, usize, usize); 4]> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Parameter(format!("rho must be in [-1, 1], got {rho}")));
    }
    let majority = ((rho + 1.0) * n as f64 / 4.0).floor() as usize;
    let half = n / 2;
    let minority = half.checked_sub(majority).ok_or_else(|| {
        Error::Parameter(format!(
            "minority cell count would be negative: n/2 = {half}, majority = {majority}"
        ))
    })?;
    Ok([
        (0, 0, majority),
        (0, 1, minority),
        (1, 0, minority),
        (1, 1, majority),
    ])
}

/// Sample a correlated dataset from a synthetic world.
///
/// Train/validation/test draw from disjoint latent pools so splits never
/// share a coupled set; validation is half the sampled training data and
/// the test split is subgroup-balanced with `n/8` examples per cell.
pub fn sample_dataset(world: &CoupledWorld, n: usize, rho: f64, seed: u64) -> Result<DatasetSplit> {
    if world.num_classes() != 2 || world.subgroups_per_class() != 2 {
        return Err(Error::Parameter(
            "correlated sampling is defined for 2-class / 2-subgroup worlds".into(),
        ));
    }
    let cells = correlation_cell_counts(n, rho)?;
    let test_per_cell = n / 8;

    // Partition each class's latents: half for train+validation, a quarter
    // each for validation and test.
    let l = world.latents_per_class();
    if l < 4 {
        return Err(Error::Parameter(
            "need at least 4 latents per class to keep splits coupled-disjoint".into(),
        ));
    }
    let mut rng = Rng::derive(seed, "sample_dataset");
    let mut pools: Vec<[Vec<usize>; 3]> = Vec::new();
    for _y in 0..2 {
        let mut ids: Vec<usize> = (0..l).collect();
        rng.shuffle(&mut ids);
        let train_end = l / 2;
        let val_end = train_end + l / 4;
        pools.push([
            ids[..train_end].to_vec(),
            ids[train_end..val_end].to_vec(),
            ids[val_end..].to_vec(),
        ]);
    }

    let draw = |y: usize, z: usize, pool: usize, count: usize, rng: &mut Rng| {
        let ids = &pools[y][pool];
        (0..count)
            .map(|_| {
                let latent = ids[rng.below(ids.len())];
                LabeledExample {
                    x: world.render(y, latent, z),
                    y,
                    z,
                    coupled_id: Some(world.coupled_id(y, latent)),
                }
            })
            .collect::<Vec<_>>()
    };

    let mut train = Vec::new();
    let mut validation = Vec::new();
    for &(y, z, count) in &cells {
        let n_val = count / 2;
        let n_train = count - n_val;
        train.extend(draw(y, z, 0, n_train, &mut rng));
        validation.extend(draw(y, z, 1, n_val, &mut rng));
    }
    let mut test = Vec::new();
    for y in 0..2 {
        for z in 0..2 {
            test.extend(draw(y, z, 2, test_per_cell, &mut rng));
        }
    }

    Ok(DatasetSplit {
        train,
        validation,
        test,
        num_classes: 2,
        subgroups_per_class: 2,
        input_dim: world.input_dim(),
        meta: DatasetMeta {
            source: "synthetic-world".into(),
            n,
            rho,
            seed,
            corruption_synthetic: false,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupled::world::WorldParams;

    fn world() -> CoupledWorld {
        CoupledWorld::generate(WorldParams::new(2, 2, 16, 6, 5)).unwrap()
    }

    #[test]
    fn table4_counts_at_rho_098() {
        let split = sample_dataset(&world(), 40_000, 0.98, 1).unwrap();
        let t = split.train_counts();
        let v = split.validation_counts();
        assert_eq!(t[&(0, 0)], 9900);
        assert_eq!(t[&(0, 1)], 100);
        assert_eq!(t[&(1, 0)], 100);
        assert_eq!(t[&(1, 1)], 9900);
        assert_eq!(v[&(0, 0)], 9900);
        assert_eq!(v[&(0, 1)], 100);
        assert_eq!(v[&(1, 0)], 100);
        assert_eq!(v[&(1, 1)], 9900);
    }

    #[test]
    fn rho_zero_is_balanced() {
        let cells = correlation_cell_counts(40_000, 0.0).unwrap();
        assert!(cells.iter().all(|&(_, _, c)| c == 10_000));
    }

    #[test]
    fn rho_one_empties_minority() {
        let cells = correlation_cell_counts(40_000, 1.0).unwrap();
        assert_eq!(cells[0].2, 20_000);
        assert_eq!(cells[1].2, 0);
        assert_eq!(cells[2].2, 0);
        assert_eq!(cells[3].2, 20_000);
    }

    #[test]
    fn splits_are_coupled_disjoint() {
        let split = sample_dataset(&world(), 800, 0.9, 3).unwrap();
        let ids = |xs: &[LabeledExample]| {
            xs.iter()
                .filter_map(|e| e.coupled_id)
                .collect::<std::collections::HashSet<_>>()
        };
        let (a, b, c) = (ids(&split.train), ids(&split.validation), ids(&split.test));
        assert!(a.is_disjoint(&b));
        assert!(a.is_disjoint(&c));
        assert!(b.is_disjoint(&c));
    }

    #[test]
    fn test_split_is_subgroup_balanced() {
        let split = sample_dataset(&world(), 800, 0.9, 3).unwrap();
        let t = split.test_counts();
        assert!(t.values().all(|&c| c == 100));
    }

    #[test]
    fn manifest_carries_counts() {
        let split = sample_dataset(&world(), 400, 0.5, 3).unwrap();
        let m = split.manifest();
        assert_eq!(m["meta"]["n"], 400);
        assert!(m["train"]["y0_z0"].as_u64().unwrap() > 0);
    }
}
