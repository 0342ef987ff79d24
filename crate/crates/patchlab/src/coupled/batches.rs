//! Group-annotated batching.
//!
//! The group-robust objectives need every nonempty (class, subgroup) cell
//! represented in every batch. Batches are formed from a shuffled pass over
//! the whole epoch (so every example is covered), then patched with one
//! cyclically-drawn example per missing cell, which may grow a batch
//! slightly beyond the nominal size.

use std::collections::BTreeMap;

use crate::coupled::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Deterministic batches of example indices for one epoch.
pub fn subgroup_batches(
    examples: &[LabeledExample],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if examples.is_empty() {
        return Err(Error::Parameter("cannot batch an empty split".into()));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        cells.entry((e.y, e.z)).or_default().push(i);
    }
    if batch_size < cells.len() {
        return Err(Error::Parameter(format!(
            "batch size {} cannot cover {} nonempty cells",
            batch_size,
            cells.len()
        )));
    }

    let mut rng = Rng::derive(seed, "subgroup_batches");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rng.shuffle(&mut order);

    // Per-cell cyclic feeds for patching missing cells.
    let mut feeds: BTreeMap<(usize, usize), (Vec<usize>, usize)> = BTreeMap::new();
    for (&cell, ids) in &cells {
        let mut shuffled = ids.clone();
        rng.shuffle(&mut shuffled);
        feeds.insert(cell, (shuffled, 0));
    }

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let mut batch: Vec<usize> = chunk.to_vec();
        let mut present: BTreeMap<(usize, usize), bool> =
            cells.keys().map(|&c| (c, false)).collect();
        for &i in &batch {
            present.insert((examples[i].y, examples[i].z), true);
        }
        for (cell, seen) in present {
            if !seen {
                let (ids, cursor) = feeds.get_mut(&cell).expect("cell exists");
                batch.push(ids[*cursor % ids.len()]);
                *cursor += 1;
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make(y: usize, z: usize) -> LabeledExample {
        LabeledExample {
            x: vec![y as f64, z as f64],
            y,
            z,
            coupled_id: None,
        }
    }

    fn skewed_split() -> Vec<LabeledExample> {
        let mut xs = Vec::new();
        for _ in 0..40 {
            xs.push(make(0, 0));
        }
        for _ in 0..3 {
            xs.push(make(0, 1));
        }
        for _ in 0..3 {
            xs.push(make(1, 0));
        }
        for _ in 0..40 {
            xs.push(make(1, 1));
        }
        xs
    }

    #[test]
    fn every_batch_covers_every_cell() {
        let xs = skewed_split();
        let batches = subgroup_batches(&xs, 8, 11).unwrap();
        for b in &batches {
            let mut cells = std::collections::HashSet::new();
            for &i in b {
                cells.insert((xs[i].y, xs[i].z));
            }
            assert_eq!(cells.len(), 4);
        }
    }

    #[test]
    fn epoch_covers_all_examples() {
        let xs = skewed_split();
        let batches = subgroup_batches(&xs, 8, 11).unwrap();
        let seen: std::collections::HashSet<usize> = batches.iter().flatten().copied().collect();
        assert_eq!(seen.len(), xs.len());
    }

    #[test]
    fn single_cell_gives_plain_shuffled_batches() {
        let xs: Vec<LabeledExample> = (0..10).map(|_| make(0, 0)).collect();
        let batches = subgroup_batches(&xs, 4, 2).unwrap();
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), 10);
        assert!(batches.iter().all(|b| b.len() <= 4));
    }

    #[test]
    fn same_seed_same_order() {
        let xs = skewed_split();
        let a = subgroup_batches(&xs, 8, 7).unwrap();
        let b = subgroup_batches(&xs, 8, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unsatisfiable_batch_size_errors() {
        let xs = skewed_split();
        assert!(subgroup_batches(&xs, 3, 1).is_err());
    }
}
