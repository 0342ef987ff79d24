//! Evaluation metrics: per-cell accuracies, aggregate and robust accuracy,
//! per-class subgroup gaps, and multi-trial statistics.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::coupled::{batch_tensor, LabeledExample};
use crate::error::{Error, Result};
use crate::numeric::Mlp;

pub type CellTable = BTreeMap<(usize, usize), f64>;
pub type CellSizes = BTreeMap<(usize, usize), usize>;

/// Argmax with deterministic tie-breaking (lowest class index wins).
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy per nonempty (class, subgroup) cell.
pub fn subgroup_accuracies(model: &Mlp, examples: &[LabeledExample]) -> Result<(CellTable, CellSizes)> {
    if examples.is_empty() {
        return Err(Error::Contract("evaluation on an empty split".into()));
    }
    let indices: Vec<usize> = (0..examples.len()).collect();
    let (inputs, labels, groups) = batch_tensor(examples, &indices);
    let preds = model.forward(&inputs)?;
    let mut correct: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut totals: CellSizes = BTreeMap::new();
    for i in 0..examples.len() {
        let cell = (labels[i], groups[i]);
        *totals.entry(cell).or_insert(0) += 1;
        if argmax(preds.row(i)) == labels[i] {
            *correct.entry(cell).or_insert(0) += 1;
        }
    }
    let table = totals
        .iter()
        .map(|(&cell, &n)| {
            let c = correct.get(&cell).copied().unwrap_or(0);
            (cell, c as f64 / n as f64)
        })
        .collect();
    Ok((table, totals))
}

/// Minimum accuracy over present cells.
pub fn robust_accuracy(cells: &CellTable) -> f64 {
    cells.values().cloned().fold(f64::INFINITY, f64::min)
}

/// Max − min accuracy within one class; 0 for a single present subgroup.
pub fn subgroup_gap(cells: &CellTable, class: usize) -> f64 {
    let vals: Vec<f64> = cells
        .iter()
        .filter(|((y, _), _)| *y == class)
        .map(|(_, &v)| v)
        .collect();
    if vals.len() <= 1 {
        return 0.0;
    }
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Size-weighted mean over present cells.
pub fn aggregate_accuracy(cells: &CellTable, sizes: &CellSizes) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (cell, &acc) in cells {
        let n = sizes.get(cell).copied().unwrap_or(0) as f64;
        num += acc * n;
        den += n;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Full evaluation of one model on one split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub cell_accuracy: Vec<((usize, usize), f64)>,
    pub cell_sizes: Vec<((usize, usize), usize)>,
    pub aggregate: f64,
    pub robust: f64,
    pub class_gaps: Vec<(usize, f64)>,
}

impl EvalReport {
    pub fn cells(&self) -> CellTable {
        self.cell_accuracy.iter().cloned().collect()
    }

    pub fn max_gap(&self) -> f64 {
        self.class_gaps
            .iter()
            .map(|&(_, g)| g)
            .fold(0.0, f64::max)
    }
}

pub fn evaluate(model: &Mlp, examples: &[LabeledExample]) -> Result<EvalReport> {
    let (cells, sizes) = subgroup_accuracies(model, examples)?;
    let classes: std::collections::BTreeSet<usize> = cells.keys().map(|&(y, _)| y).collect();
    let class_gaps = classes
        .into_iter()
        .map(|y| (y, subgroup_gap(&cells, y)))
        .collect();
    Ok(EvalReport {
        aggregate: aggregate_accuracy(&cells, &sizes),
        robust: robust_accuracy(&cells),
        class_gaps,
        cell_accuracy: cells.into_iter().collect(),
        cell_sizes: sizes.into_iter().collect(),
    })
}

/// Mean and unbiased (n−1) standard deviation; std is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Table-style percentage with two decimals.
pub fn percent(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(vals: &[((usize, usize), f64)]) -> CellTable {
        vals.iter().cloned().collect()
    }

    #[test]
    fn robust_is_min_over_cells() {
        // The published MNIST-Correlation ERM row.
        let t = table(&[
            ((0, 0), 0.8696),
            ((0, 1), 0.7351),
            ((1, 0), 0.7147),
            ((1, 1), 0.7521),
        ]);
        assert!((robust_accuracy(&t) - 0.7147).abs() < 1e-12);
        let single = table(&[((0, 0), 0.42)]);
        assert_eq!(robust_accuracy(&single), 0.42);
    }

    #[test]
    fn gap_within_class() {
        let t = table(&[((0, 0), 0.9892), ((0, 1), 0.7512)]);
        assert!((subgroup_gap(&t, 0) - 0.2380).abs() < 1e-12);
        let equal = table(&[((0, 0), 0.5), ((0, 1), 0.5)]);
        assert_eq!(subgroup_gap(&equal, 0), 0.0);
        let single = table(&[((0, 0), 0.5)]);
        assert_eq!(subgroup_gap(&single, 0), 0.0);
    }

    #[test]
    fn gap_invariant_to_constant_shift() {
        let t = table(&[((0, 0), 0.6), ((0, 1), 0.4)]);
        let shifted = table(&[((0, 0), 0.9), ((0, 1), 0.7)]);
        assert!((subgroup_gap(&t, 0) - subgroup_gap(&shifted, 0)).abs() < 1e-15);
    }

    #[test]
    fn aggregate_weighted() {
        let t = table(&[((0, 0), 0.8), ((0, 1), 0.6)]);
        let mut sizes = CellSizes::new();
        sizes.insert((0, 0), 10);
        sizes.insert((0, 1), 10);
        assert!((aggregate_accuracy(&t, &sizes) - 0.7).abs() < 1e-12);
        sizes.insert((0, 0), 30);
        let t2 = table(&[((0, 0), 1.0), ((0, 1), 0.0)]);
        assert!((aggregate_accuracy(&t2, &sizes) - 0.75).abs() < 1e-12);
        let one = table(&[((1, 0), 0.31)]);
        let mut s1 = CellSizes::new();
        s1.insert((1, 0), 7);
        assert_eq!(aggregate_accuracy(&one, &s1), 0.31);
    }

    #[test]
    fn robust_le_aggregate_le_max() {
        let t = table(&[((0, 0), 0.8), ((0, 1), 0.3), ((1, 0), 0.95)]);
        let mut sizes = CellSizes::new();
        sizes.insert((0, 0), 5);
        sizes.insert((0, 1), 17);
        sizes.insert((1, 0), 2);
        let agg = aggregate_accuracy(&t, &sizes);
        assert!(robust_accuracy(&t) <= agg);
        assert!(agg <= 0.95);
    }

    #[test]
    fn evaluate_perfect_and_constant_models() {
        use crate::coupled::LabeledExample;
        use crate::numeric::{Head, Mlp, Tensor};
        use crate::rng::Rng;

        let examples: Vec<LabeledExample> = (0..8)
            .map(|i| {
                let y = i % 2;
                LabeledExample {
                    x: vec![if y == 0 { 5.0 } else { -5.0 }, 0.0],
                    y,
                    z: (i / 2) % 2,
                    coupled_id: None,
                }
            })
            .collect();

        let mut rng = Rng::new(1);
        let mut perfect = Mlp::new(&[2, 2], Head::Softmax, &mut rng).unwrap();
        perfect.params_mut()[0].value = Tensor::matrix(2, 2, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        perfect.params_mut()[1].value = Tensor::vector(vec![0.0, 0.0]);
        let report = evaluate(&perfect, &examples).unwrap();
        assert!(report.cell_accuracy.iter().all(|&(_, a)| a == 1.0));
        assert_eq!(report.robust, 1.0);
        assert_eq!(report.max_gap(), 0.0);

        let mut constant = Mlp::new(&[2, 2], Head::Softmax, &mut rng).unwrap();
        constant.params_mut()[0].value = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        constant.params_mut()[1].value = Tensor::vector(vec![1.0, 0.0]);
        let report = evaluate(&constant, &examples).unwrap();
        let cells = report.cells();
        assert_eq!(cells[&(0, 0)], 1.0);
        assert_eq!(cells[&(1, 0)], 0.0);
        assert_eq!(report.robust, 0.0);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    }

    #[test]
    fn mean_std_unbiased() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
        let (_, s1) = mean_std(&[5.0]);
        assert_eq!(s1, 0.0);
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(0.71474), "71.47");
    }
}
