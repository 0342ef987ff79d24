//! Data model for subgroup-coupled distributions: synthetic coupled
//! worlds, correlated dataset sampling, MNIST-Correlation construction,
//! IDX parsing and group-annotated batching.

pub mod batches;
pub mod dataset;
pub mod idx;
pub mod mnist;
pub mod world;

pub use batches::subgroup_batches;
pub use dataset::{
    batch_tensor, cell_counts, correlation_cell_counts, sample_dataset, CellCounts, DatasetMeta,
    DatasetSplit, LabeledExample,
};
pub use idx::{parse_idx, read_idx, IdxData};
pub use mnist::{mnist_correlation, zigzag_overlay, MnistSource};
pub use world::{AffineMap, CoupledWorld, WorldAtom, WorldParams};
