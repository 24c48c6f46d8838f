//! Datastore size and width reduction: greedy-merge pruning and PCA.

mod eigen;
mod pca;
mod prune;

pub use pca::{fit_pca, PcaModel};
pub use prune::{greedy_merge_prune, prune_with, PruneOptions, PruneReport, PruneSearch, PruneTrace};
