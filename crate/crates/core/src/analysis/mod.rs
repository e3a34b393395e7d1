//! Penultimate-feature analyses: embeddings, class centers, attack selectivity
//! and misclassification-distribution statistics.

mod centers;
mod distribution;
mod embedding;
mod features;
mod pca;
mod selectivity;
mod tsne;

pub use centers::{class_centers, nearest_classes, ClassCenters};
pub use distribution::{distribution_of, gini, misclass_distribution, normalized_entropy, MisclassDistribution};
pub use embedding::{Embedding, EmbeddingMethod};
pub use features::{extract_features, FeatureMatrix};
pub use pca::{pca, pca_embed, Pca};
pub use selectivity::{selectivity_report, Neighbor, SelectivityReport, SourceSelectivity};
pub use tsne::{joint_probabilities, tsne_embed, TsneInit, TsneParams};

/// Default neighbour count: `min(5, K − 1)`.
pub fn default_k(num_classes: usize) -> usize {
    5.min(num_classes.saturating_sub(1))
}
