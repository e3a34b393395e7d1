use serde::{Deserialize, Serialize};

/// How an embedding was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum EmbeddingMethod {
    Pca { components: usize },
    Tsne { perplexity: f64, iterations: usize, seed: u64 },
}

/// Low-dimensional coordinates, one row per input point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    #[serde(flatten)]
    pub method: EmbeddingMethod,
    pub dims: usize,
    /// Row-major `rows × dims`.
    pub coords: Vec<f64>,
    /// Final KL(P‖Q) for t-SNE.
    pub kl_divergence: Option<f64>,
}

impl Embedding {
    pub fn rows(&self) -> usize {
        self.coords.len() / self.dims
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dims..(i + 1) * self.dims]
    }
}
