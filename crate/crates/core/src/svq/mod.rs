//! Codebooks and the quantizer family.
//!
//! Every quantizer maps token rows onto a reconstruction built from
//! codewords and wires the result straight-through: the forward value is the
//! reconstruction while the backward pass treats quantization as the
//! identity. Codewords are trained by the commitment loss (and, for the
//! adaptive variant, by every loss downstream of the reconstruction).

mod codebook;
mod kmeans;
mod quantizer;
mod sparse;

pub use codebook::{random_codewords, Codebook, CodebookStats, InitMode, DEFAULT_CODEBOOK_SIZE};
pub use kmeans::{kmeans, KMeansResult, MAX_ITERATIONS as KMEANS_MAX_ITERATIONS};
pub use quantizer::{
    commitment_loss, commitment_loss_on, quantize, quantize_tokens, Assignments, QuantizeResult,
    QuantizerVariant, VariantTag, DEFAULT_STAGES,
};
pub use sparse::{
    k_nearest, nearest_codeword, sparse_reconstruct, Metric, SparseCode, SparseRegressionConfig,
};
