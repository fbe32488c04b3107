//! Tape-based reverse-mode automatic differentiation with second-order support.

pub mod conv;
mod graph;
pub mod loss;

pub use graph::{Gradients, Graph, Var};
pub use loss::{bce_loss, cosine_similarity, cosine_similarity_parts, kl_div_gaussian, mse_loss};
