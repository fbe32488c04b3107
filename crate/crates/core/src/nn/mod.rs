//! Convolutional (variational) autoencoder and its optimizer.

mod adam;
mod model;

pub use adam::{AdamConfig, AdamState};
pub use model::{
    build_model, default_layer_specs, Activation, BoundModel, ForwardOutput, Layer, LayerKind,
    LayerSpec, LatentSampling, ModelParams, Variant, INPUT_SIZE,
};
