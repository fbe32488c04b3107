//! Dataset ingestion, one-class protocols, corruptions and synthetic shapes.

mod cache;
mod cifar;
mod corrupt;
mod dataset;
mod idx;
mod resize;
mod split;
mod synth;

pub use cache::{decode_dataset, encode_dataset, load_dataset, save_dataset};
pub use cifar::{encode_cifar10_bin, load_cifar10, parse_cifar10_bin};
pub use corrupt::{corrupt, corrupt_dataset, CorruptionKind, CorruptionSpec};
pub use dataset::{ImageDataset, Provenance};
pub use idx::{
    encode_idx_images, encode_idx_labels, idx_to_dataset, load_idx_pair, parse_idx, read_maybe_gz, IdxData,
};
pub use resize::resize_bilinear;
pub use split::{make_fmnist_folds, make_one_class_split, OneClassSplit};
pub use synth::{synth_shapes, ShapeClass};
