//! Datasets, image codecs, synthetic benchmark generation and checkpoints.

mod checkpoint;
mod dataset;
mod folder;
pub mod ppm;
mod synth;

pub use checkpoint::{
    checkpoint_load, checkpoint_save, decode_checkpoint, encode_checkpoint, CheckpointHeader, ManifestEntry,
    CHECKPOINT_FORMAT,
};
pub use dataset::{Dataset, Record};
pub use folder::{load_dataset_dir, write_dataset_dir};
pub use synth::{generate_synthetic, ClassTexture, SynthSpec};
