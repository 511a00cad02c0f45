//! Datasets, checkpoints and run configuration.

mod checkpoint;
mod config;
mod dataset;

pub use checkpoint::{
    decode_tensors, encode_tensors, load_checkpoint, model_state, save_checkpoint,
    table_to_tensors, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{DataSection, ModelSection, QuantizationSection, RunConfig, TrainingSection};
pub use dataset::{
    augment_batch, gen_synthetic, load_cifar10, parse_cifar_records, stratified_subset, Dataset,
    CIFAR_CLASSES, CIFAR_MEAN, CIFAR_RECORD_BYTES, CIFAR_STD, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES,
};
