//! Dataset ingestion and model persistence.

mod checkpoint;
mod mnist;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind, NamedTensor};
pub(crate) use checkpoint::hex;
pub use mnist::{load_mnist, LabeledDataset, MnistFiles, IMAGES_MAGIC, IMAGE_SIDE, LABELS_MAGIC, N_CLASSES};
