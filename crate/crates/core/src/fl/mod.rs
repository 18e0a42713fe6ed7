//! The federated-learning workload: datasets, non-IID partitioning, the
//! shared feedforward model, local training, averaging, and evaluation.

pub mod data;
pub mod model;
pub mod partition;
pub mod train;

pub use data::{load_idx, synth_dataset, synth_dataset_with, write_idx, DataError, Dataset};
pub use model::{softmax, Gradients, Layer, ModelError, Network};
pub use partition::{dirichlet_partition, label_entropy, mean_shard_entropy, PartitionSpec};
pub use train::{evaluate, fedavg, local_train, TrainConfig, TrainError};
