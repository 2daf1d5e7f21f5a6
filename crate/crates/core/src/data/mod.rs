//! Dataset containers, file loaders, normalization and synthetic data.

pub mod cifar;
pub mod dataset;
pub mod idx;
pub mod normalize;
pub mod synthetic;

pub use cifar::{load_cifar10_binary, load_cifar_binary, load_cifar_dir, write_cifar_binary, CifarVariant};
pub use dataset::{Dataset, Split};
pub use idx::{load_idx, load_mnist_dir, write_idx};
pub use normalize::{normalize, ChannelStats, NormalizeMode};
pub use synthetic::{synthetic_dataset, SyntheticKind};
