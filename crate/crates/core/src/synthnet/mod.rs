//! The conditioned synthesis network, its gradients, adversarial objective,
//! optimizer, trainer and weight files.

pub mod adam;
pub mod discriminator;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod weights_io;

pub use adam::{Adam, AdamConfig};
pub use discriminator::{lsgan_losses, Discriminator, LsganLosses};
pub use network::{ArchConfig, Generator};
pub use tensor::Tensor;
pub use train::{prepare_samples, synthesize, train, Sample, TraceRow, TrainConfig, Trainer};
