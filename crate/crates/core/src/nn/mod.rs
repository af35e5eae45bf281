//! CNN runtime: layers, training, checkpoints and hybrid inference.

pub mod checkpoint;
pub mod gradcheck;
pub mod infer;
pub mod layers;
pub mod mnist;
pub mod model;
pub mod train;

pub use checkpoint::TrainedModel;
pub use infer::{
    infer_digital, infer_hybrid, sweep_imbalance, sweep_noise, FaultConfig, ImbalanceLevelSummary,
    InferenceReport, NoiseLevelSummary, PhotonicBackend,
};
pub use mnist::{load_mnist, Dataset, Mnist};
pub use model::{Network, NetworkShape};
pub use train::{evaluate, train, Hyperparams, TrainingMetadata};
