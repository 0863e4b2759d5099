//! Learning stack for the derfdd pipeline.
//!
//! Everything here is written against flat `f64` parameter vectors so that
//! the optimizer, the checkpoint format and the finite-difference checks can
//! treat every model the same way:
//!
//! * [`lstm`]: two stacked LSTM layers plus a linear head, with BPTT.
//! * [`mlp`]: dense network with rectifier hidden layers and a `tanh` head.
//! * [`knn`]: exact k-nearest-neighbour classifier (Euclidean).
//! * [`adam`] and [`train`]: minibatch Adam with early stopping.
//! * [`metrics`] and [`checkpoint`]: evaluation and persistence.
//!
//! The crate knows nothing about power systems; class labels are plain
//! `usize` indices.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod knn;
pub(crate) mod linalg;
pub mod lstm;
pub mod metrics;
pub mod mlp;
pub mod train;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use error::{MlError, Result};
pub use knn::{KnnModel, KnnPrediction};
pub use lstm::{LstmCache, LstmDims, LstmModel};
pub use metrics::{accuracy, mae, mae_per_column, mse, ConfusionMatrix};
pub use mlp::{MlpCache, MlpModel};
pub use train::{train, DenseSet, EarlyStopping, EpochRecord, Regressor, SupervisedSet, TrainConfig, TrainOutcome};
