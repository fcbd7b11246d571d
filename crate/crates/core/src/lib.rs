pub mod activations;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use activations::{ActivationError, ActivationKind, CrossoverPoint, DEFAULT_ALPHA};
pub use autodiff::{finite_difference_gradient, Gradients, NodeId, Tape, TapeError};
pub use data::{DataError, Dataset, FoldSplit};
pub use metrics::{FoldMetrics, MetricsError, MetricsReport};
pub use model::{Architecture, LayerSpec, ModelError, ModelParams, ModelSpec};
pub use tensor::{DType, Mode, Padding, Real, Tensor, TensorError};
pub use train::{ExperimentResult, SweepResult, TrainConfig, TrainError};
