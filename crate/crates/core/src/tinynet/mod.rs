//! Small convolutional networks: architecture description, f32/f64 forward
//! and backward passes, training, evaluation and FGNN weight files.

pub mod arch;
pub mod loss;
pub mod network;
pub mod persist;
pub mod train;

pub use arch::{
    base_architecture, final_architecture, layer_variant, layer_variants, masked_architecture, Activation, ArchSpec,
    Head, LayerRow, LayerSpec, Padding, PoolMode, Shape, TemplateSpec,
};
pub use loss::{loss, loss_grad, LossKind};
pub use network::{softmax_in_place, LayerParams, Network, Params, Real, Trace};
pub use persist::{load_weights, load_weights_any, save_weights};
pub use train::{argmax, batch_gradient, evaluate, train, train_with_progress, Example, Metrics, Optimizer, StopReason, TrainConfig, TrainReport};
