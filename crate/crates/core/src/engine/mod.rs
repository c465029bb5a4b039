//! Unfolded forward pass, backpropagation through time and SGD training.

pub mod backward;
pub mod forward;
pub mod model;
pub mod schedule;
pub mod train;

pub use backward::{bptt_backward, bptt_backward_with, score, Backward, BackwardOptions, GradientSet};
pub use forward::{argmax, cross_entropy, layer_forward, softmax, unfold_forward, HeadStep, LayerStates, UnfoldedStates};
pub use model::{head_activation, validate_chain, HeadParams, Model, ModelTensor, ModelTensorMut};
pub use schedule::Schedule;
pub use train::{clip_and_update, evaluate, train_epoch, EpochStats, EvalStats, Sampling, TrainConfig, TrainingSet};
