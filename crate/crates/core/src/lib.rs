//! Higher-order recurrent networks: cells, truncated BPTT training, cost
//! accounting and gradient-flow diagnostics.

pub mod cells;
pub mod cost;
pub mod data;
pub mod engine;
pub mod error;
pub mod gradlab;
pub mod io;
pub mod math;

pub use cells::{CellConfig, CellKind, CellParams, Role, StepContext, StepTrace, INIT_SCALE};
pub use cost::{madds_per_frame, param_count, reduction_ratio, stack_param_count, CostReport};
pub use data::{SequenceBatch, TaskKind, TaskSpec};
pub use engine::{
    bptt_backward, clip_and_update, evaluate, train_epoch, unfold_forward, GradientSet, Model, Schedule,
    TrainConfig, TrainingSet, UnfoldedStates,
};
pub use error::{Error, Result};
pub use math::{Activation, ActivationKind, Matrix, Vector};
