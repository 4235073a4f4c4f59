//! Neural one-step surrogate for a synchronous machine.
//!
//! The network maps `(dt, x_n, I_n, I_{n+dt})` to an average state rate,
//! and the step is `x_{n+1} = x_n + dt * NN(...)`, so `dt = 0` reproduces
//! `x_n` exactly. Only `(delta, domega)` are predicted; the internal
//! voltages of the simplified machine are constant conditioning inputs.

mod dataset;
mod domain;
mod engine;
mod io;
mod loss;
mod mlp;
mod train;

pub use dataset::{generate_dataset, held_out_samples, label_sample, CollocSample, DataSample, Dataset, DatasetError};
pub use domain::{uniform_samples, DomainBox, INPUT_NAMES, N_INPUTS, N_OUTPUTS};
pub use engine::Gradients;
pub use io::{load_model, read_model, save_model, write_model, ModelIoError, MODEL_FORMAT_VERSION};
pub use loss::{loss_data, loss_physics, physics_residual, LossError};
pub use mlp::{
    predict_step, time_derivative, wrap_angle, Layer, MlpModel, ModelMeta, OutputMode, StepInputs,
};
pub use train::{
    init_params, total_loss_and_gradient, train, train_with_observer, EpochRecord, TrainConfig,
    TrainError, TrainReport,
};
