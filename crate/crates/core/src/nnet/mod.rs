//! A small neural-network engine: dense, 1-D convolution, bidirectional
//! LSTM, batch normalization, dropout and ReLU layers trained with Adam on
//! mean squared error, with exact reverse-mode gradients.

mod adam;
mod io;
mod model;
mod spec;
mod train;

pub use adam::{adam_step, AdamState};
pub use io::{ModelManifest, Segment, SegmentKind, MODEL_FORMAT_VERSION};
pub use model::{layer_params_mut, EpochRecord, Mode, Tape, TrainedModel};
pub use spec::{
    cnn_spec, cnn_spec_with, lstm_final_state_spec_with, lstm_spec, lstm_spec_with, nn_spec, nn_spec_with, param_count, state_count,
    Activation, AdamConfig, LayerSlot, LayerSpec, Layout, ModelSpec, Shape,
};
pub use train::{fit, train, Dataset, EarlyStopping, StopDecision, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("model file error: {0}")]
    Format(String),
}
