//! Bidirectional LSTM with additive attention and a dense head.

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod model;
pub mod params;
mod recurrent;

pub use attention::{attention_forward, softmax};
pub use checkpoint::{from_checkpoint, to_checkpoint};
pub use gradcheck::{grad_check, grad_check_with, CheckBatch, GradCheckReport};
pub use layers::{batchnorm_forward, dense_forward, dropout_forward, Activation, Mode};
pub use lstm::{bilstm_forward, lstm_cell_forward, LstmState};
pub use model::{batch_loss, forward_batch, model_backward, model_backward_frozen_bn, model_forward, predict, ForwardCache, MaskSource, NormAudit};
pub use params::{
    AttentionParams, BatchNormParams, DenseParams, LstmParams, ModelGrads, ModelParams, NetConfig, ParamBlocks,
};
