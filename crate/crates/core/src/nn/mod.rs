//! Embedding + LSTM + softmax next-item model with hand-written gradients.

mod adam;
mod checkpoint;
mod forward;
mod loss;
mod params;
mod recommend;
mod train;

pub use adam::{AdamHyper, AdamState, Tensors};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{forward_session, lstm_step, output_step, LstmState};
pub use loss::{loss_bpr, loss_ce, sigmoid, softmax, LossKind, StepOutput, PROB_CLAMP};
pub use params::{init_params, Dims, Gate, Gradient, Matrix, ModelParams};
pub use recommend::{recommend, top_k, LstmRecommender};
pub use train::{
    batch_loss, grad, grad_with_negatives, sample_negatives, train, SessionNegatives, TrainConfig,
    TrainOutcome,
};
