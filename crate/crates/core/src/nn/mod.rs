//! Neural-network building blocks with hand-written backward passes.

mod activation;
mod batch_norm;
mod dense;
mod gradcheck;
mod lstm;

pub use activation::{activation, sigmoid, Activation};
pub use batch_norm::{batch_norm, BatchNormParams, BatchStats, BnCache, BnMode};
pub use dense::{dense_forward, glorot_bound, DenseParams};
pub use gradcheck::{
    grad_check, relative_error, BlockError, GradCheckOptions, GradCheckReport, ParamBlock,
};
pub use lstm::{
    lstm_step, lstm_step_backward, lstm_step_batch, CandidateNorm, GateTrace, LstmParams,
    LstmState, StepCache, StepGrads, CANDIDATE, FORGET_GATE, GATES, INPUT_GATE, OUTPUT_GATE,
};
