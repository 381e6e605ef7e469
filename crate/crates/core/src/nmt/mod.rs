//! Attention encoder-decoder with a restricted output layer.
//!
//! The encoder is a bidirectional gated recurrent network; the decoder
//! attends over its states with a one-hidden-layer scorer, updates a gated
//! state from the previous target embedding and the context, and scores
//! only the rows of the output projection named by the current vocabulary.
//! Backpropagation is written by hand and checked against finite
//! differences in [`gradcheck`].

pub mod adadelta;
pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
mod model;
mod ops;
pub mod train;

pub use adadelta::AdaDelta;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use gru::{GruCell, GruStep};
pub use model::{
    Attention, DenseParams, EncoderStates, GradientFault, Gradients, Model, ModelDims, StepState,
    TensorRef, DEFAULT_INIT_SCALE,
};
pub use ops::softmax_in_place;
pub use train::{train, EpochLog, TrainConfig};

#[cfg(test)]
mod tests;
