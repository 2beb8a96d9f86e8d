//! Neural scorer: embeddings, Bi-LSTM encoder, pointing decoder and label
//! classifier, all running on a small reverse-mode tape.

use std::fmt::Debug;

use num_traits::Float;

pub mod checkpoint;
pub mod graph;
pub mod model;
pub mod params;
pub mod vocab;

pub use checkpoint::{load_checkpoint, load_pretrained_embeddings, save_checkpoint, CheckpointError};
pub use graph::{log_softmax, softmax, Graph, Var};
pub use model::{
    pointing_distribution, valid_range, DecoderInit, DecoderState, Encoded, Model, ModelConfig, ModelError, ParseMode,
    PointingMode,
};
pub use params::{Gradients, ParamId, ParamSet, Tensor};
pub use vocab::Vocab;

/// Scalar type of the tape: `f32` for training and inference, `f64` for
/// gradient checks.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from(x).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}
