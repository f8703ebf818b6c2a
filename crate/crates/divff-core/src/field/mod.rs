//! Three-stream field model: persistent, dynamic and actor networks with
//! frame codes, geometry heads (sigma, color, uncertainty) and language
//! feature heads (image 128-d, video 64-d).

mod checkpoint;
mod encoding;
mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CKPT_MAGIC};
pub use encoding::{encode_directions, encode_positions, encoding_dim};
pub use net::{
    Dense, FieldModel, ModelConfig, ParamGroup, StreamGeometry, StreamNet, StreamVars, TapedModel,
    TapedStreamGeometry,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("frame {0} out of range (model has {1})")]
    FrameOutOfRange(usize, usize),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("autodiff: {0}")]
    Num(#[from] crate::numkit::NumError),
}
