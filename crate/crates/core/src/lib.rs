//! Length- and complexity-constrained sequence transduction with a small
//! transformer encoder-decoder.

pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod tokens;
pub mod train;

pub use error::{Error, Result};
pub use model::{LengthMode, ModelConfig, TransformerModel};
pub use params::{average_checkpoints, ParamStore};
pub use rng::Rng;
pub use scalar::{Precision, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = TransformerModel<f32>;
pub type Model64 = TransformerModel<f64>;
