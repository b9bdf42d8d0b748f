// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod answerer;
pub mod encoder;
pub mod numerics;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod scalar;
pub mod synthdata;
pub mod trainer;

pub use answerer::{
    AnswerError, AnswerRequest, AnswerResponse, Answerer, OracleAnswerer, OracleSpec,
    RemoteAnswerer,
};
pub use policy::{SelectionMask, SelectionProbs};
pub use trainer::{Checkpoint, Dataset, Model, Objective, TrainConfig, TrainError, Trainer};

pub type Tensor = numerics::Tensor<f64>;
pub type ParamStore = numerics::ParamStore<f64>;
pub type AdamState = numerics::AdamState<f64>;
pub type FrameFeatures = encoder::FrameFeatures<f64>;
