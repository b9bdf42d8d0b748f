//! Dense tensors, reverse-mode gradients, Adam, and a finite-difference
//! gradient checker.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use params::{Bindings, ParamStore};
pub use tape::{gelu_value, sigmoid_value, Gradients, RowGroups, Tape, Var};
pub use tensor::{matmul, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("model dim {dim} is not divisible by {heads} heads")]
    Heads { dim: usize, heads: usize },
    #[error("row groups do not partition {rows} rows")]
    Groups { rows: usize },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("backward needs a single-element output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("loss is not finite: {0}")]
    NonFinite(f64),
}
