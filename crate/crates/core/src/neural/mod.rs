//! Small reverse-mode autodiff over 2-D `f64` tensors, with dense layers,
//! single-head attention, parameter-blended expert gating, and Adam.

mod adam;
mod checkpoint;
mod graph;
mod layers;
mod tensor;

pub use adam::{adam_step, OptimizerState};
pub use checkpoint::{read_checkpoint, spec_hash, write_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{softmax_rows, Graph, Var};
pub use layers::{
    attention, attention_with_weights, Activation, Dense, DenseSpec, GatedMlp, GatedSpec, Layer, LayerSpec, Network, NetworkSpec, ParamId,
    ParamStore, SelfAttention,
};
pub use tensor::Tensor;


#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("graph: {0}")]
    Graph(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NeuralError>;
