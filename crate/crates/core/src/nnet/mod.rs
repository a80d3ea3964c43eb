//! Tensors, reverse-mode autodiff and the transformer model.

mod graph;
mod infer;
pub mod kernels;
mod model;
mod tensor;

pub use graph::{CrossEntropyOut, Graph, Var};
pub use model::{
    build_model, forward, loss, loss_and_gradients, parameter_count, ArchConfig, Batch, LossOptions, LossOutput,
    SizeClass, TransformerModel, DEFAULT_DROPOUT, DESK_SCALE_FACTOR,
};
pub use infer::{DecoderState, EncodedSource, IncrementalDecoder};
pub use tensor::Tensor;
