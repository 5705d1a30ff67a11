//! Subword segmental pointer generator for data-to-text generation.
//!
//! The crate bundles a minimal f64 autodiff engine, BPE/character/lexicon
//! vocabularies, an LSTM encoder-decoder whose next-subword distribution is a
//! mixture of a character model, a lexicon softmax, and an attention-based
//! copy mechanism, exact dynamic-programming marginalization over latent
//! subword segmentations, unmixed/dynamic/beam decoding, and surface plus
//! extractive evaluation.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod objective;
pub mod optim;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{DataError, GraphError, ModelError, VocabError};
pub use graph::{Gradients, Graph, ParamStore, Var};
pub use tensor::Tensor;
