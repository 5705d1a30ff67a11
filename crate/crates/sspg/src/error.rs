use thiserror::Error;

/// Errors raised by tensor ops and the autodiff graph.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("index {index} out of bounds for {op} over {len} elements")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward called before forward produced node {0}")]
    BackwardBeforeForward(usize),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

/// Errors from vocabulary construction and encoding.
#[derive(Debug, Error)]
pub enum VocabError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty field `{0}` in triple")]
    EmptyTripleField(&'static str),
    #[error("segment `{segment}` exceeds maximum length {max_len}")]
    SegmentTooLong { segment: String, max_len: usize },
    #[error("unknown token id {0}")]
    UnknownTokenId(usize),
}

/// Errors from dataset loading.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("dataset has no examples")]
    Empty,
}

/// Errors from training, decoding and evaluation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("sequence of length {len} exceeds brute-force guard of {max}")]
    BruteForceGuard { len: usize, max: usize },
    #[error("decoder `{decoder}` is incompatible with model kind `{model}`")]
    DecoderMismatch { decoder: String, model: String },
    #[error("generation/reference misalignment: {hyps} generations vs {refs} examples")]
    Misaligned { hyps: usize, refs: usize },
    #[error("relation classifier needs at least 2 classes, found {0}")]
    SingleClass(usize),
    #[error("degenerate features: all training rows identical")]
    DegenerateFeatures,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}
