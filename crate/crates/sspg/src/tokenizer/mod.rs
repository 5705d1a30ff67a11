//! Data-side BPE, output-side character vocabulary, and the subword lexicon.

mod bpe;
mod chars;
mod lexicon;

pub use bpe::{BpeSpecials, BpeVocab, BOUNDARY_MARKER};
pub use chars::CharVocab;
pub use lexicon::Lexicon;
