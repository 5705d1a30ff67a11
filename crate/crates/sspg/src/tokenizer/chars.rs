//! Output-side character vocabulary.
//!
//! Ids: real characters first (sorted), then unk, end-of-segment,
//! end-of-sequence. A begin-of-sequence id exists for the decoder input
//! embedding only and is never part of the output distribution.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::VocabError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
    #[serde(skip)]
    map: HashMap<char, usize>,
}

impl CharVocab {
    pub fn build(corpus: &[String]) -> Result<Self, VocabError> {
        if corpus.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let mut chars: Vec<char> = corpus.iter().flat_map(|s| s.chars()).collect();
        chars.sort();
        chars.dedup();
        let map = chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Ok(CharVocab { chars, map })
    }

    pub fn rebuild_index(&mut self) {
        self.map = self.chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    }

    pub fn n_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn unk(&self) -> usize {
        self.chars.len()
    }

    pub fn end_of_segment(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn end_of_sequence(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn bos(&self) -> usize {
        self.chars.len() + 3
    }

    /// Size of the output softmax: chars + unk + eoseg + eos.
    pub fn output_dim(&self) -> usize {
        self.chars.len() + 3
    }

    /// Rows in the decoder input embedding: output ids + bos.
    pub fn input_dim(&self) -> usize {
        self.chars.len() + 4
    }

    /// Unknown characters fall back to the unk id.
    pub fn id(&self, c: char) -> usize {
        self.map.get(&c).copied().unwrap_or(self.unk())
    }

    pub fn char_at(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Non-whitespace characters, used for lexicon force-inclusion.
    pub fn word_chars(&self) -> impl Iterator<Item = char> + '_ {
        self.chars.iter().copied().filter(|c| !c.is_whitespace())
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}
