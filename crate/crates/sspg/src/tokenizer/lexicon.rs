//! Lexicon of frequent character n-grams, the support of the generation
//! softmax. Segments never cross whitespace. All single characters seen in
//! the corpus are force-included so every character has lexicon support.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::VocabError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lexicon {
    segments: Vec<String>,
    counts: Vec<u64>,
    pub max_len: usize,
    #[serde(skip)]
    map: HashMap<String, usize>,
}

impl Lexicon {
    /// Keep the `size` most frequent word-internal n-grams of length
    /// 1..=max_len. Ties break shorter-first, then lexicographic. Single
    /// characters are always included (counted against `size`).
    pub fn build(corpus: &[String], size: usize, max_len: usize) -> Result<Self, VocabError> {
        if corpus.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        assert!(size >= 1 && max_len >= 1);
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in corpus {
            for word in line.split_whitespace() {
                let chars: Vec<char> = word.chars().collect();
                for i in 0..chars.len() {
                    for n in 1..=max_len.min(chars.len() - i) {
                        let gram: String = chars[i..i + n].iter().collect();
                        *counts.entry(gram).or_insert(0) += 1;
                    }
                }
            }
        }

        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|(sa, ca), (sb, cb)| {
            cb.cmp(ca)
                .then_with(|| sa.chars().count().cmp(&sb.chars().count()))
                .then_with(|| sa.cmp(sb))
        });

        let mut segments: Vec<(String, u64)> = Vec::new();
        // force-include all single characters first
        for (s, c) in &ranked {
            if s.chars().count() == 1 {
                segments.push((s.clone(), *c));
            }
        }
        for (s, c) in &ranked {
            if segments.len() >= size {
                break;
            }
            if s.chars().count() > 1 {
                segments.push((s.clone(), *c));
            }
        }
        segments.sort_by(|(sa, _), (sb, _)| {
            sa.chars().count().cmp(&sb.chars().count()).then_with(|| sa.cmp(sb))
        });

        let (segments, counts): (Vec<String>, Vec<u64>) = segments.into_iter().unzip();
        let map = segments.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Lexicon { segments, counts, max_len, map })
    }

    pub fn rebuild_index(&mut self) {
        self.map = self.segments.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn id(&self, segment: &str) -> Option<usize> {
        self.map.get(segment).copied()
    }

    pub fn segment(&self, id: usize) -> &str {
        &self.segments[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// Ids of segments that start with the given prefix (used by prefix
    /// marginalization in dynamic decoding).
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }
}
