//! Byte-pair encoding over words, with a word-boundary marker on
//! word-initial symbols. Merges never cross whitespace and never touch the
//! reserved special tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Triple;
use crate::error::VocabError;

/// Marker attached to word-initial symbols, e.g. "France" -> ▁F r a n c e.
pub const BOUNDARY_MARKER: char = '\u{2581}';

/// Reserved token ids. Fixed at the front of the table so merges can never
/// collide with them.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct BpeSpecials {
    pub subj_open: usize,
    pub subj_close: usize,
    pub rel_open: usize,
    pub rel_close: usize,
    pub obj_open: usize,
    pub obj_close: usize,
    pub pad: usize,
    pub unk: usize,
    pub eos: usize,
}

const SPECIAL_STRINGS: [&str; 9] = ["<s", "s>", "<r", "r>", "<o", "o>", "<pad>", "<unk>", "<eos>"];

impl BpeSpecials {
    fn standard() -> Self {
        BpeSpecials {
            subj_open: 0,
            subj_close: 1,
            rel_open: 2,
            rel_close: 3,
            obj_open: 4,
            obj_close: 5,
            pad: 6,
            unk: 7,
            eos: 8,
        }
    }

    pub fn contains(&self, id: usize) -> bool {
        id < SPECIAL_STRINGS.len()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BpeVocab {
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    #[serde(skip)]
    token_ids: HashMap<String, usize>,
    pub specials: BpeSpecials,
}

fn word_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                format!("{BOUNDARY_MARKER}{c}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

impl BpeVocab {
    /// Learn `num_merges` merges by greedy highest-frequency pair merging.
    /// Ties break toward the lexicographically smallest merged string.
    pub fn train(corpus: &[String], num_merges: usize) -> Result<Self, VocabError> {
        if corpus.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let mut word_freq: HashMap<Vec<String>, u64> = HashMap::new();
        let mut alphabet: Vec<String> = Vec::new();
        for line in corpus {
            for word in line.split_whitespace() {
                let syms = word_symbols(word);
                for s in &syms {
                    if !alphabet.contains(s) {
                        alphabet.push(s.clone());
                    }
                    // also register the non-initial form of the first char
                    let bare: String = s.chars().skip_while(|c| *c == BOUNDARY_MARKER).collect();
                    if !bare.is_empty() && !alphabet.contains(&bare) {
                        alphabet.push(bare);
                    }
                }
                *word_freq.entry(syms).or_insert(0) += 1;
            }
        }
        alphabet.sort();

        let mut words: Vec<(Vec<String>, u64)> = word_freq.into_iter().collect();
        words.sort(); // deterministic iteration order

        let mut merges = Vec::with_capacity(num_merges);
        for _ in 0..num_merges {
            let mut pair_counts: HashMap<(String, String), u64> = HashMap::new();
            for (syms, freq) in &words {
                for w in syms.windows(2) {
                    *pair_counts.entry((w[0].clone(), w[1].clone())).or_insert(0) += freq;
                }
            }
            let best = pair_counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let sa = format!("{}{}", pa.0, pa.1);
                    let sb = format!("{}{}", pb.0, pb.1);
                    sb.cmp(&sa) // reversed: smaller merged string wins ties
                })
            });
            let (pair, count) = match best {
                Some(p) => p,
                None => break,
            };
            if count == 0 {
                break;
            }
            for (syms, _) in &mut words {
                apply_merge(syms, &pair);
            }
            merges.push(pair);
        }

        let mut tokens: Vec<String> = SPECIAL_STRINGS.iter().map(|s| s.to_string()).collect();
        tokens.extend(alphabet);
        for (a, b) in &merges {
            let merged = format!("{a}{b}");
            if !tokens.contains(&merged) {
                tokens.push(merged);
            }
        }
        let token_ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(BpeVocab { merges, tokens, token_ids, specials: BpeSpecials::standard() })
    }

    /// Train until the token table reaches (approximately) `size` entries.
    pub fn train_to_size(corpus: &[String], size: usize) -> Result<Self, VocabError> {
        let base = Self::train(corpus, 0)?;
        let merges = size.saturating_sub(base.tokens.len());
        Self::train(corpus, merges)
    }

    pub fn rebuild_index(&mut self) {
        self.token_ids = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn token_id(&self, tok: &str) -> Option<usize> {
        self.token_ids.get(tok).copied()
    }

    /// Token string with the word-boundary marker stripped, as compared
    /// against output-side segments by the copy mechanism.
    pub fn surface(&self, id: usize) -> String {
        self.tokens[id].chars().filter(|c| *c != BOUNDARY_MARKER).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut syms = word_symbols(word);
            for pair in &self.merges {
                apply_merge(&mut syms, pair);
            }
            for s in syms {
                out.push(self.token_id(&s).unwrap_or(self.specials.unk));
            }
        }
        out
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if self.specials.contains(id) {
                continue;
            }
            let tok = &self.tokens[id];
            if let Some(rest) = tok.strip_prefix(BOUNDARY_MARKER) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(rest);
            } else {
                out.push_str(tok);
            }
        }
        out
    }

    /// <s BPE(subject) s> <r BPE(relation) r> <o BPE(object) o>
    pub fn flatten_triple(&self, triple: &Triple) -> Result<Vec<usize>, VocabError> {
        let sp = self.specials;
        let fields: [(&str, usize, usize, &'static str); 3] = [
            (&triple.subject, sp.subj_open, sp.subj_close, "subject"),
            (&triple.relation, sp.rel_open, sp.rel_close, "relation"),
            (&triple.object, sp.obj_open, sp.obj_close, "object"),
        ];
        let mut out = Vec::new();
        for (text, open, close, name) in fields {
            if text.trim().is_empty() {
                return Err(VocabError::EmptyTripleField(match name {
                    "subject" => "subject",
                    "relation" => "relation",
                    _ => "object",
                }));
            }
            out.push(open);
            out.extend(self.encode(text));
            out.push(close);
        }
        Ok(out)
    }
}

fn apply_merge(syms: &mut Vec<String>, pair: &(String, String)) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == pair.0 && syms[i + 1] == pair.1 {
            syms[i] = format!("{}{}", pair.0, pair.1);
            syms.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<String> {
        lines.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn first_merge_on_aaab_is_aa() {
        // pair ("a","a") occurs twice per word (overlapping windows counted
        // per position): ▁a a a b has windows (▁a,a),(a,a),(a,b)
        let v = BpeVocab::train(&corpus(&["aaab", "aaab"]), 1).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn zero_merges_is_character_alphabet_plus_specials() {
        let v = BpeVocab::train(&corpus(&["ab ba"]), 0).unwrap();
        assert!(v.merges().is_empty());
        let mut toks: Vec<&str> = (9..v.len()).map(|i| v.token(i)).collect();
        toks.sort();
        assert_eq!(toks, vec!["a", "b", "▁a", "▁b"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(BpeVocab::train(&[], 3).is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let v = BpeVocab::train(&corpus(&["France is in Europe", "Euro currency"]), 20).unwrap();
        for text in ["France", "Euro currency", "in France"] {
            assert_eq!(v.decode(&v.encode(text)), text);
        }
        assert!(v.encode("").is_empty());
    }

    #[test]
    fn euro_becomes_single_token_after_enough_merges() {
        // merges learned from ["Euro","Euro"]: (▁E,u) -> (▁Eu,r) -> (▁Eur,o)
        let v = BpeVocab::train(&corpus(&["Euro", "Euro"]), 3).unwrap();
        let ids = v.encode("Euro");
        assert_eq!(ids.len(), 1);
        assert_eq!(v.token(ids[0]), "▁Euro");
    }

    #[test]
    fn unknown_chars_map_to_unk() {
        let v = BpeVocab::train(&corpus(&["abc"]), 0).unwrap();
        let ids = v.encode("axc");
        assert_eq!(ids[1], v.specials.unk);
    }

    #[test]
    fn flatten_triple_structure() {
        let v = BpeVocab::train(&corpus(&["France currency Euro"]), 0).unwrap();
        let t = Triple::new("France", "currency", "Euro").unwrap();
        let ids = v.flatten_triple(&t).unwrap();
        let sp = v.specials;
        assert_eq!(ids[0], sp.subj_open);
        assert_eq!(*ids.last().unwrap(), sp.obj_close);
        let closes = [sp.subj_close, sp.rel_open, sp.rel_close, sp.obj_open];
        for c in closes {
            assert!(ids.contains(&c));
        }
        // delimiters never appear inside the payload spans
        let inner: Vec<usize> = ids[1..ids.len() - 1]
            .iter()
            .copied()
            .filter(|id| ![sp.subj_close, sp.rel_open, sp.rel_close, sp.obj_open].contains(id))
            .collect();
        assert!(inner.iter().all(|id| !sp.contains(*id)));
    }

    #[test]
    fn flatten_rejects_empty_field() {
        assert!(Triple::new("France", " ", "Euro").is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let c = corpus(&["the quick brown fox", "the lazy dog", "the fox"]);
        let a = BpeVocab::train(&c, 10).unwrap();
        let b = BpeVocab::train(&c, 10).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert_eq!(a.tokens, b.tokens);
    }
}
