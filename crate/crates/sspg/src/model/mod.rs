//! Neural architecture: BPE-encoder over flattened triples, attention, the
//! character-history decoder state, and the next-subword mixture
//! (character model / lexicon softmax / copy mechanism). Also the
//! pointer-generator baseline head.

mod infer;
mod lstm;
mod pg;

pub use infer::{RawEncoded, RawEval, RawPgEval, RawState};
pub use lstm::{init_lstm, LstmCell};
pub use pg::PgModel;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GraphError, ModelError, VocabError};
use crate::graph::{Graph, ParamStore, Var};
use crate::tokenizer::{BpeVocab, CharVocab, Lexicon};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Dims {
    pub embed: usize,
    pub hidden: usize,
}

/// Which components the next-subword mixture carries.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MixtureMode {
    /// Pure character model (gate forced to 1 both ways).
    CharOnly,
    /// Character model + lexicon softmax, no copy (the -copy variant).
    Lexicon,
    /// Full three-way mixture with the conditional copy mechanism.
    LexiconCopy,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sspg,
    Ssd,
    Pg,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Sspg => "sspg",
            ModelKind::Ssd => "ssd",
            ModelKind::Pg => "pg",
        }
    }

    pub fn mixture_mode(&self) -> MixtureMode {
        match self {
            ModelKind::Sspg => MixtureMode::LexiconCopy,
            ModelKind::Ssd => MixtureMode::Lexicon,
            ModelKind::Pg => MixtureMode::LexiconCopy,
        }
    }
}

/// Dropout context; absent at inference time.
pub struct TrainCtx<'r> {
    pub rng: &'r mut ChaCha8Rng,
    pub dropout: f64,
}

/// Per-source-token encoder output plus copy-support bookkeeping.
pub struct Encoded {
    /// (n, 2H) contextual states.
    pub states: Var,
    /// (n, H) states projected for attention scoring.
    pub proj: Var,
    pub h0: Var,
    pub c0: Var,
    pub n: usize,
    /// Surface string (boundary marker stripped) -> non-special positions.
    pub copy_map: HashMap<String, Vec<usize>>,
    pub src: Vec<usize>,
}

/// Decoder recurrent state handle.
#[derive(Clone, Copy)]
pub struct DecState {
    pub h: Var,
    pub c: Var,
}

/// All distributions the mixture needs at one character position.
#[derive(Clone, Copy)]
pub struct PositionEval {
    pub ctx: Var,
    /// Attention weights over all source positions (delimiters included).
    pub attn: Var,
    /// Log-softmax over CharVocab output ids (chars, unk, eoseg, eos).
    pub char_logp: Var,
    /// (log g, log(1-g)); None in CharOnly mode.
    pub gate: Option<(Var, Var)>,
    /// Log-softmax over the lexicon; None in CharOnly mode.
    pub lex_logp: Option<Var>,
    /// (log p(z=0), log p(z=1)); None unless the copy mechanism is active.
    pub zgate: Option<(Var, Var)>,
}

pub struct SspgModel {
    pub dims: Dims,
    pub bpe: BpeVocab,
    pub chars: CharVocab,
    pub lexicon: Lexicon,
    pub mode: MixtureMode,
    pub max_seg_len: usize,
    pub dropout: f64,
    pub params: ParamStore,
}

pub(crate) fn init_encoder_params(
    params: &mut ParamStore,
    vocab: usize,
    dims: Dims,
    rng: &mut ChaCha8Rng,
) {
    let (e, h) = (dims.embed, dims.hidden);
    params.insert_matrix("enc.emb", vocab, e, rng);
    init_lstm(params, "enc.fwd", e, h, rng);
    init_lstm(params, "enc.bwd", e, h, rng);
    params.insert_matrix("bridge.w_h", h, 2 * h, rng);
    params.insert_zeros("bridge.b_h", &[h]);
    params.insert_matrix("bridge.w_c", h, 2 * h, rng);
    params.insert_zeros("bridge.b_c", &[h]);
    params.insert_matrix("att.w", 2 * h, h, rng);
}

/// Shared bi-LSTM encoder over source token ids.
pub(crate) fn encode_source(
    g: &mut Graph,
    dims: Dims,
    src: &[usize],
    copy_map: HashMap<String, Vec<usize>>,
    train: &mut Option<TrainCtx>,
) -> Result<Encoded, GraphError> {
    let h = dims.hidden;
    let n = src.len();
    let emb_table = g.param("enc.emb")?;
    let mut embs = g.gather(emb_table, src)?;
    if let Some(t) = train {
        embs = g.dropout(embs, t.dropout, t.rng)?;
    }

    let fwd = LstmCell::bind(g, "enc.fwd", h)?;
    let bwd = LstmCell::bind(g, "enc.bwd", h)?;
    let zero = g.input(crate::tensor::Tensor::zeros(&[h]))?;

    let mut hf = Vec::with_capacity(n);
    let (mut sh, mut sc) = (zero, zero);
    for t in 0..n {
        let x = g.row_of(embs, t)?;
        let (nh, nc) = fwd.step(g, x, sh, sc)?;
        sh = nh;
        sc = nc;
        hf.push(nh);
    }
    let (fwd_h_last, fwd_c_last) = (sh, sc);

    let mut hb = vec![zero; n];
    let (mut sh, mut sc) = (zero, zero);
    for t in (0..n).rev() {
        let x = g.row_of(embs, t)?;
        let (nh, nc) = bwd.step(g, x, sh, sc)?;
        sh = nh;
        sc = nc;
        hb[t] = nh;
    }
    let (bwd_h_last, bwd_c_last) = (sh, sc);

    let rows: Vec<Var> = (0..n)
        .map(|t| g.concat(&[hf[t], hb[t]]))
        .collect::<Result<_, _>>()?;
    let states = g.stack(&rows)?;
    let att_w = g.param("att.w")?;
    let proj = g.matmul(states, att_w)?;

    let hcat = g.concat(&[fwd_h_last, bwd_h_last])?;
    let ccat = g.concat(&[fwd_c_last, bwd_c_last])?;
    let w_h = g.param("bridge.w_h")?;
    let b_h = g.param("bridge.b_h")?;
    let w_c = g.param("bridge.w_c")?;
    let b_c = g.param("bridge.b_c")?;
    let h0_lin = g.matvec(w_h, hcat)?;
    let h0_aff = g.add(h0_lin, b_h)?;
    let h0 = g.tanh(h0_aff)?;
    let c0_lin = g.matvec(w_c, ccat)?;
    let c0_aff = g.add(c0_lin, b_c)?;
    let c0 = g.tanh(c0_aff)?;

    Ok(Encoded { states, proj, h0, c0, n, copy_map, src: src.to_vec() })
}

/// Attention: softmax over projected-state scores, context is the weighted
/// sum of encoder states.
pub fn attend(g: &mut Graph, enc: &Encoded, h: Var) -> Result<(Var, Var), GraphError> {
    let scores = g.matvec(enc.proj, h)?;
    let weights = g.softmax(scores)?;
    let ctx = g.vecmat(weights, enc.states)?;
    Ok((ctx, weights))
}

impl SspgModel {
    pub fn new(
        bpe: BpeVocab,
        chars: CharVocab,
        lexicon: Lexicon,
        mode: MixtureMode,
        max_seg_len: usize,
        dims: Dims,
        dropout: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (e, h) = (dims.embed, dims.hidden);
        init_encoder_params(&mut params, bpe.len(), dims, &mut rng);
        params.insert_matrix("dec.emb", chars.input_dim(), e, &mut rng);
        init_lstm(&mut params, "dec", e, h, &mut rng);
        let feat = 3 * h; // [state; context]
        params.insert_matrix("out.char.w", chars.output_dim(), feat, &mut rng);
        params.insert_zeros("out.char.b", &[chars.output_dim()]);
        if !matches!(mode, MixtureMode::CharOnly) {
            params.insert_matrix("gate.g.w", 1, feat, &mut rng);
            params.insert_zeros("gate.g.b", &[1]);
            params.insert_matrix("out.lex.w", lexicon.len(), feat, &mut rng);
            params.insert_zeros("out.lex.b", &[lexicon.len()]);
            if matches!(mode, MixtureMode::LexiconCopy) {
                params.insert_matrix("gate.z.w", 1, feat, &mut rng);
                params.insert_zeros("gate.z.b", &[1]);
            }
        }
        SspgModel { dims, bpe, chars, lexicon, mode, max_seg_len, dropout, params }
    }

    pub fn copy_map(&self, src: &[usize]) -> HashMap<String, Vec<usize>> {
        let mut map: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, &id) in src.iter().enumerate() {
            if self.bpe.specials.contains(id) {
                continue;
            }
            map.entry(self.bpe.surface(id)).or_default().push(i);
        }
        map
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        src: &[usize],
        mut train: Option<TrainCtx>,
    ) -> Result<Encoded, ModelError> {
        if src.is_empty() {
            return Err(ModelError::EmptyInput("source token sequence"));
        }
        for &id in src {
            if id >= self.bpe.len() {
                return Err(ModelError::Vocab(VocabError::UnknownTokenId(id)));
            }
        }
        let copy_map = if matches!(self.mode, MixtureMode::LexiconCopy) {
            self.copy_map(src)
        } else {
            HashMap::new()
        };
        Ok(encode_source(g, self.dims, src, copy_map, &mut train)?)
    }

    pub fn init_state(&self, enc: &Encoded) -> DecState {
        DecState { h: enc.h0, c: enc.c0 }
    }

    /// One character step of the history LSTM. `input_id` is a decoder input
    /// embedding id (an output char id, or bos).
    pub fn advance(
        &self,
        g: &mut Graph,
        state: DecState,
        input_id: usize,
        train: &mut Option<TrainCtx>,
    ) -> Result<DecState, GraphError> {
        let emb_table = g.param("dec.emb")?;
        let row = g.gather(emb_table, &[input_id])?;
        let mut x = g.row_of(row, 0)?;
        if let Some(t) = train {
            x = g.dropout(x, t.dropout, t.rng)?;
        }
        let cell = LstmCell::bind(g, "dec", self.dims.hidden)?;
        let (h, c) = cell.step(g, x, state.h, state.c)?;
        Ok(DecState { h, c })
    }

    /// Decoder state after consuming the character prefix (bos first).
    pub fn char_history_state(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        prefix: &[char],
        train: &mut Option<TrainCtx>,
    ) -> Result<DecState, GraphError> {
        let mut state = self.init_state(enc);
        state = self.advance(g, state, self.chars.bos(), train)?;
        for &c in prefix {
            state = self.advance(g, state, self.chars.id(c), train)?;
        }
        Ok(state)
    }

    /// All mixture distributions conditioned on the current state.
    pub fn eval_position(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        state: DecState,
        train: &mut Option<TrainCtx>,
    ) -> Result<PositionEval, GraphError> {
        let (ctx, attn) = attend(g, enc, state.h)?;
        let mut feat = g.concat(&[state.h, ctx])?;
        if let Some(t) = train {
            feat = g.dropout(feat, t.dropout, t.rng)?;
        }
        let w = g.param("out.char.w")?;
        let b = g.param("out.char.b")?;
        let lin = g.matvec(w, feat)?;
        let logits = g.add(lin, b)?;
        let char_logp = g.log_softmax(logits)?;

        let (gate, lex_logp, zgate) = if matches!(self.mode, MixtureMode::CharOnly) {
            (None, None, None)
        } else {
            let gate = Some(self.sigmoid_gate(g, "gate.g", feat)?);
            let w = g.param("out.lex.w")?;
            let b = g.param("out.lex.b")?;
            let lin = g.matvec(w, feat)?;
            let logits = g.add(lin, b)?;
            let lex_logp = Some(g.log_softmax(logits)?);
            let zgate = if matches!(self.mode, MixtureMode::LexiconCopy) {
                Some(self.sigmoid_gate(g, "gate.z", feat)?)
            } else {
                None
            };
            (gate, lex_logp, zgate)
        };
        Ok(PositionEval { ctx, attn, char_logp, gate, lex_logp, zgate })
    }

    /// Fully connected sigmoid gate; returns (log p, log(1-p)).
    fn sigmoid_gate(&self, g: &mut Graph, prefix: &str, feat: Var) -> Result<(Var, Var), GraphError> {
        let w = g.param(&format!("{prefix}.w"))?;
        let b = g.param(&format!("{prefix}.b"))?;
        let lin = g.matvec(w, feat)?;
        let aff = g.add(lin, b)?;
        let a = g.index(aff, 0)?;
        let p = g.sigmoid(a)?;
        let na = g.neg(a)?;
        let q = g.sigmoid(na)?;
        let logp = g.ln(p)?;
        let logq = g.ln(q)?;
        Ok((logp, logq))
    }

    /// log p_char(s | state): per-character log-probs plus the end-of-segment
    /// event, with attention recomputed at every character step.
    /// Returns the log-prob and the advanced state.
    pub fn segment_logprob_char(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        state: DecState,
        segment: &str,
    ) -> Result<(Var, DecState), ModelError> {
        let seg_chars: Vec<char> = segment.chars().collect();
        if seg_chars.is_empty() || seg_chars.len() > self.max_seg_len {
            return Err(ModelError::Vocab(VocabError::SegmentTooLong {
                segment: segment.to_string(),
                max_len: self.max_seg_len,
            }));
        }
        let mut none = None;
        let mut terms = Vec::with_capacity(seg_chars.len() + 1);
        let mut st = state;
        for &c in &seg_chars {
            let eval = self.eval_position(g, enc, st, &mut none)?;
            terms.push(g.index(eval.char_logp, self.chars.id(c))?);
            st = self.advance(g, st, self.chars.id(c), &mut none)?;
        }
        let eval = self.eval_position(g, enc, st, &mut none)?;
        terms.push(g.index(eval.char_logp, self.chars.end_of_segment())?);
        let mut total = terms[0];
        for t in &terms[1..] {
            total = g.add(total, *t)?;
        }
        Ok((total, st))
    }

    /// Lexicon-path branches (z0·p_gen, z1·p_copy) for a candidate segment,
    /// as gated log-prob terms. Empty when the segment has no lexicon-path
    /// support (e.g. whitespace).
    pub fn lexicon_branches(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        eval: &PositionEval,
        segment: &str,
    ) -> Result<Vec<Var>, GraphError> {
        let mut branches = Vec::new();
        let (_, log_1mg) = match eval.gate {
            Some(gate) => gate,
            None => return Ok(branches),
        };
        let lex_logp = eval.lex_logp.expect("lexicon head present when gated");
        match eval.zgate {
            None => {
                if let Some(id) = self.lexicon.id(segment) {
                    let term = g.index(lex_logp, id)?;
                    let b = g.add(log_1mg, term)?;
                    branches.push(b);
                }
            }
            Some((log_z0, log_z1)) => {
                if let Some(id) = self.lexicon.id(segment) {
                    let term = g.index(lex_logp, id)?;
                    let gated = g.add(log_z0, term)?;
                    let b = g.add(log_1mg, gated)?;
                    branches.push(b);
                }
                if let Some(positions) = enc.copy_map.get(segment) {
                    let mass = g.sum_select(eval.attn, positions)?;
                    let lmass = g.ln(mass)?;
                    let gated = g.add(log_z1, lmass)?;
                    let b = g.add(log_1mg, gated)?;
                    branches.push(b);
                }
            }
        }
        Ok(branches)
    }

    /// Full mixed next-subword log-probability (Eq. 2/3 shape):
    /// lse(log g + log p_char(s), log(1-g) + log p_lex(s)).
    pub fn mixture_next_subword(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        state: DecState,
        segment: &str,
    ) -> Result<Var, ModelError> {
        let mut none = None;
        let eval = self.eval_position(g, enc, state, &mut none)?;
        let (char_lp, _) = self.segment_logprob_char(g, enc, state, segment)?;
        let mut branches = Vec::new();
        match eval.gate {
            None => branches.push(char_lp),
            Some((log_g, _)) => {
                let b = g.add(log_g, char_lp)?;
                branches.push(b);
            }
        }
        branches.extend(self.lexicon_branches(g, enc, &eval, segment)?);
        if branches.len() == 1 {
            Ok(branches[0])
        } else {
            let cat = g.concat(&branches)?;
            Ok(g.logsumexp(cat)?)
        }
    }
}
