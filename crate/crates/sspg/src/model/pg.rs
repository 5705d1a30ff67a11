//! Pointer-generator baseline: BPE-token decoder with a conditional copy
//! mechanism over the source tokens, sharing the bi-LSTM encoder.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GraphError, ModelError, VocabError};
use crate::graph::{Graph, ParamStore, Var};
use crate::tokenizer::BpeVocab;

use super::{attend, encode_source, init_encoder_params, init_lstm, DecState, Dims, Encoded, LstmCell, TrainCtx};

pub struct PgModel {
    pub dims: Dims,
    /// Shared vocabulary for both the data side and the text side.
    pub bpe: BpeVocab,
    pub dropout: f64,
    pub params: ParamStore,
}

/// Distributions for one decoding step.
pub struct PgEval {
    pub ctx: Var,
    pub attn: Var,
    /// Log-softmax over the BPE vocabulary (the generation half).
    pub tok_logp: Var,
    /// (log p(z=0), log p(z=1)).
    pub zgate: (Var, Var),
}

impl PgModel {
    pub fn new(bpe: BpeVocab, dims: Dims, dropout: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (e, h) = (dims.embed, dims.hidden);
        init_encoder_params(&mut params, bpe.len(), dims, &mut rng);
        params.insert_matrix("dec.emb", bpe.len(), e, &mut rng);
        init_lstm(&mut params, "dec", e, h, &mut rng);
        let feat = 3 * h;
        params.insert_matrix("out.tok.w", bpe.len(), feat, &mut rng);
        params.insert_zeros("out.tok.b", &[bpe.len()]);
        params.insert_matrix("gate.z.w", 1, feat, &mut rng);
        params.insert_zeros("gate.z.b", &[1]);
        PgModel { dims, bpe, dropout, params }
    }

    /// Copy support: token string -> source positions, delimiters excluded.
    pub(crate) fn copy_map(&self, src: &[usize]) -> HashMap<String, Vec<usize>> {
        let mut map: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, &id) in src.iter().enumerate() {
            if self.bpe.specials.contains(id) {
                continue;
            }
            map.entry(self.bpe.token(id).to_string()).or_default().push(i);
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
        Ok(encode_source(g, self.dims, src, self.copy_map(src), &mut train)?)
    }

    pub fn init_state(&self, enc: &Encoded) -> DecState {
        DecState { h: enc.h0, c: enc.c0 }
    }

    pub fn advance(
        &self,
        g: &mut Graph,
        state: DecState,
        token_id: usize,
        train: &mut Option<TrainCtx>,
    ) -> Result<DecState, GraphError> {
        let emb = g.param("dec.emb")?;
        let row = g.gather(emb, &[token_id])?;
        let mut x = g.row_of(row, 0)?;
        if let Some(t) = train {
            x = g.dropout(x, t.dropout, t.rng)?;
        }
        let cell = LstmCell::bind(g, "dec", self.dims.hidden)?;
        let (h, c) = cell.step(g, x, state.h, state.c)?;
        Ok(DecState { h, c })
    }

    pub fn eval_position(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        state: DecState,
        train: &mut Option<TrainCtx>,
    ) -> Result<PgEval, GraphError> {
        let (ctx, attn) = attend(g, enc, state.h)?;
        let mut feat = g.concat(&[state.h, ctx])?;
        if let Some(t) = train {
            feat = g.dropout(feat, t.dropout, t.rng)?;
        }
        let w = g.param("out.tok.w")?;
        let b = g.param("out.tok.b")?;
        let lin = g.matvec(w, feat)?;
        let logits = g.add(lin, b)?;
        let tok_logp = g.log_softmax(logits)?;
        let wz = g.param("gate.z.w")?;
        let bz = g.param("gate.z.b")?;
        let lin = g.matvec(wz, feat)?;
        let aff = g.add(lin, bz)?;
        let a = g.index(aff, 0)?;
        let p = g.sigmoid(a)?;
        let na = g.neg(a)?;
        let q = g.sigmoid(na)?;
        let log_z0 = g.ln(p)?;
        let log_z1 = g.ln(q)?;
        // z=1 is the copy event: p(z=1) = sigmoid(-a) keeps p(z=0)+p(z=1)=1
        Ok(PgEval { ctx, attn, tok_logp, zgate: (log_z0, log_z1) })
    }

    fn nonspecial_positions(enc: &Encoded) -> Vec<usize> {
        let mut ps: Vec<usize> = enc.copy_map.values().flatten().copied().collect();
        ps.sort_unstable();
        ps
    }

    /// log p(token) = lse(log z0 + log softmax[token], log z1 + log p_copy).
    /// p_copy is the attention distribution renormalized over non-special
    /// positions so the mixed distribution is proper.
    pub fn target_logprob(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        eval: &PgEval,
        token_id: usize,
    ) -> Result<Var, GraphError> {
        let (log_z0, log_z1) = eval.zgate;
        let gen_term = g.index(eval.tok_logp, token_id)?;
        let mut branches = vec![g.add(log_z0, gen_term)?];
        if let Some(positions) = enc.copy_map.get(self.bpe.token(token_id)) {
            let mass = g.sum_select(eval.attn, positions)?;
            let total = g.sum_select(eval.attn, &Self::nonspecial_positions(enc))?;
            let lmass = g.ln(mass)?;
            let ltotal = g.ln(total)?;
            let lcopy = g.sub(lmass, ltotal)?;
            branches.push(g.add(log_z1, lcopy)?);
        }
        if branches.len() == 1 {
            Ok(branches[0])
        } else {
            let cat = g.concat(&branches)?;
            g.logsumexp(cat)
        }
    }

    /// Full mixed distribution over the vocabulary as plain probabilities:
    /// p(t) = p(z=0)·softmax(t) + p(z=1)·p_copy(t). Sums to 1.
    pub fn step_dist(&self, g: &Graph, enc: &Encoded, eval: &PgEval) -> Vec<f64> {
        let (log_z0, log_z1) = eval.zgate;
        let z0 = g.scalar_value(log_z0).exp();
        let z1 = g.scalar_value(log_z1).exp();
        let logp = g.value(eval.tok_logp).data();
        let attn = g.value(eval.attn).data();
        let total: f64 = Self::nonspecial_positions(enc).iter().map(|&i| attn[i]).sum();
        let mut dist: Vec<f64> = logp.iter().map(|lp| z0 * lp.exp()).collect();
        for (tok, positions) in &enc.copy_map {
            if let Some(id) = self.bpe.token_id(tok) {
                let mass: f64 = positions.iter().map(|&i| attn[i]).sum();
                dist[id] += z1 * mass / total;
            }
        }
        dist
    }
}
