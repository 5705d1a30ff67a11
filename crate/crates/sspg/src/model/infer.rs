//! Raw f64 inference path: the same forward computation as the graph ops but
//! without the tape, so long decodes run in constant memory. Mirrors
//! `encode_source`/`attend`/`eval_position` exactly; a test pins the two
//! paths together bitwise-tolerantly (1e-12).

use std::collections::HashMap;

use crate::error::{ModelError, VocabError};
use crate::graph::ParamStore;
use crate::model::{MixtureMode, PgModel, SspgModel};
use crate::tensor::Tensor;

fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = m.dims2().expect("matrix");
    debug_assert_eq!(cols, x.len());
    let d = m.data();
    (0..rows)
        .map(|i| d[i * cols..(i + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    let lz = m + z.ln();
    xs.iter().map(|x| x - lz).collect()
}

struct RawLstm<'p> {
    w_ih: &'p Tensor,
    w_hh: &'p Tensor,
    b: &'p Tensor,
    hidden: usize,
}

impl<'p> RawLstm<'p> {
    fn bind(params: &'p ParamStore, prefix: &str, hidden: usize) -> Self {
        RawLstm {
            w_ih: params.get(&format!("{prefix}.w_ih")).expect("lstm weights"),
            w_hh: params.get(&format!("{prefix}.w_hh")).expect("lstm weights"),
            b: params.get(&format!("{prefix}.b")).expect("lstm bias"),
            hidden,
        }
    }

    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hh = self.hidden;
        let mut gates = matvec(self.w_ih, x);
        add_assign(&mut gates, &matvec(self.w_hh, h));
        add_assign(&mut gates, self.b.data());
        let mut c_new = vec![0.0; hh];
        let mut h_new = vec![0.0; hh];
        for j in 0..hh {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[hh + j]);
            let q = gates[2 * hh + j].tanh();
            let o = sigmoid(gates[3 * hh + j]);
            c_new[j] = f * c[j] + i * q;
            h_new[j] = o * c_new[j].tanh();
        }
        (h_new, c_new)
    }
}

/// Encoder output in plain buffers.
pub struct RawEncoded {
    /// (n, 2H) contextual states, row-major.
    pub states: Vec<f64>,
    /// (n, H) attention-projected states.
    pub proj: Vec<f64>,
    pub h0: Vec<f64>,
    pub c0: Vec<f64>,
    pub n: usize,
    pub copy_map: HashMap<String, Vec<usize>>,
}

#[derive(Clone)]
pub struct RawState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Distributions at one decoder position, in plain buffers.
pub struct RawEval {
    pub attn: Vec<f64>,
    pub char_logp: Vec<f64>,
    /// (log g, log(1-g)).
    pub gate: Option<(f64, f64)>,
    pub lex_logp: Option<Vec<f64>>,
    /// (log p(z=0), log p(z=1)).
    pub zgate: Option<(f64, f64)>,
}

fn encode_raw(
    params: &ParamStore,
    embed: usize,
    hidden: usize,
    src: &[usize],
    copy_map: HashMap<String, Vec<usize>>,
) -> RawEncoded {
    let n = src.len();
    let h = hidden;
    let emb = params.get("enc.emb").expect("encoder embedding");
    let embs: Vec<&[f64]> = src.iter().map(|&id| emb.row(id)).collect();
    debug_assert_eq!(embs[0].len(), embed);

    let fwd = RawLstm::bind(params, "enc.fwd", h);
    let bwd = RawLstm::bind(params, "enc.bwd", h);
    let mut hf = Vec::with_capacity(n);
    let (mut sh, mut sc) = (vec![0.0; h], vec![0.0; h]);
    for t in 0..n {
        let (nh, nc) = fwd.step(embs[t], &sh, &sc);
        sh = nh.clone();
        sc = nc;
        hf.push(nh);
    }
    let (fwd_h_last, fwd_c_last) = (sh, sc);

    let mut hb = vec![Vec::new(); n];
    let (mut sh, mut sc) = (vec![0.0; h], vec![0.0; h]);
    for t in (0..n).rev() {
        let (nh, nc) = bwd.step(embs[t], &sh, &sc);
        sh = nh.clone();
        sc = nc;
        hb[t] = nh;
    }
    let (bwd_h_last, bwd_c_last) = (sh, sc);

    let mut states = Vec::with_capacity(n * 2 * h);
    for t in 0..n {
        states.extend_from_slice(&hf[t]);
        states.extend_from_slice(&hb[t]);
    }
    let att_w = params.get("att.w").expect("attention projection");
    // proj = states · att.w, (n,2H)·(2H,H)
    let aw = att_w.data();
    let mut proj = vec![0.0; n * h];
    for t in 0..n {
        let row = &states[t * 2 * h..(t + 1) * 2 * h];
        for (l, &r) in row.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let wrow = &aw[l * h..(l + 1) * h];
            let orow = &mut proj[t * h..(t + 1) * h];
            for (o, w) in orow.iter_mut().zip(wrow) {
                *o += r * w;
            }
        }
    }

    let mut hcat = fwd_h_last;
    hcat.extend_from_slice(&bwd_h_last);
    let mut ccat = fwd_c_last;
    ccat.extend_from_slice(&bwd_c_last);
    let mut h0 = matvec(params.get("bridge.w_h").unwrap(), &hcat);
    add_assign(&mut h0, params.get("bridge.b_h").unwrap().data());
    for v in &mut h0 {
        *v = v.tanh();
    }
    let mut c0 = matvec(params.get("bridge.w_c").unwrap(), &ccat);
    add_assign(&mut c0, params.get("bridge.b_c").unwrap().data());
    for v in &mut c0 {
        *v = v.tanh();
    }

    RawEncoded { states, proj, h0, c0, n, copy_map }
}

fn attend_raw(enc: &RawEncoded, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let scores: Vec<f64> = (0..enc.n)
        .map(|t| enc.proj[t * hidden..(t + 1) * hidden].iter().zip(h).map(|(a, b)| a * b).sum())
        .collect();
    let weights = softmax(&scores);
    let width = 2 * hidden;
    let mut ctx = vec![0.0; width];
    for (t, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, s) in ctx.iter_mut().zip(&enc.states[t * width..(t + 1) * width]) {
            *o += w * s;
        }
    }
    (ctx, weights)
}

fn gate_raw(params: &ParamStore, prefix: &str, feat: &[f64]) -> (f64, f64) {
    let w = params.get(&format!("{prefix}.w")).expect("gate weights");
    let b = params.get(&format!("{prefix}.b")).expect("gate bias");
    let a = matvec(w, feat)[0] + b.data()[0];
    (sigmoid(a).ln(), sigmoid(-a).ln())
}

impl SspgModel {
    pub fn encode_raw(&self, src: &[usize]) -> Result<RawEncoded, ModelError> {
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
        Ok(encode_raw(&self.params, self.dims.embed, self.dims.hidden, src, copy_map))
    }

    pub fn init_state_raw(&self, enc: &RawEncoded) -> RawState {
        RawState { h: enc.h0.clone(), c: enc.c0.clone() }
    }

    pub fn advance_raw(&self, state: &RawState, input_id: usize) -> RawState {
        let emb = self.params.get("dec.emb").expect("decoder embedding");
        let x = emb.row(input_id);
        let cell = RawLstm::bind(&self.params, "dec", self.dims.hidden);
        let (h, c) = cell.step(x, &state.h, &state.c);
        RawState { h, c }
    }

    /// Decoder state after consuming the character prefix (bos first).
    pub fn char_history_state_raw(&self, enc: &RawEncoded, prefix: &[char]) -> RawState {
        let mut state = self.init_state_raw(enc);
        state = self.advance_raw(&state, self.chars.bos());
        for &c in prefix {
            state = self.advance_raw(&state, self.chars.id(c));
        }
        state
    }

    pub fn eval_position_raw(&self, enc: &RawEncoded, state: &RawState) -> RawEval {
        let (ctx, attn) = attend_raw(enc, &state.h);
        let mut feat = state.h.clone();
        feat.extend_from_slice(&ctx);
        let mut logits = matvec(self.params.get("out.char.w").unwrap(), &feat);
        add_assign(&mut logits, self.params.get("out.char.b").unwrap().data());
        let char_logp = log_softmax(&logits);

        let (gate, lex_logp, zgate) = if matches!(self.mode, MixtureMode::CharOnly) {
            (None, None, None)
        } else {
            let gate = Some(gate_raw(&self.params, "gate.g", &feat));
            let mut lex = matvec(self.params.get("out.lex.w").unwrap(), &feat);
            add_assign(&mut lex, self.params.get("out.lex.b").unwrap().data());
            let lex_logp = Some(log_softmax(&lex));
            let zgate = if matches!(self.mode, MixtureMode::LexiconCopy) {
                Some(gate_raw(&self.params, "gate.z", &feat))
            } else {
                None
            };
            (gate, lex_logp, zgate)
        };
        RawEval { attn, char_logp, gate, lex_logp, zgate }
    }
}

/// PG step distributions in plain buffers.
pub struct RawPgEval {
    pub attn: Vec<f64>,
    pub tok_logp: Vec<f64>,
    pub zgate: (f64, f64),
}

impl PgModel {
    pub fn encode_raw(&self, src: &[usize]) -> Result<RawEncoded, ModelError> {
        if src.is_empty() {
            return Err(ModelError::EmptyInput("source token sequence"));
        }
        for &id in src {
            if id >= self.bpe.len() {
                return Err(ModelError::Vocab(VocabError::UnknownTokenId(id)));
            }
        }
        Ok(encode_raw(&self.params, self.dims.embed, self.dims.hidden, src, self.copy_map(src)))
    }

    pub fn init_state_raw(&self, enc: &RawEncoded) -> RawState {
        RawState { h: enc.h0.clone(), c: enc.c0.clone() }
    }

    pub fn advance_raw(&self, state: &RawState, token_id: usize) -> RawState {
        let emb = self.params.get("dec.emb").expect("decoder embedding");
        let cell = RawLstm::bind(&self.params, "dec", self.dims.hidden);
        let (h, c) = cell.step(emb.row(token_id), &state.h, &state.c);
        RawState { h, c }
    }

    pub fn eval_position_raw(&self, enc: &RawEncoded, state: &RawState) -> RawPgEval {
        let (ctx, attn) = attend_raw(enc, &state.h);
        let mut feat = state.h.clone();
        feat.extend_from_slice(&ctx);
        let mut logits = matvec(self.params.get("out.tok.w").unwrap(), &feat);
        add_assign(&mut logits, self.params.get("out.tok.b").unwrap().data());
        let tok_logp = log_softmax(&logits);
        let zgate = gate_raw(&self.params, "gate.z", &feat);
        RawPgEval { attn, tok_logp, zgate }
    }

    /// p(t) = p(z=0)·softmax(t) + p(z=1)·p_copy(t); p_copy renormalized over
    /// non-special source positions. Sums to 1.
    pub fn step_dist_raw(&self, enc: &RawEncoded, eval: &RawPgEval) -> Vec<f64> {
        let z0 = eval.zgate.0.exp();
        let z1 = eval.zgate.1.exp();
        let total: f64 = enc
            .copy_map
            .values()
            .flatten()
            .map(|&i| eval.attn[i])
            .sum();
        let mut dist: Vec<f64> = eval.tok_logp.iter().map(|lp| z0 * lp.exp()).collect();
        if total > 0.0 {
            for (tok, positions) in &enc.copy_map {
                if let Some(id) = self.bpe.token_id(tok) {
                    let mass: f64 = positions.iter().map(|&i| eval.attn[i]).sum();
                    dist[id] += z1 * mass / total;
                }
            }
        }
        dist
    }
}
