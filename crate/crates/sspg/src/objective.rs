//! Training objective: exact marginalization over all subword segmentations
//! of the output text via a forward-lattice DP, with a brute-force
//! enumeration oracle and Viterbi segmentation.

use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::graph::{Graph, Var};
use crate::model::{DecState, PositionEval, SspgModel, TrainCtx};
use crate::optim::Adam;
use crate::tensor::logsumexp_slice;

/// Forward log-probabilities over character positions; alpha[0] = 0.
#[derive(Clone, Debug)]
pub struct LatticeScores {
    pub alpha: Vec<f64>,
}

/// Cached per-position decoder evaluations along a target string.
pub struct LatticeEval {
    pub chars: Vec<char>,
    pub evals: Vec<PositionEval>,
    pub states: Vec<DecState>,
}

pub const BRUTE_FORCE_MAX_LEN: usize = 12;

fn segment_of(chars: &[char], k: usize, j: usize) -> String {
    chars[k..j].iter().collect()
}

/// Segments may not cross whitespace; a lone whitespace character is a valid
/// (char-path-only) segment.
fn crosses_whitespace(chars: &[char], k: usize, j: usize) -> bool {
    j - k > 1 && chars[k..j].iter().any(|c| c.is_whitespace())
}

pub fn lattice_eval(
    model: &SspgModel,
    g: &mut Graph,
    enc: &crate::model::Encoded,
    y: &str,
    train: &mut Option<TrainCtx>,
) -> Result<LatticeEval, ModelError> {
    if y.is_empty() {
        return Err(ModelError::EmptyInput("target string"));
    }
    let chars: Vec<char> = y.chars().collect();
    let mut states = Vec::with_capacity(chars.len() + 1);
    let mut evals = Vec::with_capacity(chars.len() + 1);
    let mut st = model.char_history_state(g, enc, &[], train)?;
    for j in 0..=chars.len() {
        evals.push(model.eval_position(g, enc, st, train)?);
        states.push(st);
        if j < chars.len() {
            st = model.advance(g, st, model.chars.id(chars[j]), train)?;
        }
    }
    Ok(LatticeEval { chars, evals, states })
}

/// Differentiable log p(y|x): forward DP over the segmentation lattice plus
/// the final end-of-sequence factor.
pub fn log_marginal_var(
    model: &SspgModel,
    g: &mut Graph,
    enc: &crate::model::Encoded,
    lat: &LatticeEval,
) -> Result<(Var, LatticeScores), ModelError> {
    let n = lat.chars.len();
    let len_limit = model.max_seg_len;
    let eoseg = model.chars.end_of_segment();
    let eos = model.chars.end_of_sequence();

    // prefix sums of per-character log-probs: char path of y[k..j] is
    // cum[j] - cum[k] + eoseg term at j
    let mut cum: Vec<Var> = Vec::with_capacity(n + 1);
    cum.push(g.constant(0.0));
    for t in 0..n {
        let term = g.index(lat.evals[t].char_logp, model.chars.id(lat.chars[t]))?;
        let next = g.add(cum[t], term)?;
        cum.push(next);
    }

    let mut alpha: Vec<Var> = Vec::with_capacity(n + 1);
    alpha.push(g.constant(0.0));
    for j in 1..=n {
        let mut branches = Vec::new();
        for k in j.saturating_sub(len_limit)..j {
            if crosses_whitespace(&lat.chars, k, j) {
                continue;
            }
            let seg = segment_of(&lat.chars, k, j);
            let diff = g.sub(cum[j], cum[k])?;
            let eoseg_term = g.index(lat.evals[j].char_logp, eoseg)?;
            let char_path = g.add(diff, eoseg_term)?;
            let mut seg_branches = match lat.evals[k].gate {
                Some((log_g, _)) => vec![g.add(log_g, char_path)?],
                None => vec![char_path],
            };
            seg_branches.extend(model.lexicon_branches(g, enc, &lat.evals[k], &seg)?);
            let seg_lp = if seg_branches.len() == 1 {
                seg_branches[0]
            } else {
                let cat = g.concat(&seg_branches)?;
                g.logsumexp(cat)?
            };
            branches.push(g.add(alpha[k], seg_lp)?);
        }
        let cat = g.concat(&branches)?;
        alpha.push(g.logsumexp(cat)?);
    }

    let eos_term = g.index(lat.evals[n].char_logp, eos)?;
    let total = g.add(alpha[n], eos_term)?;
    let scores = LatticeScores { alpha: alpha.iter().map(|a| g.scalar_value(*a)).collect() };
    Ok((total, scores))
}

/// Convenience wrapper: encode + lattice + DP in a fresh graph, no dropout.
pub fn log_marginal(model: &SspgModel, src: &[usize], y: &str) -> Result<f64, ModelError> {
    let mut g = Graph::new(&model.params);
    let mut none = None;
    let enc = model.encode(&mut g, src, None)?;
    let lat = lattice_eval(model, &mut g, &enc, y, &mut none)?;
    let (lm, _) = log_marginal_var(model, &mut g, &enc, &lat)?;
    Ok(g.scalar_value(lm))
}

/// Plain-f64 mixture score of segment y[k..j] read off the cached evals.
/// Deliberately re-derives the mixture from tensor values rather than the
/// graph nodes the DP combines.
fn seg_score_f64(
    model: &SspgModel,
    g: &Graph,
    enc: &crate::model::Encoded,
    lat: &LatticeEval,
    k: usize,
    j: usize,
) -> f64 {
    let seg = segment_of(&lat.chars, k, j);
    let eoseg = model.chars.end_of_segment();
    let mut char_path = 0.0;
    for t in k..j {
        char_path += g.value(lat.evals[t].char_logp).data()[model.chars.id(lat.chars[t])];
    }
    char_path += g.value(lat.evals[j].char_logp).data()[eoseg];

    let ev = &lat.evals[k];
    let mut branches = Vec::new();
    match ev.gate {
        None => branches.push(char_path),
        Some((log_g, log_1mg)) => {
            branches.push(g.scalar_value(log_g) + char_path);
            let log_1mg = g.scalar_value(log_1mg);
            let lex_logp = g.value(ev.lex_logp.expect("lexicon head"));
            match ev.zgate {
                None => {
                    if let Some(id) = model.lexicon.id(&seg) {
                        branches.push(log_1mg + lex_logp.data()[id]);
                    }
                }
                Some((log_z0, log_z1)) => {
                    if let Some(id) = model.lexicon.id(&seg) {
                        branches.push(log_1mg + g.scalar_value(log_z0) + lex_logp.data()[id]);
                    }
                    if let Some(positions) = enc.copy_map.get(&seg) {
                        let attn = g.value(ev.attn).data();
                        let mass: f64 = positions.iter().map(|&i| attn[i]).sum();
                        branches.push(log_1mg + g.scalar_value(log_z1) + mass.ln());
                    }
                }
            }
        }
    }
    logsumexp_slice(&branches)
}

/// Enumeration oracle for the DP: sums over every valid segmentation
/// explicitly. Guarded to short strings (2^(|y|-1) paths).
pub fn brute_force_marginal(model: &SspgModel, src: &[usize], y: &str) -> Result<f64, ModelError> {
    let n = y.chars().count();
    if n > BRUTE_FORCE_MAX_LEN {
        return Err(ModelError::BruteForceGuard { len: n, max: BRUTE_FORCE_MAX_LEN });
    }
    let mut g = Graph::new(&model.params);
    let mut none = None;
    let enc = model.encode(&mut g, src, None)?;
    let lat = lattice_eval(model, &mut g, &enc, y, &mut none)?;

    let mut paths: Vec<f64> = Vec::new();
    let mut stack: Vec<(usize, f64)> = vec![(0, 0.0)];
    while let Some((k, acc)) = stack.pop() {
        if k == n {
            paths.push(acc);
            continue;
        }
        for j in (k + 1)..=(k + model.max_seg_len).min(n) {
            if crosses_whitespace(&lat.chars, k, j) {
                continue;
            }
            stack.push((j, acc + seg_score_f64(model, &g, &enc, &lat, k, j)));
        }
    }
    let eos = model.chars.end_of_sequence();
    let eos_term = g.value(lat.evals[n].char_logp).data()[eos];
    Ok(logsumexp_slice(&paths) + eos_term)
}

/// Max-product segmentation under the same factors as the marginal. Ties
/// break toward the longer final segment.
pub fn viterbi_segment(model: &SspgModel, src: &[usize], y: &str) -> Result<Vec<String>, ModelError> {
    if y.is_empty() {
        return Err(ModelError::EmptyInput("target string"));
    }
    let mut g = Graph::new(&model.params);
    let mut none = None;
    let enc = model.encode(&mut g, src, None)?;
    let lat = lattice_eval(model, &mut g, &enc, y, &mut none)?;
    let n = lat.chars.len();

    let mut best: Vec<(f64, usize)> = vec![(f64::NEG_INFINITY, 0); n + 1];
    best[0] = (0.0, 0);
    for j in 1..=n {
        // ascending k = longest candidate first, so strict > keeps the
        // longer final segment on ties
        for k in j.saturating_sub(model.max_seg_len)..j {
            if crosses_whitespace(&lat.chars, k, j) {
                continue;
            }
            let score = best[k].0 + seg_score_f64(model, &g, &enc, &lat, k, j);
            if score > best[j].0 {
                best[j] = (score, k);
            }
        }
    }
    let mut segments = Vec::new();
    let mut j = n;
    while j > 0 {
        let k = best[j].1;
        segments.push(segment_of(&lat.chars, k, j));
        j = k;
    }
    segments.reverse();
    Ok(segments)
}

/// One optimizer step over a batch of (flattened source, target text) pairs.
/// Loss is the mean negative log-marginal.
pub fn train_step(
    model: &mut SspgModel,
    batch: &[(Vec<usize>, String)],
    opt: &mut Adam,
    rng: &mut ChaCha8Rng,
    step: usize,
    use_dropout: bool,
) -> Result<f64, ModelError> {
    assert!(!batch.is_empty());
    let mut total = crate::graph::Gradients::zeros(model.params.len());
    let mut loss_sum = 0.0;
    let inv = 1.0 / batch.len() as f64;
    let dropout = if use_dropout { model.dropout } else { 0.0 };
    for (src, y) in batch {
        let mut g = Graph::new(&model.params);
        let enc = {
            let ctx = (dropout > 0.0).then(|| TrainCtx { rng: &mut *rng, dropout });
            model.encode(&mut g, src, ctx)?
        };
        let mut ctx = (dropout > 0.0).then(|| TrainCtx { rng: &mut *rng, dropout });
        let lat = lattice_eval(model, &mut g, &enc, y, &mut ctx)?;
        drop(ctx);
        let (lm, _) = log_marginal_var(model, &mut g, &enc, &lat)?;
        let loss = g.scale(lm, -inv)?;
        let loss_val = g.scalar_value(loss);
        if !loss_val.is_finite() {
            return Err(ModelError::NonFiniteLoss { step, loss: loss_val });
        }
        loss_sum += loss_val;
        g.backward(loss, None)?;
        total.merge(g.grads());
    }
    if !loss_sum.is_finite() {
        return Err(ModelError::NonFiniteLoss { step, loss: loss_sum });
    }
    opt.apply(&mut model.params, &total);
    Ok(loss_sum)
}
