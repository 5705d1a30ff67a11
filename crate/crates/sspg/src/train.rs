//! Training loops: vocabulary construction, the segmental and
//! pointer-generator epoch loops with patience-based early stopping on
//! validation chrF++, split decoding, and the ablation grid.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::AnyModel;
use crate::config::Config;
use crate::corpus::{Dataset, Split};
use crate::decode::{self, DecodeOutput, DEFAULT_MAX_CHARS};
use crate::error::ModelError;
use crate::eval;
use crate::graph::Graph;
use crate::model::{Dims, ModelKind, PgModel, SspgModel, TrainCtx};
use crate::objective;
use crate::optim::Adam;
use crate::tokenizer::{BpeVocab, CharVocab, Lexicon};

/// Which decoding algorithm to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Beam over unmixed per-component subword events (segmental models).
    Unmixed,
    /// Character beam over the mixed marginal (segmental models).
    Dynamic,
    /// Token-level beam search (pointer-generator).
    Beam,
}

impl DecoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecoderKind::Unmixed => "unmixed",
            DecoderKind::Dynamic => "dynamic",
            DecoderKind::Beam => "beam",
        }
    }

    /// The natural decoder for a model family.
    pub fn default_for(kind: ModelKind) -> DecoderKind {
        match kind {
            ModelKind::Pg => DecoderKind::Beam,
            _ => DecoderKind::Unmixed,
        }
    }

    fn check(&self, model: &AnyModel) -> Result<(), ModelError> {
        let ok = match self {
            DecoderKind::Beam => matches!(model, AnyModel::Pg(_)),
            _ => matches!(model, AnyModel::Sspg(_)),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::DecoderMismatch {
                decoder: self.as_str().to_string(),
                model: model.kind().as_str().to_string(),
            })
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unmixed" => Ok(DecoderKind::Unmixed),
            "dynamic" => Ok(DecoderKind::Dynamic),
            "beam" => Ok(DecoderKind::Beam),
            other => Err(format!("unknown decoder `{other}` (expected unmixed|dynamic|beam)")),
        }
    }
}

/// Vocabularies derived deterministically from the training split.
pub struct Vocabs {
    pub bpe: BpeVocab,
    pub chars: CharVocab,
    pub lexicon: Lexicon,
}

pub fn build_vocabs(config: &Config, dataset: &Dataset) -> Result<Vocabs, ModelError> {
    let mut corpus = dataset.data_side_corpus(Split::Train);
    corpus.extend(dataset.reference_corpus(Split::Train));
    let bpe = BpeVocab::train_to_size(&corpus, config.bpe_size).map_err(ModelError::Vocab)?;
    let chars = CharVocab::build(&corpus).map_err(ModelError::Vocab)?;
    let refs = dataset.reference_corpus(Split::Train);
    let lexicon = Lexicon::build(&refs, config.lexicon_size, config.max_seg_len)
        .map_err(ModelError::Vocab)?;
    Ok(Vocabs { bpe, chars, lexicon })
}

pub fn new_model(config: &Config, vocabs: Vocabs) -> AnyModel {
    let dims = Dims { embed: config.embed_size, hidden: config.hidden_size };
    match config.model {
        ModelKind::Pg => {
            AnyModel::Pg(PgModel::new(vocabs.bpe, dims, config.dropout, config.seed))
        }
        kind => AnyModel::Sspg(SspgModel::new(
            vocabs.bpe,
            vocabs.chars,
            vocabs.lexicon,
            kind.mixture_mode(),
            config.max_seg_len,
            dims,
            config.dropout,
            config.seed,
        )),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_chrf_pp: f64,
}

pub struct TrainResult {
    pub model: AnyModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// One optimizer step for the pointer-generator: mean token-level NLL of
/// BPE(reference)+eos, teacher-forced from an eos start token.
pub fn pg_train_step(
    model: &mut PgModel,
    batch: &[(Vec<usize>, String)],
    opt: &mut Adam,
    rng: &mut ChaCha8Rng,
    step: usize,
    use_dropout: bool,
) -> Result<f64, ModelError> {
    assert!(!batch.is_empty());
    let eos = model.bpe.specials.eos;
    let mut total = crate::graph::Gradients::zeros(model.params.len());
    let mut loss_sum = 0.0;
    let inv = 1.0 / batch.len() as f64;
    let dropout = if use_dropout { model.dropout } else { 0.0 };
    for (src, y) in batch {
        let mut targets = model.bpe.encode(y);
        targets.push(eos);
        let mut g = Graph::new(&model.params);
        let enc = {
            let ctx = (dropout > 0.0).then(|| TrainCtx { rng: &mut *rng, dropout });
            model.encode(&mut g, src, ctx)?
        };
        let mut ctx = (dropout > 0.0).then(|| TrainCtx { rng: &mut *rng, dropout });
        let mut state = model.advance(&mut g, model.init_state(&enc), eos, &mut ctx)?;
        let mut terms = Vec::with_capacity(targets.len());
        for (i, &tok) in targets.iter().enumerate() {
            let ev = model.eval_position(&mut g, &enc, state, &mut ctx)?;
            terms.push(model.target_logprob(&mut g, &enc, &ev, tok)?);
            if i + 1 < targets.len() {
                state = model.advance(&mut g, state, tok, &mut ctx)?;
            }
        }
        drop(ctx);
        let mut lm = terms[0];
        for t in &terms[1..] {
            lm = g.add(lm, *t)?;
        }
        let loss = g.scale(lm, -inv / targets.len() as f64)?;
        let loss_val = g.scalar_value(loss);
        if !loss_val.is_finite() {
            return Err(ModelError::NonFiniteLoss { step, loss: loss_val });
        }
        loss_sum += loss_val;
        g.backward(loss, None)?;
        total.merge(g.grads());
    }
    opt.apply(&mut model.params, &total);
    Ok(loss_sum)
}

/// Decode one flattened source with the given decoder.
pub fn decode_one(
    model: &AnyModel,
    decoder: DecoderKind,
    src: &[usize],
    k: usize,
    max_chars: usize,
) -> Result<DecodeOutput, ModelError> {
    decoder.check(model)?;
    match (model, decoder) {
        (AnyModel::Sspg(m), DecoderKind::Unmixed) => decode::unmixed_decode(m, src, k, max_chars),
        (AnyModel::Sspg(m), DecoderKind::Dynamic) => decode::dynamic_beam(m, src, k, max_chars),
        (AnyModel::Pg(m), DecoderKind::Beam) => decode::pg_beam(m, src, k, max_chars),
        _ => unreachable!("checked above"),
    }
}

fn bpe_of(model: &AnyModel) -> &BpeVocab {
    match model {
        AnyModel::Sspg(m) => &m.bpe,
        AnyModel::Pg(m) => &m.bpe,
    }
}

/// Decode every example of a split, in corpus order.
pub fn decode_split(
    model: &AnyModel,
    decoder: DecoderKind,
    dataset: &Dataset,
    split: Split,
    k: usize,
    max_chars: usize,
) -> Result<Vec<DecodeOutput>, ModelError> {
    decoder.check(model)?;
    let bpe = bpe_of(model);
    let mut out = Vec::new();
    for ex in dataset.split(split) {
        let src = bpe.flatten_triple(&ex.triple()).map_err(ModelError::Vocab)?;
        out.push(decode_one(model, decoder, &src, k, max_chars)?);
    }
    Ok(out)
}

fn validation_chrf_pp(model: &AnyModel, dataset: &Dataset) -> Result<f64, ModelError> {
    if dataset.count(Split::Valid) == 0 {
        return Ok(0.0);
    }
    let decoder = DecoderKind::default_for(model.kind());
    let outs = decode_split(model, decoder, dataset, Split::Valid, 1, DEFAULT_MAX_CHARS)?;
    let hyps: Vec<String> = outs.into_iter().map(|o| o.text).collect();
    let refs: Vec<Vec<String>> =
        dataset.split(Split::Valid).map(|e| e.references.clone()).collect();
    eval::corpus_chrf(&hyps, &refs, 6, 2)
}

fn snapshot(model: &AnyModel) -> crate::graph::ParamStore {
    match model {
        AnyModel::Sspg(m) => m.params.clone(),
        AnyModel::Pg(m) => m.params.clone(),
    }
}

fn restore(model: &mut AnyModel, params: crate::graph::ParamStore) {
    match model {
        AnyModel::Sspg(m) => m.params = params,
        AnyModel::Pg(m) => m.params = params,
    }
}

/// Full training run: shuffled mini-batches, Adam, per-epoch validation
/// chrF++ with greedy decoding, best-checkpoint restore, early stopping
/// after `patience` epochs without improvement.
pub fn train(config: &Config, dataset: &Dataset) -> Result<TrainResult, ModelError> {
    config.validate().map_err(ModelError::Checkpoint)?;
    let vocabs = build_vocabs(config, dataset)?;
    let mut model = new_model(config, vocabs);
    let bpe = bpe_of(&model);

    let mut pairs: Vec<(Vec<usize>, String)> = Vec::new();
    for (triple, reference) in dataset.train_pairs() {
        pairs.push((bpe.flatten_triple(&triple).map_err(ModelError::Vocab)?, reference));
    }
    if pairs.is_empty() {
        return Err(ModelError::EmptyInput("training pairs"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = match &model {
        AnyModel::Sspg(m) => Adam::new(&m.params, config.lr),
        AnyModel::Pg(m) => Adam::new(&m.params, config.lr),
    };

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, crate::graph::ParamStore)> = None;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(Vec<usize>, String)> =
                chunk.iter().map(|&i| pairs[i].clone()).collect();
            step += 1;
            let batch_loss = match &mut model {
                AnyModel::Sspg(m) => {
                    objective::train_step(m, &batch, &mut opt, &mut rng, step, true)?
                }
                AnyModel::Pg(m) => pg_train_step(m, &batch, &mut opt, &mut rng, step, true)?,
            };
            loss_total += batch_loss * batch.len() as f64;
        }
        let mean_loss = loss_total / pairs.len() as f64;
        let valid_chrf_pp = validation_chrf_pp(&model, dataset)?;
        log.push(EpochLog { epoch, mean_loss, valid_chrf_pp });

        let improved = best.as_ref().map(|(b, _, _)| valid_chrf_pp > *b).unwrap_or(true);
        if improved {
            best = Some((valid_chrf_pp, epoch, snapshot(&model)));
        } else if let Some((_, best_epoch, _)) = &best {
            if epoch - best_epoch >= config.patience {
                break;
            }
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    restore(&mut model, params);
    Ok(TrainResult { model, log, best_epoch })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: ModelKind,
    pub decoder: DecoderKind,
    pub chrf_pp: f64,
    pub bleu: f64,
}

/// The five-cell grid: the pointer-generator with beam search, and each
/// segmental variant decoded both ways. Evaluated on the validation split.
pub fn ablation_grid(base: &Config, dataset: &Dataset) -> Result<Vec<AblationRow>, ModelError> {
    let refs: Vec<Vec<String>> =
        dataset.split(Split::Valid).map(|e| e.references.clone()).collect();
    let mut rows = Vec::new();
    for kind in [ModelKind::Pg, ModelKind::Ssd, ModelKind::Sspg] {
        let mut cfg = base.clone();
        cfg.model = kind;
        let result = train(&cfg, dataset)?;
        let decoders: &[DecoderKind] = match kind {
            ModelKind::Pg => &[DecoderKind::Beam],
            _ => &[DecoderKind::Unmixed, DecoderKind::Dynamic],
        };
        for &decoder in decoders {
            let outs = decode_split(
                &result.model,
                decoder,
                dataset,
                Split::Valid,
                cfg.beam_k,
                DEFAULT_MAX_CHARS,
            )?;
            let hyps: Vec<String> = outs.into_iter().map(|o| o.text).collect();
            rows.push(AblationRow {
                model: kind,
                decoder,
                chrf_pp: eval::corpus_chrf(&hyps, &refs, 6, 2)?,
                bleu: eval::bleu(&hyps, &refs)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::make_synthetic;

    fn tiny_config(kind: ModelKind) -> Config {
        let mut cfg = Config::defaults_for(kind);
        cfg.embed_size = 8;
        cfg.hidden_size = 8;
        cfg.bpe_size = 40;
        cfg.lexicon_size = 40;
        cfg.epochs = 1;
        cfg.batch_size = 4;
        cfg.dropout = 0.0;
        cfg
    }

    #[test]
    fn decoder_model_compatibility_is_enforced() {
        let data = make_synthetic(1, 8, 4);
        let cfg = tiny_config(ModelKind::Pg);
        let vocabs = build_vocabs(&cfg, &data).unwrap();
        let model = new_model(&cfg, vocabs);
        let err = decode_split(&model, DecoderKind::Unmixed, &data, Split::Valid, 1, 16)
            .unwrap_err();
        assert!(err.to_string().contains("unmixed"), "{err}");
        let cfg = tiny_config(ModelKind::Sspg);
        let vocabs = build_vocabs(&cfg, &data).unwrap();
        let model = new_model(&cfg, vocabs);
        assert!(decode_split(&model, DecoderKind::Beam, &data, Split::Valid, 1, 16).is_err());
    }

    #[test]
    fn zero_lr_training_leaves_parameters_at_init() {
        let data = make_synthetic(2, 6, 2);
        let mut cfg = tiny_config(ModelKind::Ssd);
        cfg.lr = 0.0;
        let result = train(&cfg, &data).unwrap();
        let vocabs = build_vocabs(&cfg, &data).unwrap();
        let init = new_model(&cfg, vocabs);
        let (AnyModel::Sspg(a), AnyModel::Sspg(b)) = (&result.model, &init) else {
            panic!("expected segmental models")
        };
        for (name, t) in a.params.iter() {
            let other = b.params.get(name).unwrap();
            for (x, y) in t.data().iter().zip(other.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "param {name} moved");
            }
        }
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let data = make_synthetic(3, 6, 2);
        let cfg = tiny_config(ModelKind::Sspg);
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.best_epoch, b.best_epoch);
        for (la, lb) in a.log.iter().zip(&b.log) {
            assert_eq!(la.mean_loss.to_bits(), lb.mean_loss.to_bits());
            assert_eq!(la.valid_chrf_pp.to_bits(), lb.valid_chrf_pp.to_bits());
        }
    }

    #[test]
    fn pg_loss_decreases_on_a_tiny_set() {
        let data = make_synthetic(4, 8, 2);
        let mut cfg = tiny_config(ModelKind::Pg);
        cfg.epochs = 6;
        cfg.patience = 6;
        let result = train(&cfg, &data).unwrap();
        let first = result.log.first().unwrap().mean_loss;
        let last = result.log.last().unwrap().mean_loss;
        assert!(last < first, "PG loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn ablation_grid_covers_all_five_cells() {
        let data = make_synthetic(5, 6, 2);
        let cfg = tiny_config(ModelKind::Sspg);
        let rows = ablation_grid(&cfg, &data).unwrap();
        let cells: Vec<(&str, &str)> = rows
            .iter()
            .map(|r| (r.model.as_str(), r.decoder.as_str()))
            .collect();
        assert_eq!(
            cells,
            vec![
                ("pg", "beam"),
                ("ssd", "unmixed"),
                ("ssd", "dynamic"),
                ("sspg", "unmixed"),
                ("sspg", "dynamic"),
            ]
        );
        for row in &rows {
            assert!(row.chrf_pp.is_finite() && (0.0..=100.0).contains(&row.chrf_pp));
            assert!(row.bleu.is_finite() && (0.0..=100.0).contains(&row.bleu));
        }
    }
}
