//! Acceptance suite: one test per criterion, each ending in a single
//! `criterion N (...): PASS` line (visible with `--nocapture`). A failing
//! criterion fails its test.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sspg::config::Config;
use sspg::corpus::{make_synthetic, Split, Triple};
use sspg::decode::{
    unmixed_beam, unmixed_decode, unmixed_greedy, Component, StepProposals, SubwordCand,
    SubwordStepper,
};
use sspg::error::ModelError;
use sspg::eval;
use sspg::gradcheck::grad_check;
use sspg::graph::Graph;
use sspg::model::{Dims, MixtureMode, ModelKind, PgModel, SspgModel};
use sspg::objective;
use sspg::train::{self, DecoderKind};

fn tiny_sspg(
    corpus: &[String],
    mode: MixtureMode,
    max_seg_len: usize,
    dims: Dims,
    seed: u64,
) -> SspgModel {
    let bpe = sspg::tokenizer::BpeVocab::train(corpus, 2).unwrap();
    let chars = sspg::tokenizer::CharVocab::build(corpus).unwrap();
    let lexicon = sspg::tokenizer::Lexicon::build(corpus, 8, max_seg_len).unwrap();
    SspgModel::new(bpe, chars, lexicon, mode, max_seg_len, dims, 0.0, seed)
}

// -------------------------------------------------------------------------
// 1. DP–oracle equivalence
// -------------------------------------------------------------------------

#[test]
fn criterion_1_dp_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let modes = [MixtureMode::CharOnly, MixtureMode::Lexicon, MixtureMode::LexiconCopy];
    let lens = [1usize, 2, 3, 5];
    for case in 0..200 {
        let alpha_n = rng.gen_range(2..=4usize);
        let alphabet: Vec<char> = ('a'..).take(alpha_n).collect();
        let corpus: Vec<String> = vec![
            alphabet.iter().collect(),
            format!(
                "{} {}",
                alphabet.iter().rev().collect::<String>(),
                alphabet.iter().collect::<String>()
            ),
        ];
        let max_seg_len = lens[rng.gen_range(0..lens.len())];
        let mode = modes[rng.gen_range(0..modes.len())];
        let model = tiny_sspg(&corpus, mode, max_seg_len, Dims { embed: 3, hidden: 4 }, case);

        let y_len = rng.gen_range(1..=8usize);
        let mut y = String::new();
        for i in 0..y_len {
            // occasional interior whitespace exercises the crossing rule
            if i > 0 && i + 1 < y_len && !y.ends_with(' ') && rng.gen_bool(0.15) {
                y.push(' ');
            } else {
                y.push(alphabet[rng.gen_range(0..alpha_n)]);
            }
        }
        let word: String = alphabet.iter().collect();
        let src = model
            .bpe
            .flatten_triple(&Triple::new(&word, &word, &word).unwrap())
            .unwrap();

        let dp = objective::log_marginal(&model, &src, &y).unwrap();
        let oracle = objective::brute_force_marginal(&model, &src, &y).unwrap();
        assert!(
            (dp - oracle).abs() < 1e-6,
            "case {case} (mode {mode:?}, L={max_seg_len}, y={y:?}): dp {dp} vs oracle {oracle}"
        );
    }
    assert!(start.elapsed().as_secs() < 60, "criterion 1 exceeded 1 minute");
    println!("criterion 1 (DP-oracle equivalence, 200 configs < 1e-6): PASS");
}

// -------------------------------------------------------------------------
// 2. Gradient fidelity
// -------------------------------------------------------------------------

#[test]
fn criterion_2_gradient_fidelity() {
    let start = Instant::now();
    let corpus: Vec<String> = vec!["abc ab".into(), "bca cab".into(), "ba ac".into()];
    let model = tiny_sspg(
        &corpus,
        MixtureMode::LexiconCopy,
        3,
        Dims { embed: 3, hidden: 4 },
        5,
    );
    // copy support: target segments occur verbatim on the source side
    let pairs = [
        (
            model.bpe.flatten_triple(&Triple::new("ab", "bca", "cab").unwrap()).unwrap(),
            "cab ab".to_string(),
        ),
        (
            model.bpe.flatten_triple(&Triple::new("ba", "ac", "abc").unwrap()).unwrap(),
            "abc ba".to_string(),
        ),
    ];
    let mut store = model.params.clone();
    let err = grad_check(
        &mut store,
        |p| {
            let mut g = Graph::new(p);
            let mut none = None;
            let mut terms = Vec::new();
            for (src, y) in &pairs {
                let enc = model.encode(&mut g, src, None)?;
                let lat = objective::lattice_eval(&model, &mut g, &enc, y, &mut none)?;
                let (lm, _) = objective::log_marginal_var(&model, &mut g, &enc, &lat)?;
                terms.push(lm);
            }
            let sum = {
                let mut acc = terms[0];
                for t in &terms[1..] {
                    acc = g.add(acc, *t)?;
                }
                acc
            };
            let loss = g.scale(sum, -1.0)?;
            g.backward(loss, None)?;
            Ok((g.scalar_value(loss), g.take_grads()))
        },
        1e-4,
        220,
        42,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative gradient error {err}");
    assert!(start.elapsed().as_secs() < 120, "criterion 2 exceeded 2 minutes");
    println!("criterion 2 (gradient fidelity, {err:.2e} < 1e-4 over 220 coordinates): PASS");
}

// -------------------------------------------------------------------------
// 3. Normalization suite
// -------------------------------------------------------------------------

#[test]
fn criterion_3_normalization_suite() {
    let corpus: Vec<String> = vec!["abc ab".into(), "bca cab".into()];
    for mode in [MixtureMode::CharOnly, MixtureMode::Lexicon, MixtureMode::LexiconCopy] {
        let model = tiny_sspg(&corpus, mode, 3, Dims { embed: 3, hidden: 4 }, 11);
        let src = model
            .bpe
            .flatten_triple(&Triple::new("ab", "bca", "cab").unwrap())
            .unwrap();
        let enc = model.encode_raw(&src).unwrap();
        let mut state = model.char_history_state_raw(&enc, &[]);
        for step in 0..4 {
            let ev = model.eval_position_raw(&enc, &state);
            let attn_sum: f64 = ev.attn.iter().sum();
            assert!((attn_sum - 1.0).abs() < 1e-9, "attention sum {attn_sum}");
            let char_sum: f64 = ev.char_logp.iter().map(|l| l.exp()).sum();
            assert!((char_sum - 1.0).abs() < 1e-9, "char softmax sum {char_sum}");
            if let Some((lg, l1mg)) = ev.gate {
                let s = lg.exp() + l1mg.exp();
                assert!((s - 1.0).abs() < 1e-9, "gate sum {s}");
            }
            if let Some(lex) = &ev.lex_logp {
                let s: f64 = lex.iter().map(|l| l.exp()).sum();
                assert!((s - 1.0).abs() < 1e-9, "lexicon softmax sum {s}");
            }
            if let Some((z0, z1)) = ev.zgate {
                let s = z0.exp() + z1.exp();
                assert!((s - 1.0).abs() < 1e-9, "z gate sum {s}");
            }
            state = model.advance_raw(&state, model.chars.id(['a', 'b', 'c', 'a'][step]));
        }

        // copy support excludes the six delimiters and pad/unk/eos
        for positions in enc.copy_map.values() {
            for &i in positions {
                assert!(!model.bpe.specials.contains(src[i]), "special in copy support");
            }
        }

        // char-path mass over all segments of length <= L is strictly < 1
        // (eos and longer continuations hold the rest)
        let state = model.char_history_state_raw(&enc, &[]);
        let eoseg = model.chars.end_of_segment();
        let mut mass = 0.0;
        let mut stack: Vec<(String, sspg::model::RawState, f64)> =
            vec![(String::new(), state, 0.0)];
        while let Some((prefix, st, acc)) = stack.pop() {
            let ev = model.eval_position_raw(&enc, &st);
            if !prefix.is_empty() {
                mass += (acc + ev.char_logp[eoseg]).exp();
            }
            if prefix.chars().count() >= model.max_seg_len {
                continue;
            }
            for &c in model.chars.chars() {
                if c.is_whitespace() && !prefix.is_empty() {
                    continue;
                }
                let nst = model.advance_raw(&st, model.chars.id(c));
                stack.push((format!("{prefix}{c}"), nst, acc + ev.char_logp[model.chars.id(c)]));
            }
        }
        assert!(mass < 1.0, "char-path segment mass {mass} >= 1");
    }

    // PG mixed step distribution is proper
    let bpe = sspg::tokenizer::BpeVocab::train(&corpus, 2).unwrap();
    let pg = PgModel::new(bpe, Dims { embed: 3, hidden: 4 }, 0.0, 13);
    let src = pg.bpe.flatten_triple(&Triple::new("ab", "bca", "cab").unwrap()).unwrap();
    let enc = pg.encode_raw(&src).unwrap();
    let st = pg.advance_raw(&pg.init_state_raw(&enc), pg.bpe.specials.eos);
    let ev = pg.eval_position_raw(&enc, &st);
    let dist = pg.step_dist_raw(&enc, &ev);
    let s: f64 = dist.iter().sum();
    assert!((s - 1.0).abs() < 1e-9, "PG step distribution sum {s}");

    println!("criterion 3 (normalization suite): PASS");
}

// -------------------------------------------------------------------------
// 4. Decoding invariants
// -------------------------------------------------------------------------

struct TableStepper {
    rows: BTreeMap<String, (Vec<SubwordCand>, f64)>,
}

impl SubwordStepper for TableStepper {
    type State = String;
    fn start(&mut self) -> Result<String, ModelError> {
        Ok(String::new())
    }
    fn propose(&mut self, state: &String, k: usize) -> Result<StepProposals, ModelError> {
        let (cands, eos) = self.rows.get(state).expect("table row");
        let mut out = cands.clone();
        out.sort_by(|a, b| b.logp.total_cmp(&a.logp));
        out.truncate(k);
        Ok(StepProposals { candidates: out, eos_logp: *eos })
    }
    fn advance_text(&mut self, state: &String, text: &str) -> Result<String, ModelError> {
        Ok(format!("{state}{text}"))
    }
}

fn rigged_table() -> TableStepper {
    let cand = |text: &str, lp: f64| SubwordCand {
        text: text.into(),
        component: Component::Gen,
        logp: lp,
    };
    let mut rows = BTreeMap::new();
    rows.insert(String::new(), (vec![cand("a", -0.3), cand("b", -0.5)], -10.0));
    rows.insert("a".to_string(), (vec![cand("y", -4.0)], -3.0));
    rows.insert("b".to_string(), (vec![cand("x", -0.1)], -4.0));
    rows.insert("ay".to_string(), (vec![], -0.5));
    rows.insert("bx".to_string(), (vec![], -0.1));
    TableStepper { rows }
}

#[test]
fn criterion_4_decoding_invariants() {
    // greedy == beam(k=1), byte-identical, across modes and seeds
    let corpus: Vec<String> = vec!["abc ab".into(), "bca cab".into(), "ba ac".into()];
    for mode in [MixtureMode::CharOnly, MixtureMode::Lexicon, MixtureMode::LexiconCopy] {
        for seed in [1, 2, 3] {
            let model = tiny_sspg(&corpus, mode, 3, Dims { embed: 3, hidden: 5 }, seed);
            let src = model
                .bpe
                .flatten_triple(&Triple::new("ab", "bca", "cab").unwrap())
                .unwrap();
            let beam1 = unmixed_decode(&model, &src, 1, 32).unwrap();
            let mut stepper = sspg::decode::SspgStepper::new(&model, &src).unwrap();
            let greedy = unmixed_greedy(&mut stepper, 32).unwrap();
            assert_eq!(greedy.text.as_bytes(), beam1.text.as_bytes());
            assert_eq!(greedy.logscore.to_bits(), beam1.logscore.to_bits());
            assert_eq!(greedy.subwords, beam1.subwords);

            // no length normalization: best score monotone k=1 -> k=2
            let beam2 = unmixed_decode(&model, &src, 2, 32).unwrap();
            assert!(
                beam2.logscore >= beam1.logscore,
                "mode {mode:?} seed {seed}: k=2 {} < k=1 {}",
                beam2.logscore,
                beam1.logscore
            );
        }
    }

    // rigged-model recovery: greedy takes the locally best prefix and ends
    // at -3.3; the beam keeps the runner-up and finds -0.7
    let greedy = unmixed_greedy(&mut rigged_table(), 8).unwrap();
    assert_eq!(greedy.text, "a");
    assert!((greedy.logscore - (-3.3)).abs() < 1e-12);
    let beam = unmixed_beam(&mut rigged_table(), 2, 8).unwrap();
    assert_eq!(beam.text, "bx");
    assert!((beam.logscore - (-0.7)).abs() < 1e-12);

    println!("criterion 4 (decoding invariants): PASS");
}

// -------------------------------------------------------------------------
// 5. Synthetic end-to-end
// -------------------------------------------------------------------------

#[test]
fn criterion_5_synthetic_end_to_end() {
    let start = Instant::now();
    let data = make_synthetic(1, 1200, 60);

    // sanity: the heldout split really contains entities unseen in training
    let train_entities: HashSet<String> = data
        .split(Split::Train)
        .flat_map(|e| [e.subject.clone(), e.object.clone()])
        .collect();
    let unseen = data
        .split(Split::Test)
        .filter(|e| !train_entities.contains(&e.object))
        .count();
    assert!(unseen > 0, "no unseen heldout entities");

    let mut cfg = Config::sspg_defaults();
    cfg.embed_size = 32;
    cfg.hidden_size = 64;
    cfg.bpe_size = 120;
    cfg.lexicon_size = 200;
    cfg.epochs = 15;
    cfg.patience = 15;
    cfg.beam_k = 5;

    // (a) training loss strictly lower at epoch 10 than epoch 1
    let sspg_run = train::train(&cfg, &data).unwrap();
    let l1 = sspg_run.log[0].mean_loss;
    let l10 = sspg_run.log[9].mean_loss;
    assert!(l10 < l1, "loss did not fall: epoch 1 {l1} vs epoch 10 {l10}");

    // (b) copy-gold entity F1 on the heldout split (objects are copy-gold)
    let outs =
        train::decode_split(&sspg_run.model, DecoderKind::Unmixed, &data, Split::Test, 5, 256)
            .unwrap();
    let hyps: Vec<String> = outs.iter().map(|o| o.text.clone()).collect();
    let examples: Vec<_> = data.split(Split::Test).collect();
    let (_, object_report, _) =
        eval::entity_prf(&hyps, &examples, data.translations.as_ref()).unwrap();
    assert!(
        object_report.copy.f1 >= 90.0,
        "copy-gold F1 {:.1} < 90",
        object_report.copy.f1
    );

    // (c) ablation ordering: +copy+unmixed strictly best of the 4 SSPG cells
    let mut ssd_cfg = cfg.clone();
    ssd_cfg.model = ModelKind::Ssd;
    let ssd_run = train::train(&ssd_cfg, &data).unwrap();
    let mut pg_cfg = cfg.clone();
    pg_cfg.model = ModelKind::Pg;
    let pg_run = train::train(&pg_cfg, &data).unwrap();

    let refs: Vec<Vec<String>> =
        data.split(Split::Valid).map(|e| e.references.clone()).collect();
    let score = |model: &sspg::checkpoint::AnyModel, decoder: DecoderKind| -> f64 {
        let outs = train::decode_split(model, decoder, &data, Split::Valid, 5, 256).unwrap();
        let hyps: Vec<String> = outs.into_iter().map(|o| o.text).collect();
        eval::corpus_chrf(&hyps, &refs, 6, 2).unwrap()
    };
    let grid = [
        ("sspg", "unmixed", score(&sspg_run.model, DecoderKind::Unmixed)),
        ("sspg", "dynamic", score(&sspg_run.model, DecoderKind::Dynamic)),
        ("ssd", "unmixed", score(&ssd_run.model, DecoderKind::Unmixed)),
        ("ssd", "dynamic", score(&ssd_run.model, DecoderKind::Dynamic)),
        ("pg", "beam", score(&pg_run.model, DecoderKind::Beam)),
    ];
    assert_eq!(grid.len(), 5);
    let best = grid[0].2;
    for (m, d, s) in &grid[1..4] {
        assert!(
            best > *s,
            "+copy+unmixed ({best:.2}) not strictly above {m}+{d} ({s:.2})"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 900, "criterion 5 exceeded 15 minutes: {elapsed:?}");
    println!(
        "criterion 5 (synthetic end-to-end: loss {l1:.1}->{l10:.1}, copy F1 {:.1}, grid {:?}, {:?}): PASS",
        object_report.copy.f1,
        grid.iter().map(|(m, d, s)| format!("{m}+{d}={s:.1}")).collect::<Vec<_>>(),
        elapsed
    );
}

// -------------------------------------------------------------------------
// 6. Extractive framework fidelity
// -------------------------------------------------------------------------

#[test]
fn criterion_6_extractive_gold_decisions() {
    use eval::Decision;
    let cases: [(&str, &str, &str, Vec<&str>, Decision, Decision); 4] = [
        (
            "South Africa",
            "capital",
            "Cape Town",
            vec!["Ikomkhulu loMzantsi Afrika liKapa."],
            Decision::Translate,
            Decision::Translate,
        ),
        (
            "Christian Panucci",
            "club",
            "Inter Milan",
            vec!["UChristian Panucci udlalela i-Inter Milan."],
            Decision::Copy,
            Decision::Copy,
        ),
        (
            "Ethiopia",
            "leaderName",
            "Mulatu Teshome",
            vec![
                "UMulatu Teshome yinkokheli yase-Ethiopia.",
                "Igama lenkokheli e-Ethiopia nguMulatu Teshome.",
            ],
            Decision::Copy,
            Decision::Copy,
        ),
        (
            "Canada",
            "language",
            "English",
            vec![
                "IsiNgesi lulwimi oluthethwa eKhanada.",
                "Ulwimi lwesiNgesi luthethwa eKhanada.",
            ],
            Decision::Translate,
            Decision::Translate,
        ),
    ];
    for (subj, rel, obj, refs, subj_gold, obj_gold) in cases {
        let triple = Triple::new(subj, rel, obj).unwrap();
        let refs: Vec<String> = refs.into_iter().map(str::to_string).collect();
        let (s, o) = eval::gold_copy_decision(&triple, &refs);
        assert_eq!(s.decision, subj_gold, "subject decision for {subj}");
        assert_eq!(o.decision, obj_gold, "object decision for {obj}");
    }
    println!("criterion 6 (gold copy/translate decisions on the four reference cases): PASS");
}

// -------------------------------------------------------------------------
// 7. Metric oracles
// -------------------------------------------------------------------------

/// Independent chrF implementation straight from the formula: per-order
/// n-gram precision/recall averaged over orders, F-beta, x100.
fn oracle_chrf(hyp: &str, reference: &str, char_n: usize, word_n: usize, beta: f64) -> f64 {
    fn grams(items: &[String], n: usize) -> BTreeMap<Vec<String>, usize> {
        let mut m = BTreeMap::new();
        if items.len() >= n {
            for w in items.windows(n) {
                *m.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        m
    }
    fn pr(h: &BTreeMap<Vec<String>, usize>, r: &BTreeMap<Vec<String>, usize>) -> Option<(f64, f64)> {
        let ht: usize = h.values().sum();
        let rt: usize = r.values().sum();
        if ht == 0 && rt == 0 {
            return None;
        }
        let mut overlap = 0usize;
        for (g, c) in h {
            if let Some(rc) = r.get(g) {
                overlap += (*c).min(*rc);
            }
        }
        let p = if ht == 0 { 0.0 } else { overlap as f64 / ht as f64 };
        let rec = if rt == 0 { 0.0 } else { overlap as f64 / rt as f64 };
        Some((p, rec))
    }
    let hyp_chars: Vec<String> =
        hyp.chars().filter(|c| !c.is_whitespace()).map(String::from).collect();
    let ref_chars: Vec<String> =
        reference.chars().filter(|c| !c.is_whitespace()).map(String::from).collect();
    let hyp_words: Vec<String> = hyp.split_whitespace().map(String::from).collect();
    let ref_words: Vec<String> = reference.split_whitespace().map(String::from).collect();

    let mut ps = Vec::new();
    let mut rs = Vec::new();
    for n in 1..=char_n {
        if let Some((p, r)) = pr(&grams(&hyp_chars, n), &grams(&ref_chars, n)) {
            ps.push(p);
            rs.push(r);
        }
    }
    for n in 1..=word_n {
        if let Some((p, r)) = pr(&grams(&hyp_words, n), &grams(&ref_words, n)) {
            ps.push(p);
            rs.push(r);
        }
    }
    if ps.is_empty() {
        return 0.0;
    }
    let p = ps.iter().sum::<f64>() / ps.len() as f64;
    let r = rs.iter().sum::<f64>() / rs.len() as f64;
    if p == 0.0 && r == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    100.0 * (1.0 + b2) * p * r / (b2 * p + r)
}

/// Independent corpus BLEU-4: clipped modified precision, brevity penalty
/// with closest reference length (shorter on ties).
fn oracle_bleu(hyps: &[&str], refs: &[Vec<&str>]) -> f64 {
    let mut num = [0usize; 4];
    let mut den = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, rs) in hyps.iter().zip(refs) {
        let hw: Vec<&str> = h.split_whitespace().collect();
        hyp_len += hw.len();
        let mut best: Option<usize> = None;
        for r in rs {
            let rl = r.split_whitespace().count();
            best = Some(match best {
                None => rl,
                Some(b) => {
                    let (db, dr) = (b.abs_diff(hw.len()), rl.abs_diff(hw.len()));
                    if dr < db || (dr == db && rl < b) {
                        rl
                    } else {
                        b
                    }
                }
            });
        }
        ref_len += best.unwrap_or(0);
        for n in 1..=4usize {
            if hw.len() < n {
                continue;
            }
            let mut counts: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
            for w in hw.windows(n) {
                *counts.entry(w.to_vec()).or_insert(0) += 1;
            }
            den[n - 1] += hw.len() + 1 - n;
            for (g, c) in counts {
                let max_ref = rs
                    .iter()
                    .map(|r| {
                        let rw: Vec<&str> = r.split_whitespace().collect();
                        if rw.len() < n {
                            0
                        } else {
                            rw.windows(n).filter(|w| *w == g.as_slice()).count()
                        }
                    })
                    .max()
                    .unwrap_or(0);
                num[n - 1] += c.min(max_ref);
            }
        }
    }
    let mut logsum = 0.0;
    for n in 0..4 {
        if num[n] == 0 || den[n] == 0 {
            return 0.0;
        }
        logsum += (num[n] as f64 / den[n] as f64).ln() / 4.0;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * logsum.exp()
}

#[test]
fn criterion_7_metric_oracles() {
    let pairs: [(&str, &str); 10] = [
        ("the cat sat on the mat", "the cat sat on the mat"),
        ("the cat sat", "the cat sat on the mat"),
        ("a quick brown fox", "the quick brown fox jumps"),
        ("abcd", "abce"),
        ("hello world", "world hello"),
        ("uMulatu Teshome yinkokheli", "UMulatu Teshome yinkokheli yase-Ethiopia."),
        ("xyz", "abc"),
        ("one two three four five", "one two three four"),
        ("aa bb cc", "aa bb cc dd"),
        ("likomkhulu yaseSeva nguKasha.", "likomkhulu yaseSeva nguKasha."),
    ];
    for (h, r) in pairs {
        let refs = vec![r.to_string()];
        for (cn, wn, beta) in [(6, 0, 2.0), (6, 2, 2.0), (4, 1, 1.0)] {
            let got = eval::chrf(h, &refs, cn, wn, beta);
            let want = oracle_chrf(h, r, cn, wn, beta);
            assert!(
                (got - want).abs() < 1e-4,
                "chrf({h:?},{r:?},{cn},{wn},{beta}): {got} vs oracle {want}"
            );
        }
        if h == r {
            assert_eq!(eval::chrf_pp(h, &refs), 100.0, "perfect match must be exactly 100");
        }
    }

    // corpus BLEU against the independent oracle, plus the exact-100 case
    let hyps: Vec<String> = pairs.iter().map(|(h, _)| h.to_string()).collect();
    let refs: Vec<Vec<String>> = pairs.iter().map(|(_, r)| vec![r.to_string()]).collect();
    let got = eval::bleu(&hyps, &refs).unwrap();
    let want = oracle_bleu(
        &pairs.iter().map(|(h, _)| *h).collect::<Vec<_>>(),
        &pairs.iter().map(|(_, r)| vec![*r]).collect::<Vec<_>>(),
    );
    assert!((got - want).abs() < 1e-4, "corpus BLEU {got} vs oracle {want}");

    let perfect: Vec<String> = vec!["the cat sat on the mat".into()];
    let perfect_refs: Vec<Vec<String>> = vec![vec!["the cat sat on the mat".into()]];
    assert_eq!(eval::bleu(&perfect, &perfect_refs).unwrap(), 100.0);

    // multi-reference BLEU also matches
    let mhyps = vec!["the fast brown fox".to_string()];
    let mrefs = vec![vec![
        "the quick brown fox".to_string(),
        "the fast brown dog jumps".to_string(),
    ]];
    let got = eval::bleu(&mhyps, &mrefs).unwrap();
    let want = oracle_bleu(
        &["the fast brown fox"],
        &[vec!["the quick brown fox", "the fast brown dog jumps"]],
    );
    assert!((got - want).abs() < 1e-4, "multi-ref BLEU {got} vs {want}");

    println!("criterion 7 (chrF/chrF++/BLEU vs independent oracles to 1e-4): PASS");
}

// -------------------------------------------------------------------------
// 8. BPE determinism, round-trip, delimiter structure
// -------------------------------------------------------------------------

#[test]
fn criterion_8_bpe_determinism_roundtrip_flattening() {
    // a 1k-sentence corpus from the synthetic generator plus the Euro triple
    let data = make_synthetic(8, 700, 300);
    let mut corpus = data.reference_corpus(Split::Train);
    corpus.extend(data.reference_corpus(Split::Valid));
    corpus.extend(data.reference_corpus(Split::Test));
    corpus.truncate(999);
    corpus.push("France currency Euro".to_string());
    assert!(corpus.len() >= 1000, "corpus has {} sentences", corpus.len());

    let a = sspg::tokenizer::BpeVocab::train_to_size(&corpus, 300).unwrap();
    let b = sspg::tokenizer::BpeVocab::train_to_size(&corpus, 300).unwrap();
    assert_eq!(a.merges(), b.merges(), "BPE training not deterministic");
    for line in &corpus {
        let enc_a = a.encode(line);
        assert_eq!(enc_a, b.encode(line), "encoding not deterministic");
        assert_eq!(a.decode(&enc_a), *line, "round-trip failed for {line:?}");
    }

    // <s France s> <r currency r> <o Euro o>
    let triple = Triple::new("France", "currency", "Euro").unwrap();
    let flat = a.flatten_triple(&triple).unwrap();
    let sp = a.specials;
    assert_eq!(flat[0], sp.subj_open);
    let sc = flat.iter().position(|&t| t == sp.subj_close).unwrap();
    let ro = flat.iter().position(|&t| t == sp.rel_open).unwrap();
    let rc = flat.iter().position(|&t| t == sp.rel_close).unwrap();
    let oo = flat.iter().position(|&t| t == sp.obj_open).unwrap();
    let oc = flat.iter().position(|&t| t == sp.obj_close).unwrap();
    assert!(sc < ro && ro < rc && rc < oo && oo < oc && oc == flat.len() - 1);
    assert_eq!(a.decode(&flat[1..sc]), "France");
    assert_eq!(a.decode(&flat[ro + 1..rc]), "currency");
    assert_eq!(a.decode(&flat[oo + 1..oc]), "Euro");
    assert!(flat[1..sc].iter().all(|&t| !sp.contains(t)));

    println!("criterion 8 (BPE determinism, round-trip, delimiter structure): PASS");
}

// -------------------------------------------------------------------------
// 9. Full-data reproduction (manual stretch)
// -------------------------------------------------------------------------

#[test]
fn criterion_9_full_scale_stretch_documented() {
    // Full-corpus training at the published settings needs GPU-scale compute
    // and the released dataset; it is documented in the README as a manual
    // experiment and deliberately not gated here.
    println!("criterion 9 (full-scale reproduction): SKIP (manual stretch, see README)");
}
