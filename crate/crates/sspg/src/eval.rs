//! Surface metrics (chrF, chrF++, BLEU) and the extractive evaluation
//! framework: gold copy/translate decisions, entity precision/recall/F1,
//! and a character n-gram relation classifier standing in for relation
//! accuracy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{Dataset, Example, Split, Triple};
use crate::error::ModelError;

// ---------------------------------------------------------------------------
// chrF / chrF++
// ---------------------------------------------------------------------------

fn char_ngrams(text: &str, n: usize) -> HashMap<Vec<char>, usize> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

fn word_ngrams(text: &str, n: usize) -> HashMap<Vec<String>, usize> {
    let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let mut counts = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

fn overlap<K: std::hash::Hash + Eq>(a: &HashMap<K, usize>, b: &HashMap<K, usize>) -> (usize, usize, usize) {
    let matches: usize = a.iter().map(|(k, c)| (*c).min(b.get(k).copied().unwrap_or(0))).sum();
    (matches, a.values().sum(), b.values().sum())
}

fn chrf_single(hyp: &str, reference: &str, char_n: usize, word_n: usize, beta: f64) -> f64 {
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let mut push = |matches: usize, hyp_total: usize, ref_total: usize| {
        if hyp_total == 0 && ref_total == 0 {
            return; // order carries no n-grams on either side
        }
        precisions.push(if hyp_total == 0 { 0.0 } else { matches as f64 / hyp_total as f64 });
        recalls.push(if ref_total == 0 { 0.0 } else { matches as f64 / ref_total as f64 });
    };
    for n in 1..=char_n {
        let (m, h, r) = overlap(&char_ngrams(hyp, n), &char_ngrams(reference, n));
        push(m, h, r);
    }
    for n in 1..=word_n {
        let (m, h, r) = overlap(&word_ngrams(hyp, n), &word_ngrams(reference, n));
        push(m, h, r);
    }
    if precisions.is_empty() {
        return 0.0;
    }
    let p: f64 = precisions.iter().sum::<f64>() / precisions.len() as f64;
    let r: f64 = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let b2 = beta * beta;
    if p == 0.0 && r == 0.0 {
        return 0.0;
    }
    100.0 * (1.0 + b2) * p * r / (b2 * p + r)
}

/// Sentence chrF: character n-gram F-beta averaged over orders 1..=char_n
/// (plus word orders 1..=word_n for chrF++). Multi-reference = max over
/// references.
pub fn chrf(hyp: &str, refs: &[String], char_n: usize, word_n: usize, beta: f64) -> f64 {
    assert!(!refs.is_empty(), "chrf needs at least one reference");
    refs.iter()
        .map(|r| chrf_single(hyp, r, char_n, word_n, beta))
        .fold(0.0, f64::max)
}

/// chrF++ (char 1..6 and word 1..2, beta=2).
pub fn chrf_pp(hyp: &str, refs: &[String]) -> f64 {
    chrf(hyp, refs, 6, 2, 2.0)
}

/// Corpus score: arithmetic mean of sentence scores.
pub fn corpus_chrf(hyps: &[String], refs: &[Vec<String>], char_n: usize, word_n: usize) -> Result<f64, ModelError> {
    if hyps.len() != refs.len() {
        return Err(ModelError::Misaligned { hyps: hyps.len(), refs: refs.len() });
    }
    if hyps.is_empty() {
        return Err(ModelError::EmptyInput("chrF corpus"));
    }
    let total: f64 = hyps.iter().zip(refs).map(|(h, r)| chrf(h, r, char_n, word_n, 2.0)).sum();
    Ok(total / hyps.len() as f64)
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

/// Corpus BLEU-4 with brevity penalty; multi-reference uses clipped counts
/// against the maximum reference count and the closest (ties: shorter)
/// reference length.
pub fn bleu(hyps: &[String], refs: &[Vec<String>]) -> Result<f64, ModelError> {
    if hyps.len() != refs.len() {
        return Err(ModelError::Misaligned { hyps: hyps.len(), refs: refs.len() });
    }
    if hyps.is_empty() {
        return Err(ModelError::EmptyInput("BLEU corpus"));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, rs) in hyps.iter().zip(refs) {
        assert!(!rs.is_empty(), "BLEU needs at least one reference per hypothesis");
        let htoks: Vec<&str> = hyp.split_whitespace().collect();
        hyp_len += htoks.len();
        let closest = rs
            .iter()
            .map(|r| r.split_whitespace().count())
            .min_by_key(|&l| ((l as i64 - htoks.len() as i64).abs(), l))
            .unwrap();
        ref_len += closest;
        for n in 1..=4usize {
            if htoks.len() < n {
                continue;
            }
            let mut hcounts: HashMap<&[&str], usize> = HashMap::new();
            for w in htoks.windows(n) {
                *hcounts.entry(w).or_insert(0) += 1;
            }
            totals[n - 1] += htoks.len() + 1 - n;
            for (gram, c) in hcounts {
                let best_ref = rs
                    .iter()
                    .map(|r| {
                        let rtoks: Vec<&str> = r.split_whitespace().collect();
                        if rtoks.len() < n {
                            0
                        } else {
                            rtoks.windows(n).filter(|w| *w == gram).count()
                        }
                    })
                    .max()
                    .unwrap_or(0);
                matches[n - 1] += c.min(best_ref);
            }
        }
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        if totals[n] == 0 || matches[n] == 0 {
            return Ok(0.0);
        }
        log_p += (matches[n] as f64 / totals[n] as f64).ln();
    }
    let bp = if hyp_len < ref_len && hyp_len > 0 {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * (log_p / 4.0).exp())
}

// ---------------------------------------------------------------------------
// Extractive evaluation
// ---------------------------------------------------------------------------

/// NFC normalization plus whitespace collapsing; matching is case-sensitive.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn contains(haystack: &str, needle: &str) -> bool {
    normalize_text(haystack).contains(&normalize_text(needle))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Copy,
    Translate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CopyDecision {
    pub decision: Decision,
    /// Index of the first reference containing the entity, for copy.
    pub matched_reference_index: Option<usize>,
}

fn decide(entity: &str, references: &[String]) -> CopyDecision {
    for (i, r) in references.iter().enumerate() {
        if contains(r, entity) {
            return CopyDecision { decision: Decision::Copy, matched_reference_index: Some(i) };
        }
    }
    CopyDecision { decision: Decision::Translate, matched_reference_index: None }
}

/// Gold copy/translate decision per entity role: copy iff the entity string
/// occurs as a substring (after NFC normalization and whitespace collapsing;
/// case-sensitive) in at least one reference.
pub fn gold_copy_decision(triple: &Triple, references: &[String]) -> (CopyDecision, CopyDecision) {
    assert!(!references.is_empty(), "gold_copy_decision needs references");
    (decide(&triple.subject, references), decide(&triple.object, references))
}

/// Gold translated form of an entity: exact table lookup when the dataset
/// provides one; otherwise a longest-common-substring heuristic over the
/// references (flagged heuristic — only used for real data without tables).
pub fn translated_form(
    entity: &str,
    references: &[String],
    translations: Option<&HashMap<String, String>>,
) -> Option<String> {
    if let Some(t) = translations {
        if let Some(form) = t.get(entity) {
            return Some(form.clone());
        }
    }
    if references.len() < 2 {
        return None;
    }
    let a = normalize_text(&references[0]);
    let mut best = String::new();
    let a_chars: Vec<char> = a.chars().collect();
    for i in 0..a_chars.len() {
        for j in (i + 4).max(i + best.chars().count() + 1)..=a_chars.len() {
            let cand: String = a_chars[i..j].iter().collect();
            if references[1..].iter().all(|r| contains(r, &cand)) && !cand.contains(entity) {
                best = cand;
            }
        }
    }
    if best.chars().count() >= 4 {
        Some(best.trim().to_string())
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, asserted: usize, gold: usize) -> Prf {
        let p = if asserted == 0 { 0.0 } else { 100.0 * tp as f64 / asserted as f64 };
        let r = if gold == 0 { 0.0 } else { 100.0 * tp as f64 / gold as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf { p, r, f1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoleReport {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub copy: Prf,
    pub translate: Prf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerExample {
    pub subject_gold: Decision,
    pub subject_correct: bool,
    pub object_gold: Decision,
    pub object_correct: bool,
    pub relation_pred: String,
    pub relation_correct: bool,
}

struct RoleCounts {
    tp_copy: usize,
    assert_copy: usize,
    gold_copy: usize,
    tp_translate: usize,
    assert_translate: usize,
    gold_translate: usize,
}

impl RoleCounts {
    fn new() -> Self {
        RoleCounts {
            tp_copy: 0,
            assert_copy: 0,
            gold_copy: 0,
            tp_translate: 0,
            assert_translate: 0,
            gold_translate: 0,
        }
    }

    /// Returns whether this generation handled the entity correctly.
    fn observe(
        &mut self,
        generation: &str,
        entity: &str,
        gold: Decision,
        gold_form: Option<&str>,
    ) -> bool {
        let asserts_copy = contains(generation, entity);
        let asserts_translate = match gold_form {
            Some(form) => contains(generation, form) && !asserts_copy,
            None => false,
        };
        if asserts_copy {
            self.assert_copy += 1;
        }
        if asserts_translate {
            self.assert_translate += 1;
        }
        match gold {
            Decision::Copy => {
                self.gold_copy += 1;
                if asserts_copy {
                    self.tp_copy += 1;
                    return true;
                }
                false
            }
            Decision::Translate => {
                self.gold_translate += 1;
                if asserts_translate {
                    self.tp_translate += 1;
                    return true;
                }
                false
            }
        }
    }

    fn report(&self) -> RoleReport {
        let copy = Prf::from_counts(self.tp_copy, self.assert_copy, self.gold_copy);
        let translate =
            Prf::from_counts(self.tp_translate, self.assert_translate, self.gold_translate);
        let combined = Prf::from_counts(
            self.tp_copy + self.tp_translate,
            self.assert_copy + self.assert_translate,
            self.gold_copy + self.gold_translate,
        );
        RoleReport { p: combined.p, r: combined.r, f1: combined.f1, copy, translate }
    }
}

/// Entity precision/recall/F1 per role. A generation handles a copy-gold
/// entity correctly when the entity string appears in it; a translate-gold
/// entity when the gold translated form appears and the raw entity does not.
pub fn entity_prf(
    generations: &[String],
    examples: &[&Example],
    translations: Option<&HashMap<String, String>>,
) -> Result<(RoleReport, RoleReport, Vec<(Decision, bool, Decision, bool)>), ModelError> {
    if generations.len() != examples.len() {
        return Err(ModelError::Misaligned { hyps: generations.len(), refs: examples.len() });
    }
    let mut subj = RoleCounts::new();
    let mut obj = RoleCounts::new();
    let mut per = Vec::with_capacity(examples.len());
    for (gen, ex) in generations.iter().zip(examples) {
        let (sd, od) = gold_copy_decision(&ex.triple(), &ex.references);
        let s_form = translated_form(&ex.subject, &ex.references, translations);
        let o_form = translated_form(&ex.object, &ex.references, translations);
        let s_ok = subj.observe(gen, &ex.subject, sd.decision, s_form.as_deref());
        let o_ok = obj.observe(gen, &ex.object, od.decision, o_form.as_deref());
        per.push((sd.decision, s_ok, od.decision, o_ok));
    }
    Ok((subj.report(), obj.report(), per))
}

// ---------------------------------------------------------------------------
// Relation classifier
// ---------------------------------------------------------------------------

const CLASSIFIER_NGRAM_MAX: usize = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelationClassifier {
    classes: Vec<String>,
    features: HashMap<String, usize>,
    /// (num_classes × num_features) weight matrix, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn text_ngrams(text: &str) -> Vec<String> {
    let norm = normalize_text(text);
    let chars: Vec<char> = norm.chars().collect();
    let mut grams = Vec::new();
    for n in 1..=CLASSIFIER_NGRAM_MAX {
        if chars.len() >= n {
            for w in chars.windows(n) {
                grams.push(w.iter().collect());
            }
        }
    }
    grams
}

impl RelationClassifier {
    fn featurize(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.features.len()];
        for gram in text_ngrams(text) {
            if let Some(&i) = self.features.get(&gram) {
                v[i] += 1.0;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }

    pub fn predict(&self, text: &str) -> &str {
        let x = self.featurize(text);
        let d = self.features.len();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, class_row) in self.weights.chunks(d).enumerate() {
            let score: f64 = class_row.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() + self.bias[c];
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        &self.classes[best]
    }
}

/// Multinomial logistic regression over character n-gram (1..4) count
/// features, L2-regularized, trained by full-batch gradient descent.
pub fn train_relation_classifier(
    texts: &[String],
    labels: &[String],
) -> Result<RelationClassifier, ModelError> {
    if texts.len() != labels.len() {
        return Err(ModelError::Misaligned { hyps: texts.len(), refs: labels.len() });
    }
    if texts.is_empty() {
        return Err(ModelError::EmptyInput("classifier training set"));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ModelError::SingleClass(classes.len()));
    }
    let mut features: HashMap<String, usize> = HashMap::new();
    let mut ordered: Vec<String> = texts.iter().flat_map(|t| text_ngrams(t)).collect();
    ordered.sort();
    ordered.dedup();
    for (i, g) in ordered.into_iter().enumerate() {
        features.insert(g, i);
    }
    let d = features.len();
    let c = classes.len();
    let mut clf = RelationClassifier {
        classes: classes.clone(),
        features,
        weights: vec![0.0; c * d],
        bias: vec![0.0; c],
    };
    let xs: Vec<Vec<f64>> = texts.iter().map(|t| clf.featurize(t)).collect();
    if xs.windows(2).all(|w| w[0] == w[1]) && xs.len() > 1 {
        return Err(ModelError::DegenerateFeatures);
    }
    let ys: Vec<usize> = labels
        .iter()
        .map(|l| classes.iter().position(|c| c == l).unwrap())
        .collect();

    let lr = 1.0;
    let l2 = 1e-4;
    let n = xs.len() as f64;
    for _ in 0..300 {
        let mut gw = vec![0.0; c * d];
        let mut gb = vec![0.0; c];
        for (x, &y) in xs.iter().zip(&ys) {
            let mut logits: Vec<f64> = (0..c)
                .map(|k| {
                    clf.weights[k * d..(k + 1) * d]
                        .iter()
                        .zip(x)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
                        + clf.bias[k]
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for l in &mut logits {
                *l = (*l - m).exp() / z;
            }
            for k in 0..c {
                let err = logits[k] - if k == y { 1.0 } else { 0.0 };
                gb[k] += err / n;
                for (gwi, xi) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *gwi += err * xi / n;
                }
            }
        }
        for (w, g) in clf.weights.iter_mut().zip(&gw) {
            *w -= lr * (g + l2 * *w);
        }
        for (b, g) in clf.bias.iter_mut().zip(&gb) {
            *b -= lr * g;
        }
    }
    Ok(clf)
}

/// Fraction (×100) of generations whose predicted relation matches gold.
pub fn relation_accuracy(clf: &RelationClassifier, generations: &[String], gold: &[String]) -> f64 {
    assert_eq!(generations.len(), gold.len());
    if generations.is_empty() {
        return 0.0;
    }
    let correct = generations
        .iter()
        .zip(gold)
        .filter(|(g, r)| clf.predict(g) == r.as_str())
        .count();
    100.0 * correct as f64 / generations.len() as f64
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub chrf: f64,
    pub chrf_pp: f64,
    pub subject: RoleReport,
    pub object: RoleReport,
    pub relation_acc: f64,
    pub per_example: Vec<PerExample>,
}

/// Full evaluation of generations against one split of a dataset: surface
/// metrics, extractive entity scores, and relation accuracy from a
/// classifier trained on the training references.
pub fn evaluate_all(
    dataset: &Dataset,
    split: Split,
    generations: &[String],
) -> Result<EvalReport, ModelError> {
    let examples: Vec<&Example> = dataset.split(split).collect();
    if generations.len() != examples.len() {
        return Err(ModelError::Misaligned { hyps: generations.len(), refs: examples.len() });
    }
    if examples.is_empty() {
        return Err(ModelError::EmptyInput("evaluation split"));
    }
    let refs: Vec<Vec<String>> = examples.iter().map(|e| e.references.clone()).collect();
    let gens: Vec<String> = generations.to_vec();
    let bleu_score = bleu(&gens, &refs)?;
    let chrf_score = corpus_chrf(&gens, &refs, 6, 0)?;
    let chrfpp_score = corpus_chrf(&gens, &refs, 6, 2)?;
    let (subject, object, per_roles) =
        entity_prf(&gens, &examples, dataset.translations.as_ref())?;

    let train_texts: Vec<String> = dataset.reference_corpus(Split::Train);
    let train_labels: Vec<String> = dataset
        .split(Split::Train)
        .flat_map(|e| e.references.iter().map(move |_| e.relation.clone()))
        .collect();
    let clf = train_relation_classifier(&train_texts, &train_labels)?;
    let gold_rel: Vec<String> = examples.iter().map(|e| e.relation.clone()).collect();
    let relation_acc = relation_accuracy(&clf, &gens, &gold_rel);

    let per_example = per_roles
        .into_iter()
        .zip(&gens)
        .zip(&gold_rel)
        .map(|(((sg, sc, og, oc), gen), gold)| {
            let pred = clf.predict(gen).to_string();
            let relation_correct = pred == *gold;
            PerExample {
                subject_gold: sg,
                subject_correct: sc,
                object_gold: og,
                object_correct: oc,
                relation_pred: pred,
                relation_correct,
            }
        })
        .collect();

    Ok(EvalReport {
        bleu: bleu_score,
        chrf: chrf_score,
        chrf_pp: chrfpp_score,
        subject,
        object,
        relation_acc,
        per_example,
    })
}
