//! Dataset ingestion (JSONL) and a synthetic agglutinative-language
//! generator used for desk-scale end-to-end verification.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, VocabError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn new(subject: &str, relation: &str, object: &str) -> Result<Self, VocabError> {
        let t = Triple {
            subject: subject.trim().to_string(),
            relation: relation.trim().to_string(),
            object: object.trim().to_string(),
        };
        if t.subject.is_empty() {
            return Err(VocabError::EmptyTripleField("subject"));
        }
        if t.relation.is_empty() {
            return Err(VocabError::EmptyTripleField("relation"));
        }
        if t.object.is_empty() {
            return Err(VocabError::EmptyTripleField("object"));
        }
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub references: Vec<String>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl Example {
    pub fn triple(&self) -> Triple {
        Triple {
            subject: self.subject.clone(),
            relation: self.relation.clone(),
            object: self.object.clone(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Gold translated forms for translate-gold entities, when known
    /// (emitted by the synthetic generator).
    pub translations: Option<HashMap<String, String>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn reference_count(&self, split: Split) -> usize {
        self.split(split).map(|e| e.references.len()).sum()
    }

    /// Training pairs: each reference becomes a separate data-text pair.
    pub fn train_pairs(&self) -> Vec<(Triple, String)> {
        self.split(Split::Train)
            .flat_map(|e| e.references.iter().map(move |r| (e.triple(), r.clone())))
            .collect()
    }

    fn parse_line(line: &str, lineno: usize) -> Result<Example, DataError> {
        let ex: Example = serde_json::from_str(line)
            .map_err(|e| DataError::Malformed { line: lineno, reason: e.to_string() })?;
        if ex.subject.trim().is_empty() || ex.relation.trim().is_empty() || ex.object.trim().is_empty()
        {
            return Err(DataError::Malformed { line: lineno, reason: "empty triple field".into() });
        }
        if ex.references.is_empty() || ex.references.iter().any(|r| r.trim().is_empty()) {
            return Err(DataError::Malformed {
                line: lineno,
                reason: "empty reference list or blank reference".into(),
            });
        }
        Ok(ex)
    }

    fn load_file(path: &Path, examples: &mut Vec<Example>) -> Result<(), DataError> {
        let text = fs::read_to_string(path)
            .map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            examples.push(Self::parse_line(line, i + 1)?);
        }
        Ok(())
    }

    /// Load from a single JSONL file or a directory containing
    /// train/valid/test.jsonl (plus optional translations.json).
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let mut examples = Vec::new();
        let mut translations = None;
        if path.is_dir() {
            for name in ["train.jsonl", "valid.jsonl", "test.jsonl"] {
                let p = path.join(name);
                if p.exists() {
                    Self::load_file(&p, &mut examples)?;
                }
            }
            let tpath = path.join("translations.json");
            if tpath.exists() {
                let text = fs::read_to_string(&tpath)
                    .map_err(|e| DataError::Io { path: tpath.display().to_string(), source: e })?;
                translations = Some(
                    serde_json::from_str(&text)
                        .map_err(|e| DataError::Malformed { line: 0, reason: e.to_string() })?,
                );
            }
        } else {
            Self::load_file(path, &mut examples)?;
        }
        if examples.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Dataset { examples, translations })
    }

    /// Write train/valid/test.jsonl (and translations.json) into a directory.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)
            .map_err(|e| DataError::Io { path: dir.display().to_string(), source: e })?;
        for split in [Split::Train, Split::Valid, Split::Test] {
            let mut out = String::new();
            for ex in self.split(split) {
                out.push_str(&serde_json::to_string(ex).expect("serializable example"));
                out.push('\n');
            }
            let p = dir.join(format!("{}.jsonl", split.as_str()));
            fs::write(&p, out).map_err(|e| DataError::Io { path: p.display().to_string(), source: e })?;
        }
        if let Some(tr) = &self.translations {
            let p = dir.join("translations.json");
            fs::write(&p, serde_json::to_string_pretty(tr).unwrap())
                .map_err(|e| DataError::Io { path: p.display().to_string(), source: e })?;
        }
        Ok(())
    }

    /// All text lines of the given split (for vocabulary building).
    pub fn reference_corpus(&self, split: Split) -> Vec<String> {
        self.split(split).flat_map(|e| e.references.iter().cloned()).collect()
    }

    pub fn data_side_corpus(&self, split: Split) -> Vec<String> {
        self.split(split)
            .map(|e| format!("{} {} {}", e.subject, e.relation, e.object))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ta", "ren", "bu", "sha", "ne", "go", "di", "pa", "zu"];

/// Deterministic letter substitution used as the "translation" of subject
/// entities. It is a derangement on the letters the syllable pool uses, so a
/// translated form never equals (or contains) the original name.
fn translate_entity(name: &str) -> String {
    name.chars()
        .map(|c| {
            let lower = c.to_ascii_lowercase();
            let mapped = match lower {
                'a' => 'o',
                'o' => 'u',
                'u' => 'e',
                'e' => 'i',
                'i' => 'a',
                'k' => 'g',
                'g' => 'b',
                'b' => 'd',
                'd' => 'v',
                'l' => 'r',
                'r' => 'l',
                'm' => 'n',
                'n' => 'm',
                't' => 'k',
                's' => 'z',
                'z' => 's',
                'h' => 'f',
                'p' => 't',
                'v' => 'w',
                'w' => 'p',
                other => other,
            };
            if c.is_uppercase() {
                mapped.to_ascii_uppercase()
            } else {
                mapped
            }
        })
        .collect()
}

fn make_name<R: Rng>(rng: &mut R, syllable_count: usize) -> String {
    let mut s = String::new();
    for _ in 0..syllable_count {
        s.push_str(SYLLABLES.choose(rng).unwrap());
    }
    let mut chars = s.chars();
    let first = chars.next().unwrap().to_ascii_uppercase();
    format!("{first}{}", chars.as_str())
}

const RELATIONS: [(&str, &str); 6] = [
    ("leader", "yinkokheli"),
    ("capital", "likomkhulu"),
    ("river", "ngumlambo"),
    ("anthem", "yingoma"),
    ("club", "liqela"),
    ("language", "lulwimi"),
];

/// Generate a copy/translate data-to-text task: objects are copied verbatim
/// into the text with a fused prefix, subjects are "translated" through a
/// fixed letter mapping with a fused prefix. Heldout entities unseen in
/// training are guaranteed on the eval side.
pub fn make_synthetic(seed: u64, n_train: usize, n_eval: usize) -> Dataset {
    assert!(n_train >= 1 && n_eval >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // entity pools: subjects are all seen in training; a dedicated slice of
    // objects is reserved for eval so unseen entities are guaranteed
    let mut subjects: Vec<String> = Vec::new();
    while subjects.len() < 14 {
        let n = make_name(&mut rng, 2);
        if !subjects.contains(&n) {
            subjects.push(n);
        }
    }
    let mut objects: Vec<String> = Vec::new();
    while objects.len() < 60 {
        let words = if rng.gen_bool(0.5) { 1 } else { 2 };
        let n = (0..words).map(|_| make_name(&mut rng, 2)).collect::<Vec<_>>().join(" ");
        if !objects.contains(&n) {
            objects.push(n);
        }
    }
    let (train_objects, heldout_objects) = objects.split_at(40);

    let mut translations: HashMap<String, String> = HashMap::new();
    for s in &subjects {
        translations.insert(s.clone(), translate_entity(s));
    }

    let verbalize = |triple: &Triple, variant: usize| -> String {
        let verb = RELATIONS.iter().find(|(r, _)| *r == triple.relation).unwrap().1;
        let subj_x = translate_entity(&triple.subject);
        match variant % 2 {
            0 => format!("U{} {} yase{}.", triple.object, verb, subj_x),
            _ => format!("{} yase{} ngu{}.", verb, subj_x, triple.object),
        }
    };

    let mut examples = Vec::new();
    for i in 0..n_train {
        let subject = subjects[rng.gen_range(0..subjects.len())].clone();
        let (relation, _) = RELATIONS[rng.gen_range(0..RELATIONS.len())];
        let object = train_objects[rng.gen_range(0..train_objects.len())].clone();
        let triple = Triple::new(&subject, relation, &object).unwrap();
        let reference = verbalize(&triple, i);
        examples.push(Example {
            subject: triple.subject,
            relation: triple.relation,
            object: triple.object,
            references: vec![reference],
            split: Split::Train,
            category: Some(relation.to_string()),
        });
    }

    for i in 0..n_eval {
        let split = if i % 2 == 0 { Split::Valid } else { Split::Test };
        let subject = subjects[rng.gen_range(0..subjects.len())].clone();
        let (relation, _) = RELATIONS[rng.gen_range(0..RELATIONS.len())];
        // most eval objects come from the heldout pool
        let object = if rng.gen_bool(0.8) {
            heldout_objects[rng.gen_range(0..heldout_objects.len())].clone()
        } else {
            train_objects[rng.gen_range(0..train_objects.len())].clone()
        };
        let triple = Triple::new(&subject, relation, &object).unwrap();
        let mut references = vec![verbalize(&triple, i)];
        if split == Split::Test && i % 3 == 0 {
            references.push(verbalize(&triple, i + 1));
        }
        examples.push(Example {
            subject: triple.subject,
            relation: triple.relation,
            object: triple.object,
            references,
            split,
            category: Some(relation.to_string()),
        });
    }

    Dataset { examples, translations: Some(translations) }
}
