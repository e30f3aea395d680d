//! Labeled-corpus I/O, label sets, and vocabularies.
//!
//! The on-disk format is two-column tab-separated text: `form<TAB>label`,
//! one token per line, a blank line between sentences, lines starting with
//! `#` ignored. Raw (unlabeled) files carry one column. Input is UTF-8 with
//! `\n` line endings; a trailing `\r` is stripped.
//!
//! The corpus layer is lossless: no lowercasing or Unicode normalization
//! happens here. Templates decide their own normalization.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense 0-based label identifier.
pub type LabelId = usize;

/// A single token: surface form plus an optional gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub gold_label: Option<LabelId>,
}

/// A non-empty token sequence; the unit of prediction context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Bijective mapping between label strings and dense 0-based ids.
///
/// Label ids follow first-occurrence order in the training file, so runs
/// are deterministic given a fixed file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, LabelId>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a label set from an explicit ordered list of distinct names.
    pub fn from_labels<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = Self::new();
        for name in names {
            let name = name.into();
            if set.index.contains_key(&name) {
                return Err(Error::Label(format!("duplicate label {name:?}")));
            }
            set.intern(&name);
        }
        Ok(set)
    }

    /// Returns the id for `label`, allocating the next dense id if unseen.
    pub fn intern(&mut self, label: &str) -> LabelId {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<LabelId> {
        self.index.get(label).copied()
    }

    /// Label string for `id`. Panics on an out-of-range id.
    pub fn name(&self, id: LabelId) -> &str {
        &self.labels[id]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }
}

/// The set of surface forms observed in the training split.
///
/// A token counts as "unknown" at evaluation time iff its form is not a
/// member; membership is exact string equality.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    forms: HashSet<String>,
}

impl Vocabulary {
    pub fn contains(&self, form: &str) -> bool {
        self.forms.contains(form)
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn insert(&mut self, form: &str) {
        self.forms.insert(form.to_string());
    }

    /// Forms in lexicographic order (used for deterministic serialization).
    pub fn sorted_forms(&self) -> Vec<&str> {
        let mut forms: Vec<&str> = self.forms.iter().map(String::as_str).collect();
        forms.sort_unstable();
        forms
    }
}

/// A labeled sentence collection together with the label set it was
/// interned against.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub labels: LabelSet,
}

impl Corpus {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// How labels in a labeled file are resolved against a label set.
enum LabelMode<'a> {
    /// First pass over training data: unseen labels get new ids.
    Build(LabelSet),
    /// Dev/test: every label must already exist in the given set.
    Validate(&'a LabelSet),
}

/// Reads a labeled corpus, building a fresh [`LabelSet`] as labels appear.
pub fn read_labeled_corpus<P: AsRef<Path>>(path: P) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut mode = LabelMode::Build(LabelSet::new());
    let sentences = parse_labeled(&text, &path.display().to_string(), &mut mode)?;
    let labels = match mode {
        LabelMode::Build(set) => set,
        LabelMode::Validate(_) => unreachable!(),
    };
    Ok(Corpus { sentences, labels })
}

/// Reads a labeled corpus, validating every label against `labels`.
pub fn read_labeled_corpus_with<P: AsRef<Path>>(
    path: P,
    labels: &LabelSet,
) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut mode = LabelMode::Validate(labels);
    parse_labeled(&text, &path.display().to_string(), &mut mode)
}

/// Reads a one-column raw file into unlabeled sentences.
pub fn read_raw_corpus<P: AsRef<Path>>(path: P) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();

    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            flush(&mut tokens, &mut sentences);
            continue;
        }
        if line.contains('\t') {
            return Err(Error::Parse {
                path: name,
                line: lineno + 1,
                msg: "expected 1 column in raw input, found a tab".into(),
            });
        }
        tokens.push(Token {
            form: line.to_string(),
            gold_label: None,
        });
    }
    flush(&mut tokens, &mut sentences);
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus(name));
    }
    Ok(sentences)
}

fn flush(tokens: &mut Vec<Token>, sentences: &mut Vec<Sentence>) {
    if !tokens.is_empty() {
        sentences.push(Sentence {
            tokens: std::mem::take(tokens),
        });
    }
}

fn parse_labeled(text: &str, name: &str, mode: &mut LabelMode) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            flush(&mut tokens, &mut sentences);
            continue;
        }
        let mut cols = line.split('\t');
        let form = cols.next().unwrap_or("");
        let label = cols.next();
        let extra = cols.next();
        let (form, label) = match (label, extra) {
            (Some(label), None) => (form, label),
            (None, _) => {
                return Err(Error::Parse {
                    path: name.to_string(),
                    line: lineno + 1,
                    msg: "expected 2 tab-separated columns, found 1".into(),
                })
            }
            (Some(_), Some(_)) => {
                return Err(Error::Parse {
                    path: name.to_string(),
                    line: lineno + 1,
                    msg: "expected 2 tab-separated columns, found more".into(),
                })
            }
        };
        if form.is_empty() {
            return Err(Error::Parse {
                path: name.to_string(),
                line: lineno + 1,
                msg: "empty token form".into(),
            });
        }
        if label.is_empty() {
            return Err(Error::Parse {
                path: name.to_string(),
                line: lineno + 1,
                msg: "empty label".into(),
            });
        }
        let id = match mode {
            LabelMode::Build(set) => set.intern(label),
            LabelMode::Validate(set) => set.get(label).ok_or_else(|| {
                Error::Label(format!("{name}:{}: unknown label {label:?}", lineno + 1))
            })?,
        };
        tokens.push(Token {
            form: form.to_string(),
            gold_label: Some(id),
        });
    }
    flush(&mut tokens, &mut sentences);
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus(name.to_string()));
    }
    Ok(sentences)
}

/// Collects the exact set of distinct surface forms in `train`.
pub fn build_vocabulary(train: &[Sentence]) -> Vocabulary {
    let mut vocab = Vocabulary::default();
    for sentence in train {
        for token in &sentence.tokens {
            vocab.insert(&token.form);
        }
    }
    vocab
}

/// Writes labeled sentences in the exact format read by the corpus readers.
///
/// Rejects forms and labels that cannot survive a round-trip through the
/// line-oriented format: empty strings, strings containing tab, newline or
/// carriage return, and forms starting with `#` (which would parse back as
/// a comment line).
pub fn write_corpus<P: AsRef<Path>>(
    sentences: &[Sentence],
    labels: &LabelSet,
    path: P,
) -> Result<()> {
    let mut out = String::new();
    for sentence in sentences {
        for token in &sentence.tokens {
            check_writable(&token.form, "form")?;
            if token.form.starts_with('#') {
                return Err(Error::Invariant(format!(
                    "form {:?} starts with '#' and would read back as a comment",
                    token.form
                )));
            }
            let id = token.gold_label.ok_or_else(|| {
                Error::Label(format!("token {:?} has no gold label", token.form))
            })?;
            let label = labels.name(id);
            check_writable(label, "label")?;
            out.push_str(&token.form);
            out.push('\t');
            out.push_str(label);
            out.push('\n');
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn check_writable(s: &str, what: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Invariant(format!("empty {what}")));
    }
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::Invariant(format!(
            "{what} {s:?} contains tab/newline/carriage-return"
        )));
    }
    Ok(())
}
