//! Feature templates and sparse feature extraction.
//!
//! A template is a named family of features ("suffix of length 3 of the
//! current word") whose instances share one weight block. Templates are the
//! unit of incremental computation: scoring adds one template's contribution
//! at a time, in list order, so the position of a template in the
//! [`TemplateList`] is significant.
//!
//! Feature strings are explicit and human-readable (`"s3:0=ing"`); each
//! template owns a dictionary mapping its strings to dense 0-based ids, kept
//! separate per template so weight blocks stay dense and compact. Pair
//! templates conjoin both parts into a single string, keeping "one template
//! = one dot-product term group".
//!
//! Template lists load from a declarative text config, one template per
//! line: `name kind params`, with `#` comments and blank lines ignored.
//! Kinds and parameter ranges:
//!
//! ```text
//! word <offset>              surface form at offset          |offset| <= 3
//! lower <offset>             lowercased form at offset       |offset| <= 3
//! prefix <k> <offset>        first k chars                   1 <= k <= 4
//! suffix <k> <offset>        last k chars                    1 <= k <= 4
//! prev-label <distance>      already-predicted label         1 <= distance <= 2
//! shape <offset>             character-class shape (Xxd)     |offset| <= 3
//! has-digit                  current form contains a digit
//! has-hyphen                 current form contains '-'
//! has-upper                  current form contains uppercase
//! word-pair <off_a> <off_b>  conjoined forms at two offsets  |offset| <= 3
//! label-pair <d_a> <d_b>     conjoined previous labels       1 <= d <= 2
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::corpus::{LabelId, LabelSet, Sentence};
use crate::error::{Error, Result};

/// Dense per-template feature identifier.
pub type FeatureId = u32;

/// Sentinel emitted when an offset falls before the sentence start.
pub const BOS: &str = "<BOS>";
/// Sentinel emitted when an offset falls past the sentence end.
pub const EOS: &str = "<EOS>";

const MAX_OFFSET: i32 = 3;
const MAX_AFFIX: usize = 4;
const MAX_LABEL_DISTANCE: usize = 2;

/// What a template looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Word { offset: i32 },
    LowerWord { offset: i32 },
    Prefix { len: usize, offset: i32 },
    Suffix { len: usize, offset: i32 },
    PrevLabel { distance: usize },
    WordShape { offset: i32 },
    HasDigit,
    HasHyphen,
    HasUpper,
    WordPair { offset_a: i32, offset_b: i32 },
    LabelPair { distance_a: usize, distance_b: usize },
}

/// A named feature template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSpec {
    pub name: String,
    pub kind: TemplateKind,
}

impl TemplateSpec {
    pub fn new(name: impl Into<String>, kind: TemplateKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<()> {
        use TemplateKind::*;
        let check_offset = |o: i32| {
            if o.abs() > MAX_OFFSET {
                Err(Error::Config(format!(
                    "template {:?}: offset {o} out of range (|offset| <= {MAX_OFFSET})",
                    self.name
                )))
            } else {
                Ok(())
            }
        };
        let check_affix = |k: usize| {
            if k == 0 || k > MAX_AFFIX {
                Err(Error::Config(format!(
                    "template {:?}: affix length {k} out of range (1..={MAX_AFFIX})",
                    self.name
                )))
            } else {
                Ok(())
            }
        };
        let check_distance = |d: usize| {
            if d == 0 || d > MAX_LABEL_DISTANCE {
                Err(Error::Config(format!(
                    "template {:?}: label distance {d} out of range (1..={MAX_LABEL_DISTANCE})",
                    self.name
                )))
            } else {
                Ok(())
            }
        };
        if self.name.is_empty() || self.name.contains(char::is_whitespace) {
            return Err(Error::Config(format!(
                "invalid template name {:?}",
                self.name
            )));
        }
        match self.kind {
            Word { offset } | LowerWord { offset } | WordShape { offset } => check_offset(offset),
            Prefix { len, offset } | Suffix { len, offset } => {
                check_affix(len)?;
                check_offset(offset)
            }
            PrevLabel { distance } => check_distance(distance),
            HasDigit | HasHyphen | HasUpper => Ok(()),
            WordPair { offset_a, offset_b } => {
                check_offset(offset_a)?;
                check_offset(offset_b)
            }
            LabelPair {
                distance_a,
                distance_b,
            } => {
                check_distance(distance_a)?;
                check_distance(distance_b)
            }
        }
    }

    /// Parses one `name kind params` line of the template config format.
    fn parse_line(line: &str, path: &str, lineno: usize) -> Result<Self> {
        let err = |msg: String| Error::Parse {
            path: path.to_string(),
            line: lineno,
            msg,
        };
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or_else(|| err("missing name".into()))?;
        let kind = parts.next().ok_or_else(|| err("missing kind".into()))?;
        let params: Vec<&str> = parts.collect();

        let int = |s: &str| -> Result<i32> {
            s.parse()
                .map_err(|_| err(format!("not an integer: {s:?}")))
        };
        let uint = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| err(format!("not a non-negative integer: {s:?}")))
        };
        let arity = |n: usize| -> Result<()> {
            if params.len() != n {
                Err(err(format!(
                    "kind {kind:?} takes {n} parameter(s), got {}",
                    params.len()
                )))
            } else {
                Ok(())
            }
        };

        let kind = match kind {
            "word" => {
                arity(1)?;
                TemplateKind::Word {
                    offset: int(params[0])?,
                }
            }
            "lower" => {
                arity(1)?;
                TemplateKind::LowerWord {
                    offset: int(params[0])?,
                }
            }
            "prefix" => {
                arity(2)?;
                TemplateKind::Prefix {
                    len: uint(params[0])?,
                    offset: int(params[1])?,
                }
            }
            "suffix" => {
                arity(2)?;
                TemplateKind::Suffix {
                    len: uint(params[0])?,
                    offset: int(params[1])?,
                }
            }
            "prev-label" => {
                arity(1)?;
                TemplateKind::PrevLabel {
                    distance: uint(params[0])?,
                }
            }
            "shape" => {
                arity(1)?;
                TemplateKind::WordShape {
                    offset: int(params[0])?,
                }
            }
            "has-digit" => {
                arity(0)?;
                TemplateKind::HasDigit
            }
            "has-hyphen" => {
                arity(0)?;
                TemplateKind::HasHyphen
            }
            "has-upper" => {
                arity(0)?;
                TemplateKind::HasUpper
            }
            "word-pair" => {
                arity(2)?;
                TemplateKind::WordPair {
                    offset_a: int(params[0])?,
                    offset_b: int(params[1])?,
                }
            }
            "label-pair" => {
                arity(2)?;
                TemplateKind::LabelPair {
                    distance_a: uint(params[0])?,
                    distance_b: uint(params[1])?,
                }
            }
            other => return Err(err(format!("unknown template kind {other:?}"))),
        };
        let spec = TemplateSpec::new(name, kind);
        spec.validate().map_err(|e| err(e.to_string()))?;
        Ok(spec)
    }
}

impl fmt::Display for TemplateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TemplateKind::*;
        match self.kind {
            Word { offset } => write!(f, "{} word {offset}", self.name),
            LowerWord { offset } => write!(f, "{} lower {offset}", self.name),
            Prefix { len, offset } => write!(f, "{} prefix {len} {offset}", self.name),
            Suffix { len, offset } => write!(f, "{} suffix {len} {offset}", self.name),
            PrevLabel { distance } => write!(f, "{} prev-label {distance}", self.name),
            WordShape { offset } => write!(f, "{} shape {offset}", self.name),
            HasDigit => write!(f, "{} has-digit", self.name),
            HasHyphen => write!(f, "{} has-hyphen", self.name),
            HasUpper => write!(f, "{} has-upper", self.name),
            WordPair { offset_a, offset_b } => {
                write!(f, "{} word-pair {offset_a} {offset_b}", self.name)
            }
            LabelPair {
                distance_a,
                distance_b,
            } => write!(f, "{} label-pair {distance_a} {distance_b}", self.name),
        }
    }
}

/// An ordered list of uniquely named templates.
///
/// Position `j` in the list is template index `j` of the incremental scoring
/// order; reordering a list changes the model it describes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateList {
    templates: Vec<TemplateSpec>,
}

impl TemplateList {
    pub fn new(templates: Vec<TemplateSpec>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Config("template list is empty".into()));
        }
        let mut seen = HashMap::new();
        for (j, t) in templates.iter().enumerate() {
            t.validate()?;
            if let Some(prev) = seen.insert(t.name.clone(), j) {
                return Err(Error::Config(format!(
                    "duplicate template name {:?} (positions {prev} and {j})",
                    t.name
                )));
            }
        }
        Ok(Self { templates })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, j: usize) -> &TemplateSpec {
        &self.templates[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TemplateSpec> {
        self.templates.iter()
    }

    pub fn names(&self) -> Vec<&str> {
        self.templates.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.templates.iter().position(|t| t.name == name)
    }

    /// The list truncated to its first `k` templates.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(Error::Config(format!(
                "prefix length {k} out of range 1..={}",
                self.len()
            )));
        }
        Ok(Self {
            templates: self.templates[..k].to_vec(),
        })
    }

    /// Reorders the list to follow `names`, which must be a permutation of
    /// the template names.
    pub fn reordered(&self, names: &[String]) -> Result<Self> {
        if names.len() != self.len() {
            return Err(Error::Config(format!(
                "ordering has {} names but the list has {} templates",
                names.len(),
                self.len()
            )));
        }
        let mut templates = Vec::with_capacity(names.len());
        for name in names {
            let j = self.position(name).ok_or_else(|| {
                Error::Config(format!("ordering names unknown template {name:?}"))
            })?;
            templates.push(self.templates[j].clone());
        }
        Self::new(templates)
    }

    /// Parses the one-template-per-line config format.
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut templates = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            templates.push(TemplateSpec::parse_line(line, path, lineno + 1)?);
        }
        Self::new(templates)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Renders the list back into the config format.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for t in &self.templates {
            out.push_str(&t.to_string());
            out.push('\n');
        }
        out
    }
}

/// The built-in template list, used when no template config is given.
///
/// The order below is the default scoring order before any learned
/// reordering. See `docs/templates.md` for the documented reference.
pub fn default_template_list() -> TemplateList {
    use TemplateKind::*;
    let specs = vec![
        TemplateSpec::new("w0", Word { offset: 0 }),
        TemplateSpec::new("lw0", LowerWord { offset: 0 }),
        TemplateSpec::new("s3", Suffix { len: 3, offset: 0 }),
        TemplateSpec::new("p1", Prefix { len: 1, offset: 0 }),
        TemplateSpec::new("t-1", PrevLabel { distance: 1 }),
        TemplateSpec::new("w-1", Word { offset: -1 }),
        TemplateSpec::new("w+1", Word { offset: 1 }),
        TemplateSpec::new("s2", Suffix { len: 2, offset: 0 }),
        TemplateSpec::new("s1", Suffix { len: 1, offset: 0 }),
        TemplateSpec::new("sh0", WordShape { offset: 0 }),
        TemplateSpec::new("t-2", PrevLabel { distance: 2 }),
        TemplateSpec::new(
            "tt",
            LabelPair {
                distance_a: 2,
                distance_b: 1,
            },
        ),
        TemplateSpec::new("p2", Prefix { len: 2, offset: 0 }),
        TemplateSpec::new("p3", Prefix { len: 3, offset: 0 }),
        TemplateSpec::new("s4", Suffix { len: 4, offset: 0 }),
        TemplateSpec::new("w-2", Word { offset: -2 }),
        TemplateSpec::new("w+2", Word { offset: 2 }),
        TemplateSpec::new("lw-1", LowerWord { offset: -1 }),
        TemplateSpec::new("lw+1", LowerWord { offset: 1 }),
        TemplateSpec::new(
            "wp-10",
            WordPair {
                offset_a: -1,
                offset_b: 0,
            },
        ),
        TemplateSpec::new(
            "wp0+1",
            WordPair {
                offset_a: 0,
                offset_b: 1,
            },
        ),
        TemplateSpec::new("hd", HasDigit),
        TemplateSpec::new("hh", HasHyphen),
        TemplateSpec::new("hu", HasUpper),
    ];
    TemplateList::new(specs).expect("built-in template list is valid")
}

/// The observation for one greedy tagging decision: a sentence, a position,
/// and the labels already decided to the left.
#[derive(Debug, Clone, Copy)]
pub struct TaggingContext<'a> {
    pub sentence: &'a Sentence,
    pub position: usize,
    /// Labels for positions `0..position`, in order.
    pub prev_labels: &'a [LabelId],
    pub labels: &'a LabelSet,
}

impl<'a> TaggingContext<'a> {
    pub fn new(
        sentence: &'a Sentence,
        position: usize,
        prev_labels: &'a [LabelId],
        labels: &'a LabelSet,
    ) -> Self {
        debug_assert!(position < sentence.len());
        debug_assert_eq!(prev_labels.len(), position);
        Self {
            sentence,
            position,
            prev_labels,
            labels,
        }
    }

    /// Form at `position + offset`, or the boundary sentinel.
    fn form_at(&self, offset: i32) -> Option<&'a str> {
        let idx = self.position as i64 + offset as i64;
        if idx < 0 || idx >= self.sentence.len() as i64 {
            None
        } else {
            Some(&self.sentence.tokens[idx as usize].form)
        }
    }

    /// Label string `distance` positions back, or the boundary sentinel.
    fn label_back(&self, distance: usize) -> &'a str {
        if distance == 0 || distance > self.prev_labels.len() {
            BOS
        } else {
            self.labels.name(self.prev_labels[self.prev_labels.len() - distance])
        }
    }
}

fn boundary(offset: i32) -> &'static str {
    if offset < 0 {
        BOS
    } else {
        EOS
    }
}

/// Character-class shape of a form: uppercase -> `X`, lowercase -> `x`,
/// ASCII digit -> `d`, everything else kept, with runs collapsed.
/// `"Hello-42"` becomes `"Xx-d"`.
pub fn word_shape(form: &str) -> String {
    let mut out = String::new();
    let mut last: Option<char> = None;
    for c in form.chars() {
        let mapped = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_ascii_digit() {
            'd'
        } else {
            c
        };
        if last != Some(mapped) {
            out.push(mapped);
            last = Some(mapped);
        }
    }
    out
}

fn char_prefix(s: &str, k: usize) -> String {
    s.chars().take(k).collect()
}

fn char_suffix(s: &str, k: usize) -> String {
    let n = s.chars().count();
    s.chars().skip(n.saturating_sub(k)).collect()
}

/// Extracts the feature strings a template produces for a context.
///
/// Total and pure: out-of-bounds offsets yield the boundary sentinels and
/// missing previous labels yield the begin-of-sentence label string. Every
/// built-in kind produces exactly one string.
pub fn extract(template: &TemplateSpec, ctx: &TaggingContext) -> Vec<String> {
    use TemplateKind::*;
    let s = match template.kind {
        Word { offset } => match ctx.form_at(offset) {
            Some(form) => format!("w{offset}={form}"),
            None => format!("w{offset}={}", boundary(offset)),
        },
        LowerWord { offset } => match ctx.form_at(offset) {
            Some(form) => format!("lw{offset}={}", form.to_lowercase()),
            None => format!("lw{offset}={}", boundary(offset)),
        },
        Prefix { len, offset } => match ctx.form_at(offset) {
            Some(form) => format!("p{len}:{offset}={}", char_prefix(form, len)),
            None => format!("p{len}:{offset}={}", boundary(offset)),
        },
        Suffix { len, offset } => match ctx.form_at(offset) {
            Some(form) => format!("s{len}:{offset}={}", char_suffix(form, len)),
            None => format!("s{len}:{offset}={}", boundary(offset)),
        },
        PrevLabel { distance } => format!("t-{distance}={}", ctx.label_back(distance)),
        WordShape { offset } => match ctx.form_at(offset) {
            Some(form) => format!("sh{offset}={}", word_shape(form)),
            None => format!("sh{offset}={}", boundary(offset)),
        },
        HasDigit => {
            let form = &ctx.sentence.tokens[ctx.position].form;
            format!("hd={}", u8::from(form.chars().any(|c| c.is_ascii_digit())))
        }
        HasHyphen => {
            let form = &ctx.sentence.tokens[ctx.position].form;
            format!("hh={}", u8::from(form.contains('-')))
        }
        HasUpper => {
            let form = &ctx.sentence.tokens[ctx.position].form;
            format!("hu={}", u8::from(form.chars().any(char::is_uppercase)))
        }
        WordPair { offset_a, offset_b } => {
            let a = ctx.form_at(offset_a).unwrap_or(boundary(offset_a));
            let b = ctx.form_at(offset_b).unwrap_or(boundary(offset_b));
            format!("wp{offset_a},{offset_b}={a}~{b}")
        }
        LabelPair {
            distance_a,
            distance_b,
        } => {
            let a = ctx.label_back(distance_a);
            let b = ctx.label_back(distance_b);
            format!("tp{distance_a},{distance_b}={a}~{b}")
        }
    };
    vec![s]
}

/// Per-template dictionaries mapping feature strings to dense ids.
///
/// Each template's dictionary can be frozen independently; a frozen
/// dictionary never allocates, so unseen strings are simply dropped (a
/// dropped feature contributes zero score, the same as a zero weight).
#[derive(Debug, Clone, Default)]
struct Dict {
    map: HashMap<String, FeatureId>,
    strings: Vec<String>,
    frozen: bool,
}

#[derive(Debug, Clone)]
pub struct FeatureIndexer {
    dicts: Vec<Dict>,
}

impl FeatureIndexer {
    pub fn new(n_templates: usize) -> Self {
        Self {
            dicts: vec![Dict::default(); n_templates],
        }
    }

    pub fn n_templates(&self) -> usize {
        self.dicts.len()
    }

    /// Dictionary size for template `j`.
    pub fn dict_size(&self, j: usize) -> usize {
        self.dicts[j].strings.len()
    }

    pub fn is_frozen(&self, j: usize) -> bool {
        self.dicts[j].frozen
    }

    /// Freezes every template dictionary.
    pub fn freeze(&mut self) {
        for d in &mut self.dicts {
            d.frozen = true;
        }
    }

    /// Freezes the dictionary of a single template.
    pub fn freeze_template(&mut self, j: usize) {
        self.dicts[j].frozen = true;
    }

    pub fn all_frozen(&self) -> bool {
        self.dicts.iter().all(|d| d.frozen)
    }

    /// Feature string for a known id of template `j`.
    pub fn string(&self, j: usize, id: FeatureId) -> &str {
        &self.dicts[j].strings[id as usize]
    }

    /// A copy holding only the first `n` template dictionaries.
    pub fn truncated(&self, n: usize) -> FeatureIndexer {
        FeatureIndexer {
            dicts: self.dicts[..n].to_vec(),
        }
    }

    /// Inserts a known string into template `j`'s dictionary with the next
    /// dense id (used when loading a serialized model).
    pub fn insert_known(&mut self, j: usize, s: &str) -> Result<FeatureId> {
        let d = &mut self.dicts[j];
        if d.map.contains_key(s) {
            return Err(Error::Format(format!(
                "duplicate dictionary entry {s:?} for template {j}"
            )));
        }
        let id = d.strings.len() as FeatureId;
        d.strings.push(s.to_string());
        d.map.insert(s.to_string(), id);
        Ok(id)
    }

    /// Maps feature strings of template `j` to ids.
    ///
    /// Unfrozen: unseen strings get the next dense id. Frozen: unseen
    /// strings are dropped.
    pub fn index(&mut self, j: usize, strings: &[String]) -> Vec<FeatureId> {
        let d = &mut self.dicts[j];
        let mut ids = Vec::with_capacity(strings.len());
        for s in strings {
            if let Some(&id) = d.map.get(s) {
                ids.push(id);
            } else if !d.frozen {
                let id = d.strings.len() as FeatureId;
                d.strings.push(s.clone());
                d.map.insert(s.clone(), id);
                ids.push(id);
            }
        }
        ids
    }

    /// Read-only lookup; unseen strings are dropped regardless of freeze
    /// state. Safe to share across threads.
    pub fn lookup(&self, j: usize, strings: &[String]) -> Vec<FeatureId> {
        let d = &self.dicts[j];
        strings.iter().filter_map(|s| d.map.get(s).copied()).collect()
    }
}

/// Label-independent active feature ids, one list per template, in template
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseFeatures {
    pub per_template: Vec<Vec<FeatureId>>,
}

impl SparseFeatures {
    pub fn n_templates(&self) -> usize {
        self.per_template.len()
    }

    pub fn ids(&self, j: usize) -> &[FeatureId] {
        &self.per_template[j]
    }
}

/// Eagerly extracts and indexes every template for one context.
///
/// This is the batch form used in training, where all templates are needed
/// anyway. Inference uses a lazy per-template path instead so templates past
/// the stopping point are never extracted.
pub fn extract_all(
    templates: &TemplateList,
    indexer: &mut FeatureIndexer,
    ctx: &TaggingContext,
) -> SparseFeatures {
    let per_template = templates
        .iter()
        .enumerate()
        .map(|(j, t)| indexer.index(j, &extract(t, ctx)))
        .collect();
    SparseFeatures { per_template }
}

/// Read-only variant of [`extract_all`] for frozen indexers.
pub fn extract_all_frozen(
    templates: &TemplateList,
    indexer: &FeatureIndexer,
    ctx: &TaggingContext,
) -> SparseFeatures {
    let per_template = templates
        .iter()
        .enumerate()
        .map(|(j, t)| indexer.lookup(j, &extract(t, ctx)))
        .collect();
    SparseFeatures { per_template }
}
