//! Parameters and scoring: per-template weight blocks, incremental prefix
//! scores, the margin hinge, and model serialization.
//!
//! Summation order is fixed everywhere — template order, then feature order
//! within a template, then the label loop — so incremental prefix scoring
//! and the eager full dot product are bit-identical, and early-exit
//! decisions can be checked exactly rather than within a tolerance.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::{LabelId, LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureIndexer, SparseFeatures, TemplateList};

/// Magic bytes at the start of a model file.
pub const MODEL_MAGIC: &[u8; 8] = b"DYNTAGMD";
/// Current model file format version.
pub const MODEL_VERSION: u32 = 1;

/// Dense weights for one template: `rows x n_labels`, row-major with the
/// label index minor, one row per feature id of that template.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBlock {
    n_labels: usize,
    weights: Vec<f64>,
}

impl WeightBlock {
    pub fn new(n_labels: usize) -> Self {
        Self {
            n_labels,
            weights: Vec::new(),
        }
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn rows(&self) -> usize {
        self.weights.len() / self.n_labels
    }

    /// Grows to at least `rows` rows, zero-filling new entries.
    pub fn ensure_rows(&mut self, rows: usize) {
        if rows * self.n_labels > self.weights.len() {
            self.weights.resize(rows * self.n_labels, 0.0);
        }
    }

    pub fn row(&self, f: FeatureId) -> &[f64] {
        let start = f as usize * self.n_labels;
        &self.weights[start..start + self.n_labels]
    }

    pub fn get(&self, f: FeatureId, y: LabelId) -> f64 {
        self.weights[f as usize * self.n_labels + y]
    }

    pub fn set(&mut self, f: FeatureId, y: LabelId, w: f64) {
        self.weights[f as usize * self.n_labels + y] = w;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// Class scores after including the first `prefix_len` templates.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixScores {
    /// Number of templates included; 0 means the all-zero base case.
    pub prefix_len: usize,
    pub scores: Vec<f64>,
}

impl PrefixScores {
    /// The zero-template base: all-zero scores.
    pub fn zero(n_labels: usize) -> Self {
        Self {
            prefix_len: 0,
            scores: vec![0.0; n_labels],
        }
    }
}

/// A trained classifier: label set, templates in scoring order, frozen
/// feature dictionaries, one weight block per template, the margin the
/// model was trained with, and the training vocabulary.
#[derive(Debug, Clone)]
pub struct Model {
    pub label_set: LabelSet,
    pub templates: TemplateList,
    pub indexer: FeatureIndexer,
    pub blocks: Vec<WeightBlock>,
    pub margin: f64,
    pub vocabulary: Vocabulary,
    /// Echo of the training configuration, as a TOML fragment, for
    /// provenance. Empty when unknown (e.g. hand-built models).
    pub config_echo: String,
}

impl Model {
    pub fn n_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn n_templates(&self) -> usize {
        self.templates.len()
    }

    /// Validates the structural invariants that tie the pieces together.
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::Invariant("model has no templates".into()));
        }
        if self.label_set.len() < 2 {
            return Err(Error::Invariant("model needs at least 2 labels".into()));
        }
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(Error::Invariant(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.blocks.len() != self.templates.len() {
            return Err(Error::Invariant(format!(
                "{} blocks for {} templates",
                self.blocks.len(),
                self.templates.len()
            )));
        }
        if self.indexer.n_templates() != self.templates.len() {
            return Err(Error::Invariant("indexer/template count mismatch".into()));
        }
        for (j, block) in self.blocks.iter().enumerate() {
            if block.n_labels() != self.label_set.len() {
                return Err(Error::Invariant(format!(
                    "block {j} has {} label columns, expected {}",
                    block.n_labels(),
                    self.label_set.len()
                )));
            }
            if block.rows() != self.indexer.dict_size(j) {
                return Err(Error::Invariant(format!(
                    "block {j} has {} rows but dictionary has {} entries",
                    block.rows(),
                    self.indexer.dict_size(j)
                )));
            }
            if block.as_slice().iter().any(|w| !w.is_finite()) {
                return Err(Error::Invariant(format!("block {j} has non-finite weights")));
            }
        }
        Ok(())
    }
}

/// Per-label score contribution of template `j`'s active features.
///
/// Sums the weight rows of the active ids in feature order. Out-of-range
/// ids abort: they signal a dictionary/block mismatch, which is a bug.
pub fn template_contribution(model: &Model, j: usize, feats: &SparseFeatures) -> Vec<f64> {
    block_contribution(&model.blocks[j], model.n_labels(), feats.ids(j))
}

/// The core of [`template_contribution`], usable on a block that is still
/// being trained.
pub fn block_contribution(block: &WeightBlock, n_labels: usize, ids: &[FeatureId]) -> Vec<f64> {
    let mut contribution = vec![0.0; n_labels];
    for &f in ids {
        assert!(
            (f as usize) < block.rows(),
            "feature id {f} out of range for block with {} rows",
            block.rows()
        );
        let row = block.row(f);
        for (c, w) in contribution.iter_mut().zip(row) {
            *c += w;
        }
    }
    contribution
}

/// Extends a prefix by one template's contribution.
pub fn extend_prefix(prev: &PrefixScores, contribution: &[f64]) -> PrefixScores {
    assert_eq!(
        prev.scores.len(),
        contribution.len(),
        "score/contribution length mismatch"
    );
    let scores = prev
        .scores
        .iter()
        .zip(contribution)
        .map(|(p, c)| p + c)
        .collect();
    PrefixScores {
        prefix_len: prev.prefix_len + 1,
        scores,
    }
}

/// The margin hinge: `max(0, m + max_{y' != y} P_{y'} - P_y)`.
///
/// Zero iff label `y` leads every rival by at least `m`. With a single
/// label the rival max is empty and the hinge is 0.
pub fn hinge(p: &PrefixScores, y: LabelId, m: f64) -> f64 {
    let mut rival = f64::NEG_INFINITY;
    for (label, &s) in p.scores.iter().enumerate() {
        if label != y && s > rival {
            rival = s;
        }
    }
    (m + rival - p.scores[y]).max(0.0)
}

/// The label leading all others by at least `m`, if one exists.
///
/// Since `m > 0` at most one label can qualify; an exact tie for the top
/// score means no label does. One best/second pass over the scores.
pub fn margin_satisfied(p: &PrefixScores, m: f64) -> Option<LabelId> {
    debug_assert!(m > 0.0);
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    let mut best_id = 0;
    for (label, &s) in p.scores.iter().enumerate() {
        if s > best {
            second = best;
            best = s;
            best_id = label;
        } else if s > second {
            second = s;
        }
    }
    if best - second >= m {
        Some(best_id)
    } else {
        None
    }
}

/// Index of the highest score, ties broken toward the lowest label id.
pub fn argmax_label(scores: &[f64]) -> LabelId {
    let mut best = f64::NEG_INFINITY;
    let mut best_id = 0;
    for (label, &s) in scores.iter().enumerate() {
        if s > best {
            best = s;
            best_id = label;
        }
    }
    best_id
}

// ---------------------------------------------------------------------------
// Serialization
//
// Little-endian binary layout (see docs/formats.md):
//   magic (8 bytes) | version u32
//   margin f64
//   config echo: u32 length + UTF-8 bytes
//   labels: u32 count, then each as u32 length + UTF-8 bytes
//   templates: u32 count, then each config line as u32 length + UTF-8 bytes
//   vocabulary: u32 count, then sorted forms as u32 length + UTF-8 bytes
//   per template: u32 dictionary size, then entries in id order
//   per template: rows*labels f64 weights, row-major, label index minor
// ---------------------------------------------------------------------------

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated file".into()))?;
    Ok(f64::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated file".into()))?;
    String::from_utf8(buf).map_err(|_| Error::Format("non-UTF-8 string".into()))
}

/// Writes a model. The weight layout is bit-exact: a load of the written
/// file reproduces every weight identically.
pub fn save_model<P: AsRef<Path>>(model: &Model, path: P) -> Result<()> {
    model.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    write_u32(&mut w, MODEL_VERSION)?;
    write_f64(&mut w, model.margin)?;
    write_str(&mut w, &model.config_echo)?;

    write_u32(&mut w, model.label_set.len() as u32)?;
    for label in model.label_set.iter() {
        write_str(&mut w, label)?;
    }

    write_u32(&mut w, model.templates.len() as u32)?;
    for t in model.templates.iter() {
        write_str(&mut w, &t.to_string())?;
    }

    let forms = model.vocabulary.sorted_forms();
    write_u32(&mut w, forms.len() as u32)?;
    for form in forms {
        write_str(&mut w, form)?;
    }

    for j in 0..model.templates.len() {
        let size = model.indexer.dict_size(j);
        write_u32(&mut w, size as u32)?;
        for id in 0..size {
            write_str(&mut w, model.indexer.string(j, id as FeatureId))?;
        }
    }

    for block in &model.blocks {
        for &v in block.as_slice() {
            write_f64(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a model written by [`save_model`].
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated file".into()))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("bad magic: not a model file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {version} (this build reads version {MODEL_VERSION})"
        )));
    }
    let margin = read_f64(&mut r)?;
    let config_echo = read_str(&mut r)?;

    let n_labels = read_u32(&mut r)? as usize;
    let mut label_set = LabelSet::new();
    for _ in 0..n_labels {
        label_set.intern(&read_str(&mut r)?);
    }
    if label_set.len() != n_labels {
        return Err(Error::Format("duplicate labels in file".into()));
    }

    let n_templates = read_u32(&mut r)? as usize;
    let mut lines = String::new();
    for _ in 0..n_templates {
        lines.push_str(&read_str(&mut r)?);
        lines.push('\n');
    }
    let templates = TemplateList::parse(&lines, "<model file>")
        .map_err(|e| Error::Format(format!("bad template section: {e}")))?;
    if templates.len() != n_templates {
        return Err(Error::Format("template count mismatch".into()));
    }

    let n_forms = read_u32(&mut r)? as usize;
    let mut vocabulary = Vocabulary::default();
    for _ in 0..n_forms {
        vocabulary.insert(&read_str(&mut r)?);
    }

    let mut indexer = FeatureIndexer::new(n_templates);
    for j in 0..n_templates {
        let size = read_u32(&mut r)? as usize;
        for _ in 0..size {
            let s = read_str(&mut r)?;
            indexer.insert_known(j, &s)?;
        }
    }
    indexer.freeze();

    let mut blocks = Vec::with_capacity(n_templates);
    for j in 0..n_templates {
        let mut block = WeightBlock::new(n_labels);
        block.ensure_rows(indexer.dict_size(j));
        for f in 0..indexer.dict_size(j) {
            for y in 0..n_labels {
                block.set(f as FeatureId, y, read_f64(&mut r)?);
            }
        }
        blocks.push(block);
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after weights".into()));
    }

    let model = Model {
        label_set,
        templates,
        indexer,
        blocks,
        margin,
        vocabulary,
        config_echo,
    };
    model
        .validate()
        .map_err(|e| Error::Format(format!("file violates model invariants: {e}")))?;
    Ok(model)
}
