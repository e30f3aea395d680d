//! Shared helpers for the integration suites: random models over small
//! synthetic form pools, and paths to the bundled data files.
//!
//! Each test binary uses its own subset of these.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use dyntag::corpus::{LabelId, LabelSet, Sentence, Token, Vocabulary};
use dyntag::features::{extract_all, FeatureIndexer, TaggingContext, TemplateList};
use dyntag::model::{Model, WeightBlock};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn sentence(forms: &[&str]) -> Sentence {
    Sentence {
        tokens: forms
            .iter()
            .map(|f| Token {
                form: f.to_string(),
                gold_label: None,
            })
            .collect(),
    }
}

const FORM_POOL: &[&str] = &[
    "alpha", "Beta", "x-1", "dog", "Runs", "42", "ca", "de-3", "Übermut", "pi",
];

pub fn random_sentence(rng: &mut ChaCha8Rng) -> Sentence {
    let len = rng.random_range(1..7);
    let forms: Vec<&str> = (0..len)
        .map(|_| FORM_POOL[rng.random_range(0..FORM_POOL.len())])
        .collect();
    sentence(&forms)
}

/// A random frozen model over the shared form pool plus fresh sentences to
/// predict on. Dictionaries are grown from a handful of seed sentences, so
/// prediction-time contexts also exercise the unseen-feature path.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    templates: TemplateList,
    weight_scale: f64,
) -> (Model, Vec<Sentence>) {
    let n_labels = rng.random_range(2..6);
    let label_set = LabelSet::from_labels((0..n_labels).map(|i| format!("L{i}"))).unwrap();

    let mut indexer = FeatureIndexer::new(templates.len());
    for _ in 0..8 {
        let s = random_sentence(rng);
        let mut prev: Vec<LabelId> = Vec::new();
        for pos in 0..s.len() {
            let ctx = TaggingContext::new(&s, pos, &prev, &label_set);
            extract_all(&templates, &mut indexer, &ctx);
            prev.push(rng.random_range(0..n_labels));
        }
    }
    indexer.freeze();

    let mut blocks = Vec::new();
    for j in 0..templates.len() {
        let mut b = WeightBlock::new(n_labels);
        b.ensure_rows(indexer.dict_size(j));
        for f in 0..b.rows() {
            for y in 0..n_labels {
                b.set(f as u32, y, rng.random_range(-weight_scale..weight_scale));
            }
        }
        blocks.push(b);
    }

    let model = Model {
        label_set,
        templates,
        indexer,
        blocks,
        margin: 1.0,
        vocabulary: Vocabulary::default(),
        config_echo: String::new(),
    };
    let sentences = (0..8).map(|_| random_sentence(rng)).collect();
    (model, sentences)
}
