//! Early-exit token prediction and greedy left-to-right sentence tagging.
//!
//! Dynamic prediction extends the prefix score one template at a time and
//! stops at the first prefix where some label leads all others by the
//! margin. Templates past the stopping point are never extracted — that
//! laziness is where the speedup comes from, so every trace carries an
//! extraction counter that tests can hold against `templates_used`.

use crate::corpus::{LabelId, Sentence};
use crate::error::{Error, Result};
use crate::features::{extract, FeatureId, TaggingContext};
use crate::model::{
    argmax_label, block_contribution, extend_prefix, hinge, margin_satisfied, Model, PrefixScores,
};

/// When to stop accumulating template contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingPolicy {
    /// Stop at the first prefix where a label leads by `margin`.
    Dynamic { margin: f64 },
    /// Evaluate exactly `k` templates, then take the argmax.
    Fixed { k: usize },
    /// Evaluate every template.
    Full,
}

impl StoppingPolicy {
    pub fn validate(&self, n_templates: usize) -> Result<()> {
        match *self {
            StoppingPolicy::Dynamic { margin } if margin.is_nan() || margin <= 0.0 => {
                Err(Error::Config(format!(
                    "dynamic policy needs margin > 0, got {margin}"
                )))
            }
            StoppingPolicy::Fixed { k } if k == 0 || k > n_templates => Err(Error::Config(
                format!("fixed policy needs 1 <= k <= {n_templates}, got {k}"),
            )),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for StoppingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StoppingPolicy::Dynamic { margin } => write!(f, "dynamic(m={margin})"),
            StoppingPolicy::Fixed { k } => write!(f, "fixed({k})"),
            StoppingPolicy::Full => write!(f, "full"),
        }
    }
}

/// Result of predicting one token.
#[derive(Debug, Clone)]
pub struct PredictionTrace {
    pub label: LabelId,
    /// Number of templates whose contributions were accumulated.
    pub templates_used: usize,
    /// `P_1 ..= P_templates_used`, kept when the caller asks for them
    /// (training always does).
    pub prefixes: Option<Vec<PrefixScores>>,
    /// Whether the margin test fired (at any prefix, including the last).
    pub exited_early: bool,
    /// How many template extractions actually ran; equals `templates_used`
    /// when the lazy contract holds.
    pub extractions: usize,
}

/// Per-token cache that extracts and indexes a template's features on first
/// use, counting the extraction calls it performs.
struct LazyFeatures<'a> {
    model: &'a Model,
    ctx: &'a TaggingContext<'a>,
    cache: Vec<Option<Vec<FeatureId>>>,
    extractions: usize,
}

impl<'a> LazyFeatures<'a> {
    fn new(model: &'a Model, ctx: &'a TaggingContext<'a>) -> Self {
        Self {
            model,
            ctx,
            cache: vec![None; model.n_templates()],
            extractions: 0,
        }
    }

    fn ids(&mut self, j: usize) -> &[FeatureId] {
        if self.cache[j].is_none() {
            self.extractions += 1;
            let strings = extract(self.model.templates.get(j), self.ctx);
            self.cache[j] = Some(self.model.indexer.lookup(j, &strings));
        }
        self.cache[j].as_ref().unwrap()
    }
}

/// Predicts one token under a stopping policy.
///
/// Dynamic: extends the prefix lazily, checking after each template whether
/// some label clears the margin; if one does, returns it with
/// `templates_used` = that prefix length. If none ever does, falls back to
/// the argmax of the final prefix. Fixed/full evaluate exactly
/// `k`/all templates and take the argmax. Argmax ties break toward the
/// lowest label id.
pub fn predict_token(
    model: &Model,
    ctx: &TaggingContext,
    policy: StoppingPolicy,
    keep_prefixes: bool,
) -> PredictionTrace {
    debug_assert!(policy.validate(model.n_templates()).is_ok());
    let total = model.n_templates();
    let limit = match policy {
        StoppingPolicy::Fixed { k } => k,
        _ => total,
    };
    let margin = match policy {
        StoppingPolicy::Dynamic { margin } => Some(margin),
        _ => None,
    };

    let mut lazy = LazyFeatures::new(model, ctx);
    let mut prefix = PrefixScores::zero(model.n_labels());
    let mut kept = keep_prefixes.then(Vec::new);

    for j in 0..limit {
        let ids = lazy.ids(j);
        let contribution = block_contribution(&model.blocks[j], model.n_labels(), ids);
        prefix = extend_prefix(&prefix, &contribution);
        if let Some(v) = kept.as_mut() {
            v.push(prefix.clone());
        }
        if let Some(m) = margin {
            if let Some(label) = margin_satisfied(&prefix, m) {
                return PredictionTrace {
                    label,
                    templates_used: j + 1,
                    prefixes: kept,
                    exited_early: true,
                    extractions: lazy.extractions,
                };
            }
        }
    }

    PredictionTrace {
        label: argmax_label(&prefix.scores),
        templates_used: limit,
        prefixes: kept,
        exited_early: limit < total,
        extractions: lazy.extractions,
    }
}

/// Train-time prediction: computes prefixes until the gold label leads by
/// `m` (hinge reaches zero), or runs out of templates.
///
/// Returns every computed prefix — the learning objective sums the hinge
/// over all of them.
pub fn predict_token_train(
    model: &Model,
    ctx: &TaggingContext,
    gold: LabelId,
    m: f64,
) -> PredictionTrace {
    let total = model.n_templates();
    let mut lazy = LazyFeatures::new(model, ctx);
    let mut prefix = PrefixScores::zero(model.n_labels());
    let mut prefixes = Vec::new();
    let mut satisfied = false;

    for j in 0..total {
        let ids = lazy.ids(j);
        let contribution = block_contribution(&model.blocks[j], model.n_labels(), ids);
        prefix = extend_prefix(&prefix, &contribution);
        prefixes.push(prefix.clone());
        if hinge(&prefix, gold, m) == 0.0 {
            satisfied = true;
            break;
        }
    }

    let last = prefixes.last().expect("at least one template");
    PredictionTrace {
        label: argmax_label(&last.scores),
        templates_used: prefixes.len(),
        extractions: lazy.extractions,
        exited_early: satisfied,
        prefixes: Some(prefixes),
    }
}

/// Per-sentence tagging output.
#[derive(Debug, Clone)]
pub struct SentenceTrace {
    pub labels: Vec<LabelId>,
    pub templates_used: Vec<usize>,
    pub extractions: Vec<usize>,
}

/// Greedy left-to-right tagging: the context at position `t` carries the
/// predictions already made for positions `0..t`.
pub fn tag_sentence(model: &Model, sentence: &Sentence, policy: StoppingPolicy) -> SentenceTrace {
    let mut labels: Vec<LabelId> = Vec::with_capacity(sentence.len());
    let mut templates_used = Vec::with_capacity(sentence.len());
    let mut extractions = Vec::with_capacity(sentence.len());
    for pos in 0..sentence.len() {
        let ctx = TaggingContext::new(sentence, pos, &labels, &model.label_set);
        let trace = predict_token(model, &ctx, policy, false);
        labels.push(trace.label);
        templates_used.push(trace.templates_used);
        extractions.push(trace.extractions);
    }
    SentenceTrace {
        labels,
        templates_used,
        extractions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelSet, Token, Vocabulary};
    use crate::features::{
        default_template_list, extract_all, FeatureIndexer, TemplateList,
    };
    use crate::model::WeightBlock;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sentence(forms: &[&str]) -> Sentence {
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

    /// Random model over a small form pool plus a batch of fresh contexts.
    fn random_model(rng: &mut ChaCha8Rng, templates: TemplateList) -> (Model, Vec<Sentence>) {
        let n_labels = rng.random_range(2..5);
        let label_set =
            LabelSet::from_labels((0..n_labels).map(|i| format!("L{i}"))).unwrap();
        let pool = ["alpha", "Beta", "x-1", "dog", "Runs", "42", "ca"];
        let make_sentence = |rng: &mut ChaCha8Rng| {
            let len = rng.random_range(1..6);
            sentence(
                &(0..len)
                    .map(|_| pool[rng.random_range(0..pool.len())])
                    .collect::<Vec<_>>(),
            )
        };

        let mut indexer = FeatureIndexer::new(templates.len());
        for _ in 0..8 {
            let s = make_sentence(rng);
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
                    b.set(f as u32, y, rng.random_range(-1.5..1.5));
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
        let contexts = (0..10).map(|_| make_sentence(rng)).collect();
        (model, contexts)
    }

    /// Eager oracle: computes every prefix, then scans per-label hinges for
    /// the first margin-clearing index.
    fn eager_dynamic_oracle(
        model: &Model,
        ctx: &TaggingContext,
        m: f64,
    ) -> (LabelId, usize) {
        let feats = crate::features::extract_all_frozen(&model.templates, &model.indexer, ctx);
        let mut prefix = PrefixScores::zero(model.n_labels());
        let mut all = Vec::new();
        for j in 0..model.n_templates() {
            let c = block_contribution(&model.blocks[j], model.n_labels(), feats.ids(j));
            prefix = extend_prefix(&prefix, &c);
            all.push(prefix.clone());
        }
        for (i, p) in all.iter().enumerate() {
            for y in 0..model.n_labels() {
                if hinge(p, y, m) == 0.0 {
                    return (y, i + 1);
                }
            }
        }
        let last = all.last().unwrap();
        (argmax_label(&last.scores), all.len())
    }

    #[test]
    fn dynamic_matches_eager_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..60 {
            let (model, sentences) = random_model(&mut rng, default_template_list());
            let m = rng.random_range(0.05..4.0);
            for s in &sentences {
                let mut prev: Vec<LabelId> = Vec::new();
                for pos in 0..s.len() {
                    let ctx = TaggingContext::new(s, pos, &prev, &model.label_set);
                    let got =
                        predict_token(&model, &ctx, StoppingPolicy::Dynamic { margin: m }, false);
                    let (label, used) = eager_dynamic_oracle(&model, &ctx, m);
                    assert_eq!((got.label, got.templates_used), (label, used));
                    prev.push(got.label);
                }
            }
        }
    }

    #[test]
    fn huge_margin_degenerates_to_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (model, sentences) = random_model(&mut rng, default_template_list());
        for s in &sentences {
            let dyn_trace = tag_sentence(&model, s, StoppingPolicy::Dynamic { margin: 1e9 });
            let full_trace = tag_sentence(&model, s, StoppingPolicy::Full);
            assert_eq!(dyn_trace.labels, full_trace.labels);
            assert!(dyn_trace
                .templates_used
                .iter()
                .all(|&u| u == model.n_templates()));
        }
    }

    #[test]
    fn single_template_exit() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let templates = TemplateList::parse("w0 word 0", "t").unwrap();
        let (mut model, sentences) = random_model(&mut rng, templates);
        // Force a separating contribution for every feature.
        for f in 0..model.blocks[0].rows() {
            model.blocks[0].set(f as u32, 0, 5.0);
            for y in 1..model.n_labels() {
                model.blocks[0].set(f as u32, y, 0.0);
            }
        }
        let s = &sentences[0];
        let ctx = TaggingContext::new(s, 0, &[], &model.label_set);
        let trace = predict_token(&model, &ctx, StoppingPolicy::Dynamic { margin: 1.0 }, false);
        assert_eq!(trace.templates_used, 1);
        assert!(trace.exited_early);
    }

    #[test]
    fn lazy_contract_counts_extractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (model, sentences) = random_model(&mut rng, default_template_list());
        for policy in [
            StoppingPolicy::Dynamic { margin: 0.5 },
            StoppingPolicy::Fixed { k: 3 },
            StoppingPolicy::Full,
        ] {
            for s in &sentences {
                let trace = tag_sentence(&model, s, policy);
                assert_eq!(trace.extractions, trace.templates_used);
            }
        }
    }

    #[test]
    fn templates_used_monotone_in_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (model, sentences) = random_model(&mut rng, default_template_list());
        let margins = [0.1, 0.5, 1.0, 2.0, 5.0];
        for s in &sentences {
            let mut last: Option<Vec<usize>> = None;
            for &m in &margins {
                let trace = tag_sentence(&model, s, StoppingPolicy::Dynamic { margin: m });
                if let Some(prev) = &last {
                    for (a, b) in prev.iter().zip(&trace.templates_used) {
                        assert!(a <= b, "margin {m} decreased templates_used");
                    }
                }
                last = Some(trace.templates_used);
            }
        }
    }

    #[test]
    fn train_prediction_stops_at_gold_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (model, sentences) = random_model(&mut rng, default_template_list());
        let m = 0.7;
        for s in &sentences {
            let mut prev: Vec<LabelId> = Vec::new();
            for pos in 0..s.len() {
                let ctx = TaggingContext::new(s, pos, &prev, &model.label_set);
                for gold in 0..model.n_labels() {
                    let trace = predict_token_train(&model, &ctx, gold, m);
                    let prefixes = trace.prefixes.as_ref().unwrap();
                    assert_eq!(prefixes.len(), trace.templates_used);
                    assert_eq!(trace.extractions, trace.templates_used);
                    // Eager oracle for the stopping index.
                    let feats = crate::features::extract_all_frozen(
                        &model.templates,
                        &model.indexer,
                        &ctx,
                    );
                    let mut p = PrefixScores::zero(model.n_labels());
                    let mut want = model.n_templates();
                    for j in 0..model.n_templates() {
                        let c = block_contribution(
                            &model.blocks[j],
                            model.n_labels(),
                            feats.ids(j),
                        );
                        p = extend_prefix(&p, &c);
                        if hinge(&p, gold, m) == 0.0 {
                            want = j + 1;
                            break;
                        }
                    }
                    assert_eq!(trace.templates_used, want);
                }
                let next = predict_token(
                    &model,
                    &ctx,
                    StoppingPolicy::Dynamic { margin: m },
                    false,
                );
                prev.push(next.label);
            }
        }
    }

    #[test]
    fn zero_weight_model_never_satisfies_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (mut model, sentences) = random_model(&mut rng, default_template_list());
        for b in &mut model.blocks {
            let rows = b.rows();
            for f in 0..rows {
                for y in 0..model.label_set.len() {
                    b.set(f as u32, y, 0.0);
                }
            }
        }
        let s = &sentences[0];
        let ctx = TaggingContext::new(s, 0, &[], &model.label_set);
        let trace = predict_token_train(&model, &ctx, 0, 1.0);
        assert_eq!(trace.templates_used, model.n_templates());
        assert!(!trace.exited_early);
    }

    #[test]
    fn tagging_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let (model, sentences) = random_model(&mut rng, default_template_list());
        let s = &sentences[0];
        let a = tag_sentence(&model, s, StoppingPolicy::Dynamic { margin: 0.8 });
        let b = tag_sentence(&model, s, StoppingPolicy::Dynamic { margin: 0.8 });
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.templates_used, b.templates_used);
    }

    #[test]
    fn kept_prefixes_match_templates_used() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let (model, sentences) = random_model(&mut rng, default_template_list());
        for policy in [
            StoppingPolicy::Dynamic { margin: 0.6 },
            StoppingPolicy::Fixed { k: 4 },
            StoppingPolicy::Full,
        ] {
            for s in &sentences {
                let ctx = TaggingContext::new(s, 0, &[], &model.label_set);
                let trace = predict_token(&model, &ctx, policy, true);
                let prefixes = trace.prefixes.expect("kept");
                assert_eq!(prefixes.len(), trace.templates_used);
                for (i, p) in prefixes.iter().enumerate() {
                    assert_eq!(p.prefix_len, i + 1);
                }
            }
        }
    }

    #[test]
    fn policy_validation() {
        assert!(StoppingPolicy::Dynamic { margin: 0.0 }.validate(5).is_err());
        assert!(StoppingPolicy::Fixed { k: 0 }.validate(5).is_err());
        assert!(StoppingPolicy::Fixed { k: 6 }.validate(5).is_err());
        assert!(StoppingPolicy::Fixed { k: 5 }.validate(5).is_ok());
        assert!(StoppingPolicy::Full.validate(5).is_ok());
    }
}
