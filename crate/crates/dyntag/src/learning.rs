//! Training: the prefix-sum hinge objective, its per-template gradient with
//! loss-augmented inference, AdaGrad step sizes with l2-regularized dual
//! averaging, and the three training regimes (dynamic, stagewise,
//! fixed-prefix).
//!
//! The dynamic objective treats the model as emitting a sequence of prefix
//! predictions: an example's loss is the sum of margin hinges over prefixes
//! 1..i*, where i* is the first prefix at which the gold label leads by the
//! margin. Each template therefore receives one hinge gradient per violating
//! prefix at or after its own position, which is what pushes early prefixes
//! to become accurate classifiers on their own.
//!
//! Weights never live in the optimizer; they are a closed-form function of
//! the accumulated gradient history:
//!
//! ```text
//! w = -lr * u / (delta + sqrt(G) + lr * l2 * t)
//! ```
//!
//! with `u` the cumulative gradient, `G` the cumulative squared gradient and
//! `t` the global update count. Untouched coordinates are brought current
//! lazily on the next touch and at epoch ends, so sparse updates stay
//! proportional to the active feature count.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocabulary, Corpus, LabelId, LabelSet, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::features::{
    extract_all, extract_all_frozen, FeatureId, FeatureIndexer, SparseFeatures, TaggingContext,
    TemplateList,
};
use crate::inference::{predict_token_train, tag_sentence, StoppingPolicy};
use crate::model::{
    argmax_label, block_contribution, extend_prefix, hinge, Model, PrefixScores, WeightBlock,
};

/// Where the left-context labels come from while training the greedy
/// tagger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrevLabelSource {
    /// Use the evolving model's own predictions (matches test time).
    Predicted,
    /// Use the gold labels (ablation mode).
    Gold,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Margin the gold label must reach for a prefix to count as done.
    pub margin: f64,
    /// l2 regularization strength (0 disables).
    pub l2: f64,
    /// Learning rate.
    pub learning_rate: f64,
    /// Passes over the training data (per stage, for stagewise).
    pub epochs: usize,
    /// Denominator smoothing for the adaptive step size.
    pub rda_delta: f64,
    /// Seed for the per-epoch sentence shuffle.
    pub seed: u64,
    pub prev_label_source: PrevLabelSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 5.0,
            l2: 1e-6,
            learning_rate: 0.5,
            epochs: 5,
            rda_delta: 1.0,
            seed: 1,
            prev_label_source: PrevLabelSource::Predicted,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.margin) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(Error::Config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if !positive(self.learning_rate) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !positive(self.rda_delta) {
            return Err(Error::Config(format!(
                "rda_delta must be > 0, got {}",
                self.rda_delta
            )));
        }
        Ok(())
    }

    /// TOML rendering used for the model-file provenance echo.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

/// Per-coordinate gradient history mirroring the weight blocks.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    grad_sum: Vec<Vec<f64>>,
    grad_sq_sum: Vec<Vec<f64>>,
    n_labels: usize,
    updates: u64,
}

impl OptimizerState {
    pub fn new(n_templates: usize, n_labels: usize) -> Self {
        Self {
            grad_sum: vec![Vec::new(); n_templates],
            grad_sq_sum: vec![Vec::new(); n_templates],
            n_labels,
            updates: 0,
        }
    }

    /// Global update counter `t`.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn ensure_rows(&mut self, j: usize, rows: usize) {
        let want = rows * self.n_labels;
        if self.grad_sum[j].len() < want {
            self.grad_sum[j].resize(want, 0.0);
            self.grad_sq_sum[j].resize(want, 0.0);
        }
    }

    /// Closed-form weight for a coordinate; coordinates with no recorded
    /// history are zero.
    fn weight(&self, j: usize, idx: usize, cfg: &TrainConfig) -> f64 {
        let u = self.grad_sum[j].get(idx).copied().unwrap_or(0.0);
        let g2 = self.grad_sq_sum[j].get(idx).copied().unwrap_or(0.0);
        let t = self.updates as f64;
        let denom = cfg.rda_delta + g2.sqrt() + cfg.learning_rate * cfg.l2 * t;
        // `+ 0.0` normalizes -0.0 so touch-time and refresh-time writes agree
        // bit for bit.
        -(cfg.learning_rate * u) / denom + 0.0
    }
}

/// Per-template sparse gradient accumulator keyed by (feature, label).
///
/// BTreeMaps keep application order deterministic.
#[derive(Debug, Clone)]
pub struct GradientSink {
    per_template: Vec<BTreeMap<(FeatureId, LabelId), f64>>,
}

impl GradientSink {
    pub fn new(n_templates: usize) -> Self {
        Self {
            per_template: vec![BTreeMap::new(); n_templates],
        }
    }

    pub fn add(&mut self, j: usize, f: FeatureId, y: LabelId, v: f64) {
        *self.per_template[j].entry((f, y)).or_insert(0.0) += v;
    }

    pub fn template(&self, j: usize) -> &BTreeMap<(FeatureId, LabelId), f64> {
        &self.per_template[j]
    }

    pub fn n_templates(&self) -> usize {
        self.per_template.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_template.iter().all(BTreeMap::is_empty)
    }

    /// Indices of templates holding at least one entry.
    pub fn touched_templates(&self) -> Vec<usize> {
        (0..self.per_template.len())
            .filter(|&j| !self.per_template[j].is_empty())
            .collect()
    }
}

/// Loss-augmented inference: the argmax over labels of the prefix score,
/// with the gold label handicapped by `m`. Ties break toward the lowest
/// label id.
pub fn loss_augmented_label(p: &PrefixScores, gold: LabelId, m: f64) -> LabelId {
    let mut best = f64::NEG_INFINITY;
    let mut best_id = 0;
    for (y, &s) in p.scores.iter().enumerate() {
        let v = if y == gold { s - m } else { s };
        if v > best {
            best = v;
            best_id = y;
        }
    }
    best_id
}

/// Sum of margin hinges over the prefixes computed by train-time
/// prediction (prefixes 1..i*).
pub fn example_loss(model: &Model, ctx: &TaggingContext, gold: LabelId, m: f64) -> f64 {
    let trace = predict_token_train(model, ctx, gold, m);
    trace
        .prefixes
        .expect("train trace keeps prefixes")
        .iter()
        .map(|p| hinge(p, gold, m))
        .sum()
}

/// Shared gradient body: one hinge gradient per violating prefix, fanned
/// out to every (unfrozen) template at or before that prefix. Prefixes with
/// a zero hinge contribute nothing (subgradient 0 at the kink).
fn gradient_from_prefixes(
    prefixes: &[PrefixScores],
    feats: &SparseFeatures,
    gold: LabelId,
    m: f64,
    trainable_from: usize,
    n_templates: usize,
) -> GradientSink {
    let mut sink = GradientSink::new(n_templates);
    for p in prefixes {
        if hinge(p, gold, m) > 0.0 {
            let contrast = loss_augmented_label(p, gold, m);
            for j in trainable_from..p.prefix_len {
                for &f in feats.ids(j) {
                    sink.add(j, f, contrast, 1.0);
                    sink.add(j, f, gold, -1.0);
                }
            }
        }
    }
    sink
}

/// Per-example gradient of the prefix-sum objective.
pub fn example_gradient(model: &Model, ctx: &TaggingContext, gold: LabelId, m: f64) -> GradientSink {
    let trace = predict_token_train(model, ctx, gold, m);
    let prefixes = trace.prefixes.expect("train trace keeps prefixes");
    let feats = extract_all_frozen(&model.templates, &model.indexer, ctx);
    gradient_from_prefixes(&prefixes, &feats, gold, m, 0, model.n_templates())
}

/// Applies one sparse gradient: bumps the update counter, accumulates the
/// history of every touched coordinate, and rewrites the touched weights
/// from the closed form. History storage grows on demand; the weight
/// blocks must already cover the touched feature ids.
pub fn rda_update(
    opt: &mut OptimizerState,
    blocks: &mut [WeightBlock],
    sink: &GradientSink,
    cfg: &TrainConfig,
) {
    opt.updates += 1;
    for (j, map) in sink.per_template.iter().enumerate() {
        if let Some((&(f_max, _), _)) = map.last_key_value() {
            opt.ensure_rows(j, f_max as usize + 1);
        }
        for (&(f, y), &g) in map {
            assert!(
                g.is_finite(),
                "non-finite gradient {g} at template {j}, feature {f}, label {y}"
            );
            let idx = f as usize * opt.n_labels + y;
            opt.grad_sum[j][idx] += g;
            opt.grad_sq_sum[j][idx] += g * g;
            blocks[j].set(f, y, opt.weight(j, idx, cfg));
        }
    }
}

/// Brings every weight of templates `from..` current with the optimizer
/// history. Needed because the closed form depends on `t` when l2 > 0, so
/// coordinates untouched for a while hold slightly stale values.
pub fn refresh_weights(
    opt: &OptimizerState,
    blocks: &mut [WeightBlock],
    cfg: &TrainConfig,
    from_template: usize,
) {
    for (j, block) in blocks.iter_mut().enumerate().skip(from_template) {
        for f in 0..block.rows() {
            for y in 0..opt.n_labels {
                let idx = f * opt.n_labels + y;
                block.set(f as FeatureId, y, opt.weight(j, idx, cfg));
            }
        }
    }
}

/// Which loss drives a training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LossMode {
    /// Sum of hinges over prefixes 1..i* (the dynamic objective).
    PrefixSum,
    /// Single hinge on the final prefix (fixed-prefix and stagewise).
    FinalHinge,
}

fn check_train_corpus(train: &Corpus) -> Result<()> {
    if train.sentences.is_empty() {
        return Err(Error::EmptyCorpus("training set".into()));
    }
    if train.labels.len() < 2 {
        return Err(Error::Label(format!(
            "training needs at least 2 distinct labels, found {}",
            train.labels.len()
        )));
    }
    for s in &train.sentences {
        for t in &s.tokens {
            if t.gold_label.is_none() {
                return Err(Error::Label(format!(
                    "training token {:?} has no gold label",
                    t.form
                )));
            }
        }
    }
    Ok(())
}

/// Token accuracy of a model on labeled sentences. Single-threaded; used
/// for dev selection inside the (deterministic) training loop.
fn dev_accuracy(model: &Model, dev: &[Sentence], policy: StoppingPolicy) -> f64 {
    let mut correct = 0u64;
    let mut total = 0u64;
    for s in dev {
        let trace = tag_sentence(model, s, policy);
        for (pred, token) in trace.labels.iter().zip(&s.tokens) {
            total += 1;
            if Some(*pred) == token.gold_label {
                correct += 1;
            }
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        correct as f64 / total as f64
    }
}

fn snapshot_model(
    labels: &LabelSet,
    active: &TemplateList,
    indexer: &FeatureIndexer,
    blocks: &[WeightBlock],
    vocabulary: &Vocabulary,
    cfg: &TrainConfig,
) -> Model {
    let mut ix = indexer.truncated(active.len());
    ix.freeze();
    Model {
        label_set: labels.clone(),
        templates: active.clone(),
        indexer: ix,
        blocks: blocks[..active.len()].to_vec(),
        margin: cfg.margin,
        vocabulary: vocabulary.clone(),
        config_echo: cfg.to_toml(),
    }
}

/// One training stage: a fresh optimizer over the active template prefix,
/// `epochs` shuffled passes, one dev evaluation per epoch, and the
/// dev-best epoch's dictionaries and weights written back into
/// `indexer`/`blocks` at the end.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    train: &Corpus,
    dev: &[Sentence],
    active: &TemplateList,
    indexer: &mut FeatureIndexer,
    blocks: &mut Vec<WeightBlock>,
    vocabulary: &Vocabulary,
    cfg: &TrainConfig,
    epochs: usize,
    subsample: f64,
    loss: LossMode,
    trainable_from: usize,
    eval_policy: StoppingPolicy,
) -> Result<f64> {
    let labels = &train.labels;
    let n_labels = labels.len();
    let mut opt = OptimizerState::new(active.len(), n_labels);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // (accuracy, indexer, blocks) of the best epoch so far.
    let mut best: Option<(f64, FeatureIndexer, Vec<WeightBlock>)> = None;

    for _epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.sentences.len()).collect();
        order.shuffle(&mut rng);
        if subsample < 1.0 {
            let keep = ((order.len() as f64 * subsample).ceil() as usize).max(1);
            order.truncate(keep);
        }

        for &si in &order {
            let sentence = &train.sentences[si];
            let mut prev: Vec<LabelId> = Vec::with_capacity(sentence.len());
            for pos in 0..sentence.len() {
                let gold = sentence.tokens[pos].gold_label.expect("checked upfront");
                let ctx = TaggingContext::new(sentence, pos, &prev, labels);
                let feats = extract_all(active, indexer, &ctx);
                for (j, block) in blocks.iter_mut().take(active.len()).enumerate() {
                    block.ensure_rows(indexer.dict_size(j));
                }

                let mut prefix = PrefixScores::zero(n_labels);
                let mut prefixes: Vec<PrefixScores> = Vec::new();
                let scan = blocks.iter().take(active.len()).zip(&feats.per_template);
                match loss {
                    LossMode::PrefixSum => {
                        for (block, ids) in scan {
                            let c = block_contribution(block, n_labels, ids);
                            prefix = extend_prefix(&prefix, &c);
                            prefixes.push(prefix.clone());
                            if hinge(&prefix, gold, cfg.margin) == 0.0 {
                                break;
                            }
                        }
                    }
                    LossMode::FinalHinge => {
                        for (block, ids) in scan {
                            let c = block_contribution(block, n_labels, ids);
                            prefix = extend_prefix(&prefix, &c);
                        }
                        prefixes.push(prefix);
                    }
                }

                let pred = argmax_label(&prefixes.last().expect("nonempty").scores);
                let sink = gradient_from_prefixes(
                    &prefixes,
                    &feats,
                    gold,
                    cfg.margin,
                    trainable_from,
                    active.len(),
                );
                rda_update(&mut opt, blocks, &sink, cfg);

                prev.push(match cfg.prev_label_source {
                    PrevLabelSource::Predicted => pred,
                    PrevLabelSource::Gold => gold,
                });
            }
        }

        refresh_weights(&opt, &mut blocks[..active.len()], cfg, trainable_from);
        let candidate = snapshot_model(labels, active, indexer, blocks, vocabulary, cfg);
        let acc = dev_accuracy(&candidate, dev, eval_policy);
        let better = match &best {
            None => true,
            // NaN accuracy (empty dev) always replaces: fall back to the
            // final epoch when there is nothing to select on.
            Some((b, _, _)) => acc.is_nan() || acc > *b,
        };
        if better {
            best = Some((acc, indexer.clone(), blocks.clone()));
        }
    }

    let (acc, best_indexer, best_blocks) = best.expect("epochs >= 1");
    *indexer = best_indexer;
    *blocks = best_blocks;
    Ok(acc)
}

/// Trains the dynamic-inference model: every prefix of the template list is
/// pushed to classify well on its own, so margin-based early exits fire as
/// soon as the evidence suffices.
pub fn train_dynamic(
    train: &Corpus,
    dev: &[Sentence],
    templates: &TemplateList,
    cfg: &TrainConfig,
) -> Result<Model> {
    train_dynamic_subsampled(train, dev, templates, cfg, 1.0)
}

/// [`train_dynamic`] with a per-epoch sentence subsample, used by the
/// quadratic ordering search to keep candidate training cheap.
pub fn train_dynamic_subsampled(
    train: &Corpus,
    dev: &[Sentence],
    templates: &TemplateList,
    cfg: &TrainConfig,
    subsample: f64,
) -> Result<Model> {
    cfg.validate()?;
    check_train_corpus(train)?;
    if !(subsample > 0.0 && subsample <= 1.0) {
        return Err(Error::Config(format!(
            "subsample fraction must be in (0, 1], got {subsample}"
        )));
    }
    let vocabulary = build_vocabulary(&train.sentences);
    let mut indexer = FeatureIndexer::new(templates.len());
    let mut blocks = vec![WeightBlock::new(train.labels.len()); templates.len()];
    run_stage(
        train,
        dev,
        templates,
        &mut indexer,
        &mut blocks,
        &vocabulary,
        cfg,
        cfg.epochs,
        subsample,
        LossMode::PrefixSum,
        0,
        StoppingPolicy::Dynamic { margin: cfg.margin },
    )?;
    let model = snapshot_model(&train.labels, templates, &indexer, &blocks, &vocabulary, cfg);
    model.validate()?;
    Ok(model)
}

/// Stagewise baseline: template 1 is trained alone for `cfg.epochs`, then
/// frozen; template 2 is added and only its block trained against the
/// residual scores; and so on through the list.
pub fn train_stagewise(
    train: &Corpus,
    dev: &[Sentence],
    templates: &TemplateList,
    cfg: &TrainConfig,
) -> Result<Model> {
    cfg.validate()?;
    check_train_corpus(train)?;
    let vocabulary = build_vocabulary(&train.sentences);
    let mut indexer = FeatureIndexer::new(templates.len());
    let mut blocks = vec![WeightBlock::new(train.labels.len()); templates.len()];
    for s in 1..=templates.len() {
        let active = templates.prefix(s)?;
        run_stage(
            train,
            dev,
            &active,
            &mut indexer,
            &mut blocks,
            &vocabulary,
            cfg,
            cfg.epochs,
            1.0,
            LossMode::FinalHinge,
            s - 1,
            StoppingPolicy::Full,
        )?;
        // This stage's dictionary and weights are now fixed.
        indexer.freeze_template(s - 1);
    }
    let model = snapshot_model(&train.labels, templates, &indexer, &blocks, &vocabulary, cfg);
    model.validate()?;
    Ok(model)
}

/// Fixed-prefix baseline: an independent model over exactly the first `k`
/// templates, trained with the ordinary multiclass hinge on the full
/// k-template score.
pub fn train_fixed_prefix(
    train: &Corpus,
    dev: &[Sentence],
    templates: &TemplateList,
    k: usize,
    cfg: &TrainConfig,
) -> Result<Model> {
    cfg.validate()?;
    check_train_corpus(train)?;
    let active = templates.prefix(k)?;
    let vocabulary = build_vocabulary(&train.sentences);
    let mut indexer = FeatureIndexer::new(active.len());
    let mut blocks = vec![WeightBlock::new(train.labels.len()); active.len()];
    run_stage(
        train,
        dev,
        &active,
        &mut indexer,
        &mut blocks,
        &vocabulary,
        cfg,
        cfg.epochs,
        1.0,
        LossMode::FinalHinge,
        0,
        StoppingPolicy::Full,
    )?;
    let model = snapshot_model(&train.labels, &active, &indexer, &blocks, &vocabulary, cfg);
    model.validate()?;
    Ok(model)
}
