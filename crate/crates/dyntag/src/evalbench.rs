//! Evaluation metrics, throughput benchmarks, and tradeoff sweeps.
//!
//! Speed is reported two ways. Wall-clock tokens/second matches how taggers
//! are usually compared but depends on the machine; the template-evaluation
//! ratio (`|templates| / mean templates used`) is deterministic and is what
//! CI asserts on. Wall-clock speedups run below the template ratio because
//! each token also pays fixed per-token overhead; reports print both so the
//! gap stays visible.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::features::TemplateList;
use crate::inference::{tag_sentence, StoppingPolicy};
use crate::learning::{train_dynamic, train_fixed_prefix, TrainConfig};
use crate::model::Model;

/// Evaluation metrics over one labeled corpus.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub token_accuracy: f64,
    /// Accuracy over tokens whose form is absent from the model's training
    /// vocabulary. 1.0 (vacuously) when the corpus contains no unknowns;
    /// check `unknown_tokens` to tell.
    pub unknown_accuracy: f64,
    pub mean_templates: f64,
    /// `histogram[u]` counts tokens that used exactly `u` templates;
    /// index 0 is always empty and the entries sum to `tokens`.
    pub template_usage_histogram: Vec<u64>,
    pub tokens_per_second: f64,
    /// Wall-clock ratio versus a reference report, when one was supplied.
    pub speedup_vs_reference: Option<f64>,
    pub tokens: u64,
    pub unknown_tokens: u64,
    /// Echo of the policy and model shape this report was produced under.
    pub config: String,
}

impl EvalReport {
    /// Deterministic speed proxy: template evaluations per token under the
    /// full policy divided by the same under this report's policy.
    pub fn template_eval_speedup(&self, n_templates: usize) -> f64 {
        n_templates as f64 / self.mean_templates
    }

    /// Records the wall-clock ratio against a reference throughput
    /// (typically the same corpus under the full policy).
    pub fn with_reference_throughput(mut self, reference_tokens_per_second: f64) -> Self {
        self.speedup_vs_reference = Some(self.tokens_per_second / reference_tokens_per_second);
        self
    }
}

/// Tags every sentence and aggregates the metrics.
///
/// Fans out across sentences (the model is read-only); all metrics except
/// `tokens_per_second` are exact integer aggregates, so repeated calls
/// agree bit for bit.
pub fn evaluate(model: &Model, test: &[Sentence], policy: StoppingPolicy) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyCorpus("evaluation set".into()));
    }
    policy.validate(model.n_templates())?;

    struct SentenceStats {
        correct: u64,
        tokens: u64,
        unk_correct: u64,
        unk_tokens: u64,
        templates: u64,
        histogram: Vec<u64>,
    }

    let n_templates = model.n_templates();
    let start = Instant::now();
    let per_sentence: Vec<SentenceStats> = test
        .par_iter()
        .map(|s| {
            let trace = tag_sentence(model, s, policy);
            let mut stats = SentenceStats {
                correct: 0,
                tokens: 0,
                unk_correct: 0,
                unk_tokens: 0,
                templates: 0,
                histogram: vec![0; n_templates + 1],
            };
            for (i, token) in s.tokens.iter().enumerate() {
                let gold = token.gold_label.ok_or(()).ok();
                let hit = gold == Some(trace.labels[i]);
                stats.tokens += 1;
                stats.correct += u64::from(hit);
                stats.templates += trace.templates_used[i] as u64;
                stats.histogram[trace.templates_used[i]] += 1;
                if !model.vocabulary.contains(&token.form) {
                    stats.unk_tokens += 1;
                    stats.unk_correct += u64::from(hit);
                }
            }
            stats
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();

    let mut correct = 0u64;
    let mut tokens = 0u64;
    let mut unk_correct = 0u64;
    let mut unk_tokens = 0u64;
    let mut templates = 0u64;
    let mut histogram = vec![0u64; n_templates + 1];
    for s in per_sentence {
        correct += s.correct;
        tokens += s.tokens;
        unk_correct += s.unk_correct;
        unk_tokens += s.unk_tokens;
        templates += s.templates;
        for (h, v) in histogram.iter_mut().zip(s.histogram) {
            *h += v;
        }
    }
    debug_assert_eq!(histogram.iter().sum::<u64>(), tokens);

    // Gold labels are required for accuracy; a missing one is a caller bug.
    for s in test {
        for t in &s.tokens {
            if t.gold_label.is_none() {
                return Err(Error::Label(format!(
                    "evaluation token {:?} has no gold label",
                    t.form
                )));
            }
        }
    }

    Ok(EvalReport {
        token_accuracy: correct as f64 / tokens as f64,
        unknown_accuracy: if unk_tokens == 0 {
            1.0
        } else {
            unk_correct as f64 / unk_tokens as f64
        },
        mean_templates: templates as f64 / tokens as f64,
        template_usage_histogram: histogram,
        tokens_per_second: if elapsed > 0.0 {
            tokens as f64 / elapsed
        } else {
            f64::INFINITY
        },
        speedup_vs_reference: None,
        tokens,
        unknown_tokens: unk_tokens,
        config: format!("policy={policy} templates={n_templates}"),
    })
}

/// Timing result of [`benchmark`].
#[derive(Debug, Clone)]
pub struct BenchResult {
    /// Median tokens/second over the repetitions (warm-up excluded).
    pub tokens_per_second: f64,
    /// Mean template evaluations per token: `sum(templates_used) / tokens`.
    /// Machine-independent.
    pub template_evals_per_token: f64,
    pub repetitions: usize,
    pub tokens: u64,
}

/// Measures tagging throughput: one warm-up pass, then `repetitions` timed
/// single-threaded passes, reporting the median.
pub fn benchmark(
    model: &Model,
    test: &[Sentence],
    policy: StoppingPolicy,
    repetitions: usize,
) -> Result<BenchResult> {
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "benchmark needs at least 3 repetitions, got {repetitions}"
        )));
    }
    if test.is_empty() {
        return Err(Error::EmptyCorpus("benchmark set".into()));
    }
    policy.validate(model.n_templates())?;

    // Warm-up, also collects the deterministic proxy.
    let mut template_evals = 0u64;
    let mut tokens = 0u64;
    for s in test {
        let trace = tag_sentence(model, s, policy);
        template_evals += trace.templates_used.iter().map(|&u| u as u64).sum::<u64>();
        tokens += s.len() as u64;
    }

    let mut rates = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for s in test {
            std::hint::black_box(tag_sentence(model, s, policy));
        }
        let elapsed = start.elapsed().as_secs_f64();
        rates.push(tokens as f64 / elapsed);
    }
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if repetitions % 2 == 1 {
        rates[repetitions / 2]
    } else {
        (rates[repetitions / 2 - 1] + rates[repetitions / 2]) / 2.0
    };

    Ok(BenchResult {
        tokens_per_second: median,
        template_evals_per_token: template_evals as f64 / tokens as f64,
        repetitions,
        tokens,
    })
}

/// One point of a tradeoff curve; rows of the sweep CSV.
///
/// CSV schema (stable):
/// `series,x,y,margin,k,accuracy,unk_accuracy,mean_templates,tokens_per_sec`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// `dynamic-margin-sweep`, `dynamic-margin-infer`, `fixed-prefix-sweep`
    /// or `truncated-dynamic`.
    pub series: String,
    /// Mean templates used (margin series) or prefix length (fixed series).
    pub x: f64,
    /// Token accuracy.
    pub y: f64,
    pub margin: Option<f64>,
    pub k: Option<usize>,
    pub accuracy: f64,
    pub unk_accuracy: f64,
    pub mean_templates: f64,
    pub tokens_per_sec: f64,
}

fn point(series: &str, report: &EvalReport, margin: Option<f64>, k: Option<usize>) -> CurvePoint {
    let x = match k {
        Some(k) => k as f64,
        None => report.mean_templates,
    };
    CurvePoint {
        series: series.to_string(),
        x,
        y: report.token_accuracy,
        margin,
        k,
        accuracy: report.token_accuracy,
        unk_accuracy: report.unknown_accuracy,
        mean_templates: report.mean_templates,
        tokens_per_sec: report.tokens_per_second,
    }
}

/// Accuracy/work tradeoff as the margin varies.
///
/// `retrain = true` trains one model per margin (the margin is a training
/// hyperparameter); `retrain = false` trains once with the base config and
/// only varies the inference margin — cheaper, and labeled as its own
/// series in the output.
pub fn sweep_margin(
    train: &Corpus,
    dev: &[Sentence],
    test: &[Sentence],
    templates: &TemplateList,
    base_cfg: &TrainConfig,
    margins: &[f64],
    retrain: bool,
) -> Result<Vec<CurvePoint>> {
    if margins.is_empty() {
        return Err(Error::Config("margin sweep needs at least one margin".into()));
    }
    for &m in margins {
        if m.is_nan() || m <= 0.0 {
            return Err(Error::Config(format!("sweep margin must be > 0, got {m}")));
        }
    }
    let mut points = Vec::with_capacity(margins.len());
    if retrain {
        for &m in margins {
            let cfg = TrainConfig {
                margin: m,
                ..base_cfg.clone()
            };
            let model = train_dynamic(train, dev, templates, &cfg)?;
            let report = evaluate(&model, test, StoppingPolicy::Dynamic { margin: m })?;
            points.push(point("dynamic-margin-sweep", &report, Some(m), None));
        }
    } else {
        let model = train_dynamic(train, dev, templates, base_cfg)?;
        for &m in margins {
            let report = evaluate(&model, test, StoppingPolicy::Dynamic { margin: m })?;
            points.push(point("dynamic-margin-infer", &report, Some(m), None));
        }
    }
    Ok(points)
}

/// Accuracy of a separately trained model for each template prefix length.
/// `ks = None` sweeps every prefix 1..=T.
///
/// Accuracy is usually non-decreasing in the prefix length; a drop beyond
/// 0.5% absolute between consecutive swept lengths is flagged on stderr
/// (more features genuinely can hurt), never treated as an error.
pub fn sweep_fixed_prefix(
    train: &Corpus,
    dev: &[Sentence],
    test: &[Sentence],
    templates: &TemplateList,
    cfg: &TrainConfig,
    ks: Option<&[usize]>,
) -> Result<Vec<CurvePoint>> {
    let all: Vec<usize> = (1..=templates.len()).collect();
    let ks = ks.unwrap_or(&all);
    let mut points: Vec<CurvePoint> = Vec::with_capacity(ks.len());
    for &k in ks {
        let model = train_fixed_prefix(train, dev, templates, k, cfg)?;
        let report = evaluate(&model, test, StoppingPolicy::Full)?;
        if let Some(prev) = points.last() {
            if prev.k < Some(k) && report.token_accuracy < prev.accuracy - 0.005 {
                eprintln!(
                    "note: fixed-prefix accuracy dropped {:.4} -> {:.4} between k={} and k={k}",
                    prev.accuracy,
                    report.token_accuracy,
                    prev.k.unwrap_or(0)
                );
            }
        }
        points.push(point("fixed-prefix-sweep", &report, None, Some(k)));
    }
    Ok(points)
}

/// A dynamic-trained model evaluated with hard truncation at each prefix
/// length, for comparison against the separately trained fixed models.
pub fn truncated_dynamic_points(
    model: &Model,
    test: &[Sentence],
    ks: &[usize],
) -> Result<Vec<CurvePoint>> {
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let report = evaluate(model, test, StoppingPolicy::Fixed { k })?;
        points.push(point("truncated-dynamic", &report, None, Some(k)));
    }
    Ok(points)
}

/// Writes curve points with the documented CSV schema.
pub fn write_curve_csv<P: AsRef<Path>>(points: &[CurvePoint], path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads curve points back from the CSV schema.
pub fn read_curve_csv<P: AsRef<Path>>(path: P) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize()
        .map(|row| row.map_err(csv_err))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        csv_err(e)
    }
}

/// Renders a report as the standard table block used by the CLI.
pub fn format_report(report: &EvalReport, n_templates: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<22}{}\n", "config", report.config));
    out.push_str(&format!(
        "{:<22}{:.4} ({} tokens)\n",
        "tok. accuracy", report.token_accuracy, report.tokens
    ));
    out.push_str(&format!(
        "{:<22}{:.4} ({} tokens)\n",
        "unk. accuracy", report.unknown_accuracy, report.unknown_tokens
    ));
    out.push_str(&format!(
        "{:<22}{:.3} of {}\n",
        "feat. templates", report.mean_templates, n_templates
    ));
    out.push_str(&format!(
        "{:<22}{:.2}x (template-evaluation ratio)\n",
        "speedup proxy",
        report.template_eval_speedup(n_templates)
    ));
    out.push_str(&format!(
        "{:<22}{:.0}\n",
        "tokens/sec", report.tokens_per_second
    ));
    if let Some(s) = report.speedup_vs_reference {
        out.push_str(&format!("{:<22}{s:.2}x (wall-clock vs reference)\n", "speedup"));
    }
    out
}
