//! Greedy stagewise search for a template ordering.
//!
//! Each stage tries every remaining template as the next element of the
//! ordering, trains a model on the extended prefix, and keeps the candidate
//! with the best development-set token accuracy. The search is quadratic in
//! the template count — T + (T-1) + ... + 1 training runs — so stages
//! default to one cheap epoch (optionally on a sentence subsample); the
//! final ordering is meant to be handed back to a full training run.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::features::{TemplateList, TemplateSpec};
use crate::inference::{tag_sentence, StoppingPolicy};
use crate::learning::{train_dynamic_subsampled, TrainConfig};

/// One candidate evaluation inside a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEval {
    pub name: String,
    pub dev_accuracy: f64,
    pub mean_templates: f64,
}

/// The learned permutation plus the full evaluation trace behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingResult {
    /// Template names in the selected order.
    pub permutation: Vec<String>,
    /// Stage `s` holds one entry per candidate evaluated at that stage,
    /// sorted by candidate name.
    pub trace: Vec<Vec<CandidateEval>>,
    /// Total training runs launched; T(T+1)/2 for T templates.
    pub training_runs: usize,
}

/// Cheap-stage overrides applied to the base config during the search.
#[derive(Debug, Clone, Copy)]
pub struct StageConfig {
    /// Epochs per candidate training run.
    pub epochs: usize,
    /// Fraction of training sentences used per epoch, in (0, 1].
    pub subsample: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            subsample: 1.0,
        }
    }
}

fn dev_metrics(
    model: &crate::model::Model,
    dev: &[Sentence],
    margin: f64,
) -> (f64, f64) {
    let mut correct = 0u64;
    let mut total = 0u64;
    let mut used = 0u64;
    for s in dev {
        let trace = tag_sentence(model, s, StoppingPolicy::Dynamic { margin });
        for (i, t) in s.tokens.iter().enumerate() {
            total += 1;
            used += trace.templates_used[i] as u64;
            if Some(trace.labels[i]) == t.gold_label {
                correct += 1;
            }
        }
    }
    (
        correct as f64 / total as f64,
        used as f64 / total as f64,
    )
}

/// Learns a template ordering by greedy forward selection on dev accuracy.
///
/// `templates` is treated as an unordered set. Candidates within a stage
/// are independent and evaluated in parallel; the reduction is
/// deterministic because candidates are sorted by name and ties break
/// toward the lexicographically smallest name.
pub fn greedy_order(
    train: &Corpus,
    dev: &[Sentence],
    templates: &TemplateList,
    cfg: &TrainConfig,
    stage: StageConfig,
) -> Result<OrderingResult> {
    if dev.is_empty() {
        return Err(Error::EmptyCorpus("ordering needs a dev set".into()));
    }
    if stage.epochs == 0 {
        return Err(Error::Config("stage epochs must be >= 1".into()));
    }
    if !(stage.subsample > 0.0 && stage.subsample <= 1.0) {
        return Err(Error::Config(format!(
            "stage subsample must be in (0, 1], got {}",
            stage.subsample
        )));
    }
    let stage_cfg = TrainConfig {
        epochs: stage.epochs,
        ..cfg.clone()
    };

    let mut chosen: Vec<TemplateSpec> = Vec::new();
    let mut remaining: Vec<TemplateSpec> = templates.iter().cloned().collect();
    remaining.sort_by(|a, b| a.name.cmp(&b.name));

    let mut trace = Vec::new();
    let mut training_runs = 0usize;

    while !remaining.is_empty() {
        let evals: Vec<CandidateEval> = remaining
            .par_iter()
            .map(|candidate| -> Result<CandidateEval> {
                let mut specs = chosen.clone();
                specs.push(candidate.clone());
                let list = TemplateList::new(specs)?;
                let model =
                    train_dynamic_subsampled(train, dev, &list, &stage_cfg, stage.subsample)?;
                let (dev_accuracy, mean_templates) = dev_metrics(&model, dev, cfg.margin);
                Ok(CandidateEval {
                    name: candidate.name.clone(),
                    dev_accuracy,
                    mean_templates,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        training_runs += evals.len();

        // Candidates are already name-sorted; strict > keeps the first
        // (lexicographically smallest) of any accuracy tie.
        let best = evals
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, e)| {
                if e.dev_accuracy > evals[acc].dev_accuracy {
                    i
                } else {
                    acc
                }
            });
        let winner = evals[best].name.clone();
        trace.push(evals);

        let idx = remaining.iter().position(|t| t.name == winner).unwrap();
        chosen.push(remaining.remove(idx));
    }

    Ok(OrderingResult {
        permutation: chosen.into_iter().map(|t| t.name).collect(),
        trace,
        training_runs,
    })
}

/// Serializes an ordering: one template name per line, then the trace as
/// `#`-prefixed comment lines so the file stays consumable as a plain name
/// list.
pub fn write_ordering<P: AsRef<Path>>(result: &OrderingResult, path: P) -> Result<()> {
    let mut out = String::new();
    for name in &result.permutation {
        out.push_str(name);
        out.push('\n');
    }
    out.push_str("#\n# trace: stage\tcandidate\tdev_accuracy\tmean_templates\n");
    for (s, stage) in result.trace.iter().enumerate() {
        for e in stage {
            writeln!(
                out,
                "# {}\t{}\t{:.6}\t{:.4}",
                s + 1,
                e.name,
                e.dev_accuracy,
                e.mean_templates
            )
            .expect("write to String");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads the permutation part of an ordering file (comments and blank
/// lines ignored).
pub fn read_ordering<P: AsRef<Path>>(path: P) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let names: Vec<String> = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "no template names found".into(),
        });
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn six_templates() -> TemplateList {
        TemplateList::parse(
            "w0 word 0\nw-1 word -1\nw+1 word 1\np1 prefix 1 0\ns1 suffix 1 0\nt-1 prev-label 1",
            "t",
        )
        .unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            margin: 1.0,
            epochs: 1,
            learning_rate: 0.5,
            l2: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_template_is_trivial() {
        let train = synth::planted_corpus(3, 80, 71);
        let dev = synth::planted_corpus(3, 30, 72);
        let list = TemplateList::parse("w0 word 0", "t").unwrap();
        let result =
            greedy_order(&train, &dev.sentences, &list, &quick_cfg(), StageConfig::default())
                .unwrap();
        assert_eq!(result.permutation, vec!["w0".to_string()]);
        assert_eq!(result.trace.len(), 1);
        assert_eq!(result.trace[0].len(), 1);
        assert_eq!(result.training_runs, 1);
    }

    #[test]
    fn planted_best_template_selected_first() {
        // Current word carries ~95% signal, previous label ~60%, everything
        // else near chance.
        let train = synth::planted_markov_corpus(3, 300, 73, 0.05, 0.5);
        let dev = synth::planted_markov_corpus(3, 100, 74, 0.05, 0.5);
        let list = TemplateList::parse("t-1 prev-label 1\nw0 word 0", "t").unwrap();
        let result =
            greedy_order(&train, &dev.sentences, &list, &quick_cfg(), StageConfig::default())
                .unwrap();
        assert_eq!(result.permutation[0], "w0");
        assert_eq!(result.training_runs, 3);
    }

    #[test]
    fn trace_argmax_and_permutation_validity() {
        let train = synth::planted_corpus(3, 150, 75);
        let dev = synth::planted_corpus(3, 50, 76);
        let list = six_templates();
        let result =
            greedy_order(&train, &dev.sentences, &list, &quick_cfg(), StageConfig::default())
                .unwrap();

        let t = list.len();
        assert_eq!(result.training_runs, t * (t + 1) / 2);
        let mut sorted = result.permutation.clone();
        sorted.sort_unstable();
        let mut expected: Vec<String> = list.names().iter().map(|s| s.to_string()).collect();
        expected.sort_unstable();
        assert_eq!(sorted, expected);

        for (s, stage) in result.trace.iter().enumerate() {
            assert_eq!(stage.len(), t - s);
            let chosen = &result.permutation[s];
            let chosen_acc = stage.iter().find(|e| &e.name == chosen).unwrap().dev_accuracy;
            for e in stage {
                assert!(e.dev_accuracy <= chosen_acc, "stage {s}: {} beats {chosen}", e.name);
            }
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let train = synth::planted_corpus(3, 100, 77);
        let dev = synth::planted_corpus(3, 40, 78);
        let list = TemplateList::parse("w0 word 0\ns1 suffix 1 0\nt-1 prev-label 1", "t").unwrap();
        let a = greedy_order(&train, &dev.sentences, &list, &quick_cfg(), StageConfig::default())
            .unwrap();
        let b = greedy_order(&train, &dev.sentences, &list, &quick_cfg(), StageConfig::default())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dev_rejected() {
        let train = synth::planted_corpus(3, 50, 79);
        let list = six_templates();
        assert!(greedy_order(&train, &[], &list, &quick_cfg(), StageConfig::default()).is_err());
    }

    #[test]
    fn ordering_file_round_trip() {
        let result = OrderingResult {
            permutation: vec!["b".into(), "a".into(), "c".into()],
            trace: vec![vec![CandidateEval {
                name: "b".into(),
                dev_accuracy: 0.9,
                mean_templates: 1.5,
            }]],
            training_runs: 1,
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_ordering(&result, f.path()).unwrap();
        let names = read_ordering(f.path()).unwrap();
        assert_eq!(names, result.permutation);
    }
}
