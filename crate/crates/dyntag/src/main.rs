//! Command-line front end: train, order, tag, eval, bench, sweep,
//! dump-templates.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal
//! invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use dyntag::corpus::{
    read_labeled_corpus, read_labeled_corpus_with, read_raw_corpus, Corpus, Sentence,
};
use dyntag::error::Error;
use dyntag::evalbench::{
    benchmark, evaluate, format_report, sweep_fixed_prefix, sweep_margin, write_curve_csv,
};
use dyntag::features::{default_template_list, TemplateList};
use dyntag::inference::{tag_sentence, StoppingPolicy};
use dyntag::learning::{
    train_dynamic, train_fixed_prefix, train_stagewise, PrevLabelSource, TrainConfig,
};
use dyntag::model::{load_model, save_model, Model};
use dyntag::ordering::{greedy_order, read_ordering, write_ordering, StageConfig};

#[derive(Parser)]
#[command(
    name = "dyntag",
    version,
    about = "Sequence labeling with dynamic feature selection: margin-based early-exit inference over ordered feature templates"
)]
struct Cli {
    /// Cap on evaluation worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it to disk.
    Train(TrainArgs),
    /// Learn a template ordering by greedy forward selection.
    Order(OrderArgs),
    /// Tag a raw one-column file.
    Tag(TagArgs),
    /// Evaluate a model on a labeled file.
    Eval(EvalArgs),
    /// Measure tagging throughput.
    Bench(BenchArgs),
    /// Produce accuracy/speed tradeoff curves as CSV.
    Sweep(SweepArgs),
    /// Print a template list in the config format.
    DumpTemplates(DumpTemplatesArgs),
}

/// Hyperparameter flags shared by the training-style commands. Flags win
/// over `--config` values, which win over the built-in defaults.
#[derive(Args, Clone)]
struct HyperArgs {
    /// Margin a label must lead by (training and dynamic inference).
    #[arg(long)]
    margin: Option<f64>,
    /// l2 regularization strength.
    #[arg(long)]
    l2: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs (per stage in stagewise mode).
    #[arg(long)]
    epochs: Option<usize>,
    /// Denominator smoothing of the adaptive step size.
    #[arg(long)]
    rda_delta: Option<f64>,
    /// Shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Left-context source while training: predicted or gold.
    #[arg(long, value_parser = ["predicted", "gold"])]
    prev_labels: Option<String>,
    /// TOML config file with the same keys as the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Optional TOML counterpart of [`HyperArgs`].
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    margin: Option<f64>,
    l2: Option<f64>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    rda_delta: Option<f64>,
    seed: Option<u64>,
    prev_label_source: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled training file (two-column TSV).
    #[arg(long)]
    train: PathBuf,
    /// Labeled development file used for epoch selection.
    #[arg(long)]
    dev: PathBuf,
    /// Template config file; omitted = the built-in default list.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Ordering file (from `dyntag order`) applied to the template list.
    #[arg(long)]
    order: Option<PathBuf>,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
    /// dynamic | stagewise | fixed:<k>
    #[arg(long, default_value = "dynamic")]
    mode: String,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct OrderArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Epochs per candidate training run.
    #[arg(long, default_value_t = 1)]
    stage_epochs: usize,
    /// Fraction of training sentences per stage epoch, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    subsample: f64,
    /// Output ordering path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raw one-column input file.
    #[arg(long)]
    input: PathBuf,
    /// dynamic | fixed:<k> | full (dynamic uses the model's margin).
    #[arg(long, default_value = "dynamic")]
    policy: String,
    /// Output path for the two-column tagged file.
    #[arg(long)]
    out: PathBuf,
    /// Append per-token templates-used as a third column.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled test file.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "dynamic")]
    policy: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "dynamic")]
    policy: String,
    /// Timed passes; the median is reported.
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Also benchmark the full policy and report speedups against it.
    #[arg(long)]
    compare_full: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// margin | fixed
    #[arg(long, default_value = "margin")]
    kind: String,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    order: Option<PathBuf>,
    /// Comma-separated margins for the margin sweep, e.g. "2,5,10".
    #[arg(long)]
    margins: Option<String>,
    /// Comma-separated prefix lengths for the fixed sweep; omitted = all.
    #[arg(long)]
    ks: Option<String>,
    /// Vary only the inference margin over a single trained model instead
    /// of retraining per margin.
    #[arg(long)]
    infer_only: bool,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct DumpTemplatesArgs {
    /// Template config to echo; omitted = the built-in default list.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Write to this path instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A CLI failure carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Invariant(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

impl HyperArgs {
    fn resolve(&self) -> CliResult<TrainConfig> {
        let file: ConfigFile = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(Error::from)?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let defaults = TrainConfig::default();
        let prev = self
            .prev_labels
            .clone()
            .or(file.prev_label_source)
            .map(|s| match s.as_str() {
                "predicted" => Ok(PrevLabelSource::Predicted),
                "gold" => Ok(PrevLabelSource::Gold),
                other => Err(usage(format!("unknown prev-label source {other:?}"))),
            })
            .transpose()?
            .unwrap_or(defaults.prev_label_source);
        let cfg = TrainConfig {
            margin: self.margin.or(file.margin).unwrap_or(defaults.margin),
            l2: self.l2.or(file.l2).unwrap_or(defaults.l2),
            learning_rate: self
                .lr
                .or(file.learning_rate)
                .unwrap_or(defaults.learning_rate),
            epochs: self.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            rda_delta: self
                .rda_delta
                .or(file.rda_delta)
                .unwrap_or(defaults.rda_delta),
            seed: self.seed.or(file.seed).unwrap_or(defaults.seed),
            prev_label_source: prev,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn load_templates(path: &Option<PathBuf>, order: &Option<PathBuf>) -> CliResult<TemplateList> {
    let list = match path {
        Some(p) => TemplateList::from_file(p)?,
        None => default_template_list(),
    };
    match order {
        Some(p) => {
            let names = read_ordering(p)?;
            Ok(list.reordered(&names)?)
        }
        None => Ok(list),
    }
}

fn parse_policy(s: &str, model: &Model) -> CliResult<StoppingPolicy> {
    let policy = if s == "dynamic" {
        StoppingPolicy::Dynamic {
            margin: model.margin,
        }
    } else if s == "full" {
        StoppingPolicy::Full
    } else if let Some(k) = s.strip_prefix("fixed:") {
        let k: usize = k
            .parse()
            .map_err(|_| usage(format!("bad fixed policy {s:?}")))?;
        StoppingPolicy::Fixed { k }
    } else {
        return Err(usage(format!(
            "unknown policy {s:?} (expected dynamic, full or fixed:<k>)"
        )));
    };
    policy
        .validate(model.n_templates())
        .map_err(|e| usage(e.to_string()))?;
    Ok(policy)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    let items: Result<Vec<T>, _> = s.split(',').map(|p| p.trim().parse::<T>()).collect();
    items.map_err(|_| usage(format!("bad {what} list {s:?}")))
}

fn read_splits(
    train: &Path,
    dev: &Path,
    test: Option<&Path>,
) -> CliResult<(Corpus, Vec<Sentence>, Vec<Sentence>)> {
    let train = read_labeled_corpus(train)?;
    let dev = read_labeled_corpus_with(dev, &train.labels)?;
    let test = match test {
        Some(p) => read_labeled_corpus_with(p, &train.labels)?,
        None => Vec::new(),
    };
    Ok((train, dev, test))
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let cfg = args.hyper.resolve()?;
    let templates = load_templates(&args.templates, &args.order)?;

    enum Mode {
        Dynamic,
        Stagewise,
        Fixed(usize),
    }
    let mode = if args.mode == "dynamic" {
        Mode::Dynamic
    } else if args.mode == "stagewise" {
        Mode::Stagewise
    } else if let Some(k) = args.mode.strip_prefix("fixed:") {
        let k: usize = k
            .parse()
            .map_err(|_| usage(format!("bad mode {:?}", args.mode)))?;
        if k == 0 || k > templates.len() {
            return Err(usage(format!(
                "fixed prefix length {k} out of range 1..={}",
                templates.len()
            )));
        }
        Mode::Fixed(k)
    } else {
        return Err(usage(format!(
            "unknown mode {:?} (expected dynamic, stagewise or fixed:<k>)",
            args.mode
        )));
    };

    let (train, dev, _) = read_splits(&args.train, &args.dev, None)?;
    let (model, report_policy) = match mode {
        Mode::Dynamic => (
            train_dynamic(&train, &dev, &templates, &cfg)?,
            StoppingPolicy::Dynamic { margin: cfg.margin },
        ),
        Mode::Stagewise => (
            train_stagewise(&train, &dev, &templates, &cfg)?,
            StoppingPolicy::Dynamic { margin: cfg.margin },
        ),
        Mode::Fixed(k) => (
            train_fixed_prefix(&train, &dev, &templates, k, &cfg)?,
            StoppingPolicy::Full,
        ),
    };
    save_model(&model, &args.out)?;
    println!("model written to {}", args.out.display());
    if !dev.is_empty() {
        let report = evaluate(&model, &dev, report_policy)?;
        print!("{}", format_report(&report, model.n_templates()));
    }
    Ok(())
}

fn cmd_order(args: &OrderArgs) -> CliResult<()> {
    let cfg = args.hyper.resolve()?;
    if args.stage_epochs == 0 {
        return Err(usage("stage epochs must be >= 1"));
    }
    if !(args.subsample > 0.0 && args.subsample <= 1.0) {
        return Err(usage(format!(
            "subsample must be in (0, 1], got {}",
            args.subsample
        )));
    }
    let templates = load_templates(&args.templates, &None)?;
    let (train, dev, _) = read_splits(&args.train, &args.dev, None)?;
    let result = greedy_order(
        &train,
        &dev,
        &templates,
        &cfg,
        StageConfig {
            epochs: args.stage_epochs,
            subsample: args.subsample,
        },
    )?;
    write_ordering(&result, &args.out)?;
    println!(
        "ordering written to {} ({} training runs)",
        args.out.display(),
        result.training_runs
    );
    for (i, name) in result.permutation.iter().enumerate() {
        let acc = result.trace[i]
            .iter()
            .find(|e| &e.name == name)
            .map(|e| e.dev_accuracy)
            .unwrap_or(f64::NAN);
        println!("{:>3}. {name:<10} dev accuracy {acc:.4}", i + 1);
    }
    Ok(())
}

fn cmd_tag(args: &TagArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let policy = parse_policy(&args.policy, &model)?;
    let sentences = read_raw_corpus(&args.input)?;

    let mut out = String::new();
    let mut tokens = 0u64;
    let mut used = 0u64;
    for s in &sentences {
        let trace = tag_sentence(&model, s, policy);
        for (i, t) in s.tokens.iter().enumerate() {
            out.push_str(&t.form);
            out.push('\t');
            out.push_str(model.label_set.name(trace.labels[i]));
            if args.stats {
                out.push('\t');
                out.push_str(&trace.templates_used[i].to_string());
            }
            out.push('\n');
            tokens += 1;
            used += trace.templates_used[i] as u64;
        }
        out.push('\n');
    }
    std::fs::write(&args.out, out).map_err(Error::from)?;
    eprintln!(
        "tagged {tokens} tokens ({:.3} templates/token) -> {}",
        used as f64 / tokens as f64,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let policy = parse_policy(&args.policy, &model)?;
    let test = read_labeled_corpus_with(&args.test, &model.label_set)?;
    let report = evaluate(&model, &test, policy)?;
    print!("{}", format_report(&report, model.n_templates()));
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let policy = parse_policy(&args.policy, &model)?;
    if args.repetitions < 3 {
        return Err(usage("bench needs --repetitions >= 3"));
    }
    let test = read_labeled_corpus_with(&args.test, &model.label_set)?;
    let bench = benchmark(&model, &test, policy, args.repetitions)?;
    println!(
        "{policy}: median {:.0} tokens/sec over {} repetitions, {:.3} template evaluations/token",
        bench.tokens_per_second, bench.repetitions, bench.template_evals_per_token
    );
    if args.compare_full {
        let full = benchmark(&model, &test, StoppingPolicy::Full, args.repetitions)?;
        println!(
            "full: median {:.0} tokens/sec, {:.3} template evaluations/token",
            full.tokens_per_second, full.template_evals_per_token
        );
        println!(
            "speedup: {:.2}x wall-clock, {:.2}x template-evaluation ratio",
            bench.tokens_per_second / full.tokens_per_second,
            full.template_evals_per_token / bench.template_evals_per_token
        );
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let cfg = args.hyper.resolve()?;
    let templates = load_templates(&args.templates, &args.order)?;
    let (train, dev, test) = read_splits(&args.train, &args.dev, Some(&args.test))?;

    let points = match args.kind.as_str() {
        "margin" => {
            let margins: Vec<f64> = match &args.margins {
                Some(s) => parse_list(s, "margin")?,
                None => vec![1.0, 2.0, 5.0, 10.0, 20.0],
            };
            if margins.iter().any(|m| m.is_nan() || *m <= 0.0) {
                return Err(usage("sweep margins must be > 0"));
            }
            sweep_margin(
                &train,
                &dev,
                &test,
                &templates,
                &cfg,
                &margins,
                !args.infer_only,
            )?
        }
        "fixed" => {
            let ks: Option<Vec<usize>> = match &args.ks {
                Some(s) => Some(parse_list(s, "prefix length")?),
                None => None,
            };
            if let Some(ks) = &ks {
                for &k in ks {
                    if k == 0 || k > templates.len() {
                        return Err(usage(format!(
                            "prefix length {k} out of range 1..={}",
                            templates.len()
                        )));
                    }
                }
            }
            sweep_fixed_prefix(&train, &dev, &test, &templates, &cfg, ks.as_deref())?
        }
        other => return Err(usage(format!("unknown sweep kind {other:?}"))),
    };

    println!("series,x,y,margin,k,accuracy,unk_accuracy,mean_templates,tokens_per_sec");
    for p in &points {
        println!(
            "{},{},{},{},{},{},{},{},{}",
            p.series,
            p.x,
            p.y,
            p.margin.map(|m| m.to_string()).unwrap_or_default(),
            p.k.map(|k| k.to_string()).unwrap_or_default(),
            p.accuracy,
            p.unk_accuracy,
            p.mean_templates,
            p.tokens_per_sec
        );
    }
    if let Some(out) = &args.out {
        write_curve_csv(&points, out)?;
        eprintln!("csv written to {}", out.display());
    }
    Ok(())
}

fn cmd_dump_templates(args: &DumpTemplatesArgs) -> CliResult<()> {
    let list = load_templates(&args.templates, &None)?;
    let text = list.to_config_string();
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(Error::from)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| usage(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Order(a) => cmd_order(a),
        Command::Tag(a) => cmd_tag(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::DumpTemplates(a) => cmd_dump_templates(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successes, not usage errors.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
