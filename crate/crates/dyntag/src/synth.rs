//! Deterministic synthetic corpora.
//!
//! Two families:
//!
//! - [`bundled_split`] generates the tagging corpus that ships in `data/`
//!   (regenerate with `cargo run --example gen_data`). It is a small
//!   morphology-rich artificial language: most word forms carry suffixes
//!   that identify their tag, a pool of bare-stem forms is genuinely
//!   ambiguous between noun and verb readings (so left context matters),
//!   numbers and capitalization feed the shape templates, and a Zipf-shaped
//!   lexicon leaves a tail of forms unseen in any finite sample (so
//!   unknown-token accuracy is meaningful).
//!
//! - [`planted_corpus`] / [`planted_markov_corpus`] build corpora with
//!   known per-template predictiveness: the surface form determines the
//!   label (up to explicit noise), while single-character prefixes and
//!   suffixes cycle across labels and carry almost no signal. These back
//!   the ordering tests, where "which template is best" must be known by
//!   construction.
//!
//! Everything is a pure function of its seeds.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, LabelSet, Sentence, Token};

const TAGS: [&str; 10] = [
    "DET", "ADJ", "NOUN", "VERB", "ADV", "PRON", "PREP", "NUM", "CONJ", "PUNCT",
];

const DET: usize = 0;
const ADJ: usize = 1;
const NOUN: usize = 2;
const VERB: usize = 3;
const ADV: usize = 4;
const PRON: usize = 5;
const PREP: usize = 6;
const NUM: usize = 7;
const CONJ: usize = 8;
const PUNCT: usize = 9;

const DET_WORDS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "each", "every", "some",
];
const PRON_WORDS: &[&str] = &["he", "she", "it", "they", "we", "you", "i", "who", "which"];
const PREP_WORDS: &[&str] = &["in", "on", "at", "by", "with", "from", "to", "of", "for", "under"];
const CONJ_WORDS: &[&str] = &["and", "or", "but", "nor", "so", "yet"];
const PUNCT_WORDS: &[&str] = &[".", "!", "?"];
const NUM_WORDS: &[&str] = &[
    "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "dozen",
];

const SYLLABLES: &[&str] = &[
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe", "fi", "fo", "ga",
    "ge", "gi", "go", "ka", "ke", "ki", "ko", "la", "le", "li", "lo", "ma", "me", "mi", "mo",
    "na", "ne", "ni", "no", "pa", "pe", "pi", "po", "ra", "re", "ri", "ro", "sa", "se", "si",
    "so", "ta", "te", "ti", "to", "va", "ve", "vi", "vo", "za", "ze", "zi", "zo",
];

const NOUN_SUFFIXES: &[&str] = &["tion", "ness", "ment", "ism", "ance", "age", "ery", "hood"];
const VERB_SUFFIXES: &[&str] = &["ize", "ify", "ate", "en"];
const ADJ_SUFFIXES: &[&str] = &["ous", "ful", "ive", "able", "ish", "al"];

/// Fraction of noun/verb slots filled from the ambiguous bare-stem pool.
const AMBIGUOUS_RATE: f64 = 0.18;

struct Lexicon {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjs: Vec<String>,
    advs: Vec<String>,
    ambiguous: Vec<String>,
}

fn stem(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(SYLLABLES[rng.random_range(0..SYLLABLES.len())]);
    }
    s
}

impl Lexicon {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let suffixed = |count: usize, suffixes: &[&str], rng: &mut ChaCha8Rng| {
            let mut pool = Vec::with_capacity(count);
            for i in 0..count {
                let base = stem(rng, 1 + (i % 2));
                pool.push(format!("{base}{}", suffixes[i % suffixes.len()]));
            }
            pool.sort_unstable();
            pool.dedup();
            pool
        };
        let nouns = suffixed(600, NOUN_SUFFIXES, &mut rng);
        let verbs = suffixed(600, VERB_SUFFIXES, &mut rng);
        let adjs = suffixed(400, ADJ_SUFFIXES, &mut rng);
        let advs = suffixed(250, &["ly"], &mut rng);
        let mut ambiguous = Vec::with_capacity(120);
        for _ in 0..120 {
            ambiguous.push(stem(&mut rng, 2));
        }
        ambiguous.sort_unstable();
        ambiguous.dedup();
        Self {
            nouns,
            verbs,
            adjs,
            advs,
            ambiguous,
        }
    }
}

/// Zipf-shaped pool index: heavy head, long tail.
fn zipf_index(rng: &mut ChaCha8Rng, len: usize) -> usize {
    let u: f64 = rng.random();
    ((u.powi(3) * len as f64) as usize).min(len - 1)
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &'a [&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

fn pick_zipf<'a>(rng: &mut ChaCha8Rng, pool: &'a [String]) -> &'a str {
    &pool[zipf_index(rng, pool.len())]
}

/// Weighted draw over tag ids.
fn weighted(rng: &mut ChaCha8Rng, options: &[(usize, f64)]) -> usize {
    let total: f64 = options.iter().map(|&(_, w)| w).sum();
    let mut x: f64 = rng.random::<f64>() * total;
    for &(tag, w) in options {
        if x < w {
            return tag;
        }
        x -= w;
    }
    options.last().unwrap().0
}

fn start_tag(rng: &mut ChaCha8Rng) -> usize {
    weighted(
        rng,
        &[(DET, 0.40), (PRON, 0.27), (NOUN, 0.18), (NUM, 0.09), (ADJ, 0.06)],
    )
}

fn next_tag(rng: &mut ChaCha8Rng, cur: usize) -> usize {
    match cur {
        DET => weighted(rng, &[(ADJ, 0.25), (NOUN, 0.75)]),
        ADJ => weighted(rng, &[(NOUN, 0.78), (ADJ, 0.12), (CONJ, 0.10)]),
        NOUN => weighted(
            rng,
            &[
                (VERB, 0.44),
                (PREP, 0.16),
                (CONJ, 0.10),
                (PUNCT, 0.25),
                (NOUN, 0.05),
            ],
        ),
        VERB => weighted(
            rng,
            &[
                (DET, 0.34),
                (ADV, 0.15),
                (PREP, 0.16),
                (PRON, 0.09),
                (NUM, 0.06),
                (PUNCT, 0.20),
            ],
        ),
        ADV => weighted(rng, &[(VERB, 0.45), (ADJ, 0.22), (ADV, 0.08), (PUNCT, 0.25)]),
        PRON => weighted(rng, &[(VERB, 0.72), (ADV, 0.12), (PUNCT, 0.16)]),
        PREP => weighted(rng, &[(DET, 0.52), (NOUN, 0.28), (NUM, 0.10), (PRON, 0.10)]),
        NUM => weighted(rng, &[(NOUN, 0.80), (PUNCT, 0.20)]),
        CONJ => weighted(rng, &[(DET, 0.30), (NOUN, 0.25), (VERB, 0.25), (PRON, 0.20)]),
        _ => PUNCT,
    }
}

fn emit(rng: &mut ChaCha8Rng, lex: &Lexicon, tag: usize) -> String {
    match tag {
        DET => pick(rng, DET_WORDS).to_string(),
        PRON => pick(rng, PRON_WORDS).to_string(),
        PREP => pick(rng, PREP_WORDS).to_string(),
        CONJ => pick(rng, CONJ_WORDS).to_string(),
        PUNCT => pick(rng, PUNCT_WORDS).to_string(),
        ADJ => pick_zipf(rng, &lex.adjs).to_string(),
        ADV => pick_zipf(rng, &lex.advs).to_string(),
        NOUN => {
            if rng.random::<f64>() < AMBIGUOUS_RATE {
                pick_zipf(rng, &lex.ambiguous).to_string()
            } else {
                pick_zipf(rng, &lex.nouns).to_string()
            }
        }
        VERB => {
            if rng.random::<f64>() < AMBIGUOUS_RATE {
                pick_zipf(rng, &lex.ambiguous).to_string()
            } else {
                pick_zipf(rng, &lex.verbs).to_string()
            }
        }
        NUM => {
            if rng.random::<f64>() < 0.65 {
                rng.random_range(0..10_000u32).to_string()
            } else {
                pick(rng, NUM_WORDS).to_string()
            }
        }
        _ => unreachable!(),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

const MAX_SENTENCE_LEN: usize = 22;
/// Lexicon seed shared by every bundled split, so train/dev/test agree on
/// which forms exist and what they mean.
const LEXICON_SEED: u64 = 0xD17A;

/// Generates one split of the bundled corpus: sentences are drawn until the
/// split holds at least `min_tokens` tokens. Splits share a lexicon; pass a
/// different `split_seed` per split to get disjoint sentence streams.
pub fn bundled_split(min_tokens: usize, split_seed: u64) -> Corpus {
    let lex = Lexicon::new(LEXICON_SEED);
    let labels = LabelSet::from_labels(TAGS).expect("distinct tag names");
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let mut sentences = Vec::new();
    let mut tokens = 0usize;
    while tokens < min_tokens {
        let mut sent = Vec::new();
        let mut tag = start_tag(&mut rng);
        loop {
            let mut form = emit(&mut rng, &lex, tag);
            if sent.is_empty() && tag != PUNCT {
                form = capitalize(&form);
            }
            sent.push(Token {
                form,
                gold_label: Some(tag),
            });
            if tag == PUNCT {
                break;
            }
            tag = if sent.len() + 1 >= MAX_SENTENCE_LEN {
                PUNCT
            } else {
                next_tag(&mut rng, tag)
            };
        }
        tokens += sent.len();
        sentences.push(Sentence { tokens: sent });
    }
    Corpus { sentences, labels }
}

const ONSETS: &[char] = &['k', 'l', 'm', 'n', 'p', 'r', 's', 't'];
const CODAS: &[char] = &['a', 'e', 'i', 'o', 'u', 'b', 'd', 'g'];

/// Form `k` of label `ell` in a planted corpus. Globally unique via the
/// middle letters; first and last characters cycle over shared alphabets so
/// one-character prefixes and suffixes say little about the label.
fn planted_form(ell: usize, k: usize, per_label: usize) -> String {
    let id = ell * per_label + k;
    let mid_a = (b'a' + (id % 26) as u8) as char;
    let mid_b = (b'a' + ((id / 26) % 26) as u8) as char;
    let onset = ONSETS[(id * 5 + 1) % ONSETS.len()];
    let coda = CODAS[(id * 3 + 2) % CODAS.len()];
    format!("{onset}{mid_a}{mid_b}{coda}")
}

/// Corpus where the surface form alone determines the label, up to `noise`,
/// and labels follow a sticky Markov chain: with probability `stick` the
/// next label repeats the current one, otherwise it is uniform.
///
/// By design: a current-word template alone reaches about `1 - noise`
/// accuracy; a previous-label template alone reaches about
/// `stick + (1 - stick) / n_labels`; offset-word and one-character affix
/// templates hover near chance.
pub fn planted_markov_corpus(
    n_labels: usize,
    n_sentences: usize,
    seed: u64,
    noise: f64,
    stick: f64,
) -> Corpus {
    assert!(n_labels >= 2);
    let per_label = 10;
    let labels = LabelSet::from_labels((0..n_labels).map(|i| format!("L{i}"))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let len = rng.random_range(4..=10);
        let mut tokens = Vec::with_capacity(len);
        let mut label = rng.random_range(0..n_labels);
        for _ in 0..len {
            // The emitted form encodes the intended label; noise relabels
            // the token afterwards so the form becomes misleading.
            let form = planted_form(label, rng.random_range(0..per_label), per_label);
            let gold = if noise > 0.0 && rng.random::<f64>() < noise {
                rng.random_range(0..n_labels)
            } else {
                label
            };
            tokens.push(Token {
                form,
                gold_label: Some(gold),
            });
            label = if rng.random::<f64>() < stick {
                label
            } else {
                rng.random_range(0..n_labels)
            };
        }
        sentences.push(Sentence { tokens });
    }
    Corpus { sentences, labels }
}

/// Noise-free planted corpus: the current word fully determines the label.
pub fn planted_corpus(n_labels: usize, n_sentences: usize, seed: u64) -> Corpus {
    planted_markov_corpus(n_labels, n_sentences, seed, 0.0, 0.0)
}
