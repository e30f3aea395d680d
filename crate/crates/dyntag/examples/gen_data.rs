//! Regenerates the bundled synthetic corpus under `data/synth/`.
//!
//! The splits are pure functions of their seeds, so running this always
//! reproduces the committed files byte for byte:
//!
//! ```text
//! cargo run --example gen_data
//! ```

use dyntag::corpus::write_corpus;
use dyntag::synth::bundled_split;
use std::path::PathBuf;

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synth");
    std::fs::create_dir_all(&root).expect("create data/synth");
    for (name, min_tokens, seed) in [
        ("train.tsv", 30_500usize, 1u64),
        ("dev.tsv", 6_000, 2),
        ("test.tsv", 6_000, 3),
    ] {
        let corpus = bundled_split(min_tokens, seed);
        let path = root.join(name);
        write_corpus(&corpus.sentences, &corpus.labels, &path).expect("write split");
        println!(
            "{}: {} sentences, {} tokens",
            path.display(),
            corpus.sentences.len(),
            corpus.token_count()
        );
    }
}
