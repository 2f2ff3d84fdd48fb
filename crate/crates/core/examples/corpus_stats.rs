//! Builds a vocabulary over the synthetic corpus and prints the padding
//! statistics that drive the adjusted/unadjusted distinction.
//!
//! cargo run --example corpus_stats

use extractive_compression::corpus::{build_vocab, context_length, corpus_stats, max_words, Corpus};
use extractive_compression::synthetic::{generate, SyntheticConfig};

fn main() -> extractive_compression::Result<()> {
    let corpus = generate(&SyntheticConfig::default())?;
    let vocab = build_vocab(&corpus.train, 1)?;
    let max_len = max_words(&corpus.train);
    println!("vocabulary: {} content words, {} ids in total", vocab.content_size(), vocab.len());
    for (name, lines) in [("train", &corpus.train), ("test", &corpus.test)] {
        let encoded = Corpus::encode(&vocab, lines, max_len + 2)?;
        let s = corpus_stats(&encoded)?;
        println!(
            "{name:>5}: {} sentences, avg_len {:.2}, max_len {}, pad_ratio {:.3}, adj_factor {:.3}",
            s.sentences, s.avg_len, s.max_len, s.pad_ratio, s.adj_factor
        );
    }
    println!("context length at K = 8: {}", context_length(max_len, 8.0)?);
    let first = Corpus::encode(&vocab, &corpus.test[..1], max_len + 2)?;
    println!("first test sentence: {}", vocab.decode(&first.sentences[0]).join(" "));
    Ok(())
}
