//! Trains a bidirectional LM and shows which tokens it finds hardest to
//! predict from both sides; those losses become selection scores.
//!
//! cargo run --release --example bilm_scores

use extractive_compression::corpus::{build_vocab, context_length, max_words, Corpus};
use extractive_compression::lm::{train_lm, BiLm, LmConfig, LmExample, LossMaskMode, ScoringModel, TrainConfig};
use extractive_compression::scoring::{loss_scores, SelectionResult, Strategy, TieBreak};
use extractive_compression::synthetic::{generate, SyntheticConfig};

fn main() -> extractive_compression::Result<()> {
    let syn = SyntheticConfig { train_sentences: 2000, test_sentences: 3, ..SyntheticConfig::default() };
    let corpus = generate(&syn)?;
    let vocab = build_vocab(&corpus.train, 1)?;
    let max_len = max_words(&corpus.train);
    let train = Corpus::encode(&vocab, &corpus.train, max_len + 2)?;
    let test = Corpus::encode(&vocab, &corpus.test, max_len + 2)?;

    let config = LmConfig::new(vocab.len(), 32, 1, max_len + 2, 1);
    let examples: Vec<LmExample> = train.sentences.iter().map(LmExample::from_sentence).collect();
    let cfg = TrainConfig::new(400, 16, 3e-3, 1);
    let bilm = train_lm(BiLm::init(&config)?, &examples, LossMaskMode::PostSeparatorOnly, &cfg)?.model;

    let scores = loss_scores(&bilm.per_token_losses(&test)?, &test, Strategy::Bilm)?;
    let picked = SelectionResult::from_scores(&scores, context_length(max_len, 8.0)?, TieBreak::EarlierPosition);
    for (i, sentence) in test.sentences.iter().enumerate() {
        let words = vocab.decode(sentence);
        let marked: Vec<String> = words
            .iter()
            .zip(&scores.rows[i])
            .map(|(w, s)| format!("{w}:{s:.1}"))
            .collect();
        println!("{}", marked.join(" "));
        let ctx: Vec<&str> = picked.rows[i].iter().map(|&p| words[p]).collect();
        println!("  context: {}\n", ctx.join(" "));
    }
    Ok(())
}
