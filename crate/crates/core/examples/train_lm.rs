//! Trains a small causal LM and reports its test perplexity with and
//! without padding targets.
//!
//! cargo run --release --example train_lm

use extractive_compression::corpus::{build_vocab, max_words, Corpus};
use extractive_compression::lm::{train_lm, LmConfig, LmExample, Lm, LossMaskMode, ScoringModel, TrainConfig};
use extractive_compression::metrics::{adjusted_log_ppl, unadjusted_log_ppl};
use extractive_compression::synthetic::{generate, SyntheticConfig};

fn main() -> extractive_compression::Result<()> {
    let syn = SyntheticConfig { train_sentences: 2000, test_sentences: 200, ..SyntheticConfig::default() };
    let corpus = generate(&syn)?;
    let vocab = build_vocab(&corpus.train, 1)?;
    let max_positions = max_words(&corpus.train) + 2;
    let train = Corpus::encode(&vocab, &corpus.train, max_positions)?;
    let test = Corpus::encode(&vocab, &corpus.test, max_positions)?;

    let config = LmConfig::new(vocab.len(), 32, 1, max_positions, 1);
    let examples: Vec<LmExample> = train.sentences.iter().map(LmExample::from_sentence).collect();
    let outcome = train_lm(Lm::init(&config)?, &examples, LossMaskMode::AllTokens, &TrainConfig::new(400, 16, 3e-3, 1))?;
    for (step, loss) in outcome.loss_curve.iter().enumerate().step_by(100) {
        println!("step {step:>4}: train loss {loss:.3}");
    }

    let losses = outcome.model.per_token_losses(&test)?;
    println!("uniform guess   : {:.3}", (vocab.content_size() as f64).ln());
    println!("unadjusted      : {:.3}", unadjusted_log_ppl(&losses)?);
    println!("adjusted        : {:.3}", adjusted_log_ppl(&losses)?);
    Ok(())
}
