//! Scores tokens by tf-idf, keeps the top M per sentence in their original
//! order and prints transformed samples next to the LEAD prefix.
//!
//! cargo run --example tfidf_selection

use extractive_compression::corpus::{build_vocab, context_length, max_words, Corpus, SEP};
use extractive_compression::scoring::{IdfTable, SelectionResult, TieBreak};
use extractive_compression::synthetic::{generate, SyntheticConfig};
use extractive_compression::transform::transform_with_selection;

fn main() -> extractive_compression::Result<()> {
    let corpus = generate(&SyntheticConfig::default())?;
    let vocab = build_vocab(&corpus.train, 1)?;
    let max_len = max_words(&corpus.train);
    let train = Corpus::encode(&vocab, &corpus.train, max_len + 2)?;
    let test = Corpus::encode(&vocab, &corpus.test[..4], max_len + 2)?;
    let m = context_length(max_len, 8.0)?;

    // document frequencies come from the training split only
    let scores = IdfTable::fit(&train)?.scores(&test)?;
    let tfidf = SelectionResult::from_scores(&scores, m, TieBreak::EarlierPosition);
    let lead = SelectionResult::lead(&test, m);
    let transformed = transform_with_selection(&test, &tfidf, SEP)?;

    for (i, sentence) in test.sentences.iter().enumerate() {
        let words = vocab.decode(sentence);
        let pick = |rows: &SelectionResult| rows.rows[i].iter().map(|&p| words[p]).collect::<Vec<_>>().join(" ");
        println!("sentence : {}", words.join(" "));
        println!("tf-idf   : {}", pick(&tfidf));
        println!("lead     : {}", pick(&lead));
        println!("sample   : {}\n", transformed.to_lines(&vocab)[i]);
    }
    Ok(())
}
