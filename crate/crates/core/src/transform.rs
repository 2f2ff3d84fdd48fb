//! Builds conditioned samples: the selected tokens in their original order,
//! then SEP, then the untouched padded sentence.
//!
//! ```text
//! like apple <sep> <bos> I like an apple . <eos> <pad> ..
//! ```
//!
//! The context comes first so that a causal model conditions on it. Only
//! targets that are content tokens of the original sentence are evaluated.

use crate::corpus::{context_length, corpus_stats, Corpus, Sentence, TokenId, Vocabulary, RESERVED_SYMBOLS, SEP};
use crate::error::{Error, Result};
use crate::lm::{LmExample, TargetKind};
use crate::scoring::{ScoreTable, SelectionResult, TieBreak};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformedSample {
    /// Context ids, SEP, then the original padded sentence.
    pub ids: Vec<TokenId>,
    /// One flag per prediction target (`ids[t + 1]` for entry `t`): true
    /// exactly when the target is a content token of the original sentence.
    pub eval_mask: Vec<bool>,
    pub ctx_len_actual: usize,
    /// Content length of the original sentence.
    pub true_len: usize,
}

impl TransformedSample {
    pub fn context(&self) -> &[TokenId] {
        &self.ids[..self.ctx_len_actual]
    }

    /// Everything after SEP: the original padded sentence.
    pub fn original(&self) -> &[TokenId] {
        &self.ids[self.ctx_len_actual + 1..]
    }

    pub fn target_kinds(&self) -> Vec<TargetKind> {
        let bos = self.ctx_len_actual + 1;
        let first_content = bos + 1;
        let eos = first_content + self.true_len;
        (1..self.ids.len())
            .map(|i| {
                if i < first_content {
                    TargetKind::Context
                } else if i < eos {
                    TargetKind::Content
                } else if i == eos {
                    TargetKind::End
                } else {
                    TargetKind::Pad
                }
            })
            .collect()
    }

    pub fn to_example(&self) -> LmExample {
        LmExample {
            ids: self.ids.clone(),
            kinds: self.target_kinds(),
        }
    }
}

/// Prepends the tokens at `selection` (ascending content positions) and SEP.
pub fn transform_sentence(sentence: &Sentence, selection: &[usize], sep: TokenId) -> Result<TransformedSample> {
    if selection.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("selection must be strictly ascending".into()));
    }
    if let Some(&p) = selection.iter().find(|&&p| p >= sentence.true_len) {
        return Err(Error::InvalidArgument(format!(
            "selected position {p} is outside the {} content tokens",
            sentence.true_len
        )));
    }
    let content = sentence.content();
    let mut ids: Vec<TokenId> = selection.iter().map(|&p| content[p]).collect();
    ids.push(sep);
    ids.extend_from_slice(&sentence.ids);
    let mut sample = TransformedSample {
        ids,
        eval_mask: Vec::new(),
        ctx_len_actual: selection.len(),
        true_len: sentence.true_len,
    };
    sample.eval_mask = eval_mask(&sample);
    Ok(sample)
}

/// True exactly at targets that are content tokens of the original sentence.
pub fn eval_mask(sample: &TransformedSample) -> Vec<bool> {
    sample
        .target_kinds()
        .into_iter()
        .map(|k| k == TargetKind::Content)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformedCorpus {
    pub samples: Vec<TransformedSample>,
    pub m: usize,
}

impl TransformedCorpus {
    pub fn examples(&self) -> Vec<LmExample> {
        self.samples.iter().map(TransformedSample::to_example).collect()
    }

    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.samples.iter().map(|s| s.eval_mask.clone()).collect()
    }

    /// Longest sample, in positions.
    pub fn max_positions(&self) -> usize {
        self.samples.iter().map(|s| s.ids.len()).max().unwrap_or(0)
    }

    /// Text lines `ctx .. <sep> words ..`, without BOS/EOS/PAD.
    pub fn to_lines(&self, vocab: &Vocabulary) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| {
                let mut words = vocab.decode_ids(s.context());
                words.push(RESERVED_SYMBOLS[SEP as usize]);
                let orig = &s.original()[1..1 + s.true_len];
                words.extend(vocab.decode_ids(orig));
                words.join(" ")
            })
            .collect()
    }
}

/// Transforms every sentence with its own row of `selection`.
pub fn transform_with_selection(corpus: &Corpus, selection: &SelectionResult, sep: TokenId) -> Result<TransformedCorpus> {
    if selection.rows.len() != corpus.len() {
        return Err(Error::Misaligned(format!(
            "{} selections for {} sentences",
            selection.rows.len(),
            corpus.len()
        )));
    }
    let samples = corpus
        .sentences
        .iter()
        .zip(&selection.rows)
        .map(|(s, sel)| transform_sentence(s, sel, sep))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransformedCorpus {
        samples,
        m: selection.m,
    })
}

/// Top-`M` transformation with `M = ceil(max_len / k)` taken from the corpus itself.
pub fn transform_corpus(corpus: &Corpus, scores: &ScoreTable, k: f64, sep: TokenId) -> Result<TransformedCorpus> {
    scores.check_aligned(corpus)?;
    let m = context_length(corpus_stats(corpus)?.max_len, k)?;
    let selection = SelectionResult::from_scores(scores, m, TieBreak::EarlierPosition);
    transform_with_selection(corpus, &selection, sep)
}

/// Parses one line of a transformed corpus file back into a sample.
pub fn parse_transformed_line(vocab: &Vocabulary, line: &str, max_positions: usize) -> Result<TransformedSample> {
    let sep_sym = RESERVED_SYMBOLS[SEP as usize];
    let mut words = line.split_whitespace();
    let context: Vec<TokenId> = words.by_ref().take_while(|w| *w != sep_sym).map(|w| vocab.id_or_unk(w)).collect();
    let rest: Vec<&str> = words.collect();
    if !line.split_whitespace().any(|w| w == sep_sym) {
        return Err(Error::InvalidArgument(format!("missing {sep_sym} in {line:?}")));
    }
    let sentence = vocab.encode_sentence(&rest.join(" "), max_positions)?;
    let mut ids = context;
    let ctx = ids.len();
    ids.push(SEP);
    ids.extend_from_slice(&sentence.ids);
    let mut sample = TransformedSample {
        ids,
        eval_mask: Vec::new(),
        ctx_len_actual: ctx,
        true_len: sentence.true_len,
    };
    sample.eval_mask = eval_mask(&sample);
    Ok(sample)
}
