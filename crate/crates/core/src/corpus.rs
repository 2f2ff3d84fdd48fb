//! Line-per-sentence corpora: vocabulary construction, fixed-length encoding
//! and the padding statistics the perplexity accounting depends on.
//!
//! Every sentence is stored as `BOS w1 .. wn EOS PAD ..` in a buffer of
//! `max_positions` ids. The `max_positions - 2` slots between BOS and EOS are
//! the *content slots*; all length and padding statistics are measured on
//! content slots only, so BOS and EOS never enter a denominator.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const UNK: TokenId = 4;

/// Number of reserved ids; the first corpus word gets this id.
pub const NUM_RESERVED: usize = 5;

pub const RESERVED_SYMBOLS: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

const VOCAB_HEADER_TAG: &str = "#reserved";

/// Bidirectional word/id map. Ids `0..5` are the reserved symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for sym in RESERVED_SYMBOLS {
            vocab.push(sym.to_string());
        }
        vocab
    }

    fn push(&mut self, token: String) -> TokenId {
        let id = self.id_to_token.len() as TokenId;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        id
    }

    /// Builds a vocabulary from the given words, in order, after the reserved ids.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::with_reserved();
        for w in words {
            let w = w.into();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid vocabulary token {w:?}")));
            }
            if vocab.token_to_id.contains_key(&w) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {w:?}")));
            }
            vocab.push(w);
        }
        Ok(vocab)
    }

    /// Total number of ids, reserved symbols included. This is the size of the
    /// model's output layer.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content_size() == 0
    }

    /// Number of corpus words, excluding every reserved symbol. This is the `V`
    /// of the compression-efficiency metric.
    pub fn content_size(&self) -> usize {
        self.id_to_token.len() - NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Corpus words in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.id_to_token[NUM_RESERVED..].iter().map(String::as_str)
    }

    pub fn encode_sentence(&self, line: &str, max_positions: usize) -> Result<Sentence> {
        if max_positions < 3 {
            return Err(Error::InvalidArgument(format!(
                "max_positions must be at least 3, got {max_positions}"
            )));
        }
        let slots = max_positions - 2;
        let mut ids = Vec::with_capacity(max_positions);
        ids.push(BOS);
        ids.extend(line.split_whitespace().take(slots).map(|w| self.id_or_unk(w)));
        let true_len = ids.len() - 1;
        ids.push(EOS);
        ids.resize(max_positions, PAD);
        Ok(Sentence { ids, true_len })
    }

    /// Content words of a sentence, without BOS/EOS/PAD.
    pub fn decode(&self, sentence: &Sentence) -> Vec<&str> {
        sentence
            .content()
            .iter()
            .map(|&id| self.token(id).unwrap_or(RESERVED_SYMBOLS[UNK as usize]))
            .collect()
    }

    /// Decodes arbitrary ids, reserved symbols included.
    pub fn decode_ids(&self, ids: &[TokenId]) -> Vec<&str> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(RESERVED_SYMBOLS[UNK as usize]))
            .collect()
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "{VOCAB_HEADER_TAG} {}", RESERVED_SYMBOLS.join(" ")).unwrap();
        for w in self.words() {
            writeln!(out, "{w}").unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let expected: Vec<&str> = std::iter::once(VOCAB_HEADER_TAG)
            .chain(RESERVED_SYMBOLS)
            .collect();
        if header.split_whitespace().collect::<Vec<_>>() != expected {
            return Err(Error::parse(path, 1, format!("unexpected header {header:?}")));
        }
        Self::from_words(lines.map(str::to_string))
            .map_err(|e| Error::parse(path, 0, e.to_string()))
    }
}

/// Builds a vocabulary from whitespace-tokenized lines. Words occurring at
/// least `min_count` times get ids in descending frequency order, ties broken
/// lexicographically; rarer words are left to map to UNK.
pub fn build_vocab<I, S>(lines: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for w in line.as_ref().split_whitespace() {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_count.max(1) && !RESERVED_SYMBOLS.contains(&w.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_words(entries.into_iter().map(|(w, _)| w))
}

/// One encoded sentence: `BOS`, content ids, `EOS`, then `PAD` up to the fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub ids: Vec<TokenId>,
    /// Number of content tokens (BOS and EOS excluded).
    pub true_len: usize,
}

impl Sentence {
    pub fn content(&self) -> &[TokenId] {
        &self.ids[1..1 + self.true_len]
    }

    /// Ids up to and including EOS.
    pub fn unpadded(&self) -> &[TokenId] {
        &self.ids[..self.true_len + 2]
    }

    pub fn max_positions(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub max_positions: usize,
}

impl Corpus {
    pub fn encode<I, S>(vocab: &Vocabulary, lines: I, max_positions: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let sentences = lines
            .into_iter()
            .map(|l| vocab.encode_sentence(l.as_ref(), max_positions))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            sentences,
            max_positions,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Number of content slots per sentence.
    pub fn slots(&self) -> usize {
        self.max_positions - 2
    }

    pub fn content_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.true_len).sum()
    }
}

/// Reads a corpus file: UTF-8, one sentence per line, blank lines skipped.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    /// Mean content length.
    pub avg_len: f64,
    /// Longest content length.
    pub max_len: usize,
    /// PAD fraction of all content slots.
    pub pad_ratio: f64,
    /// Content slots divided by non-PAD content slots: the factor between
    /// adjusted and unadjusted log-perplexity when padding costs nothing.
    pub adj_factor: f64,
    pub total_positions: usize,
    pub content_positions: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let content = corpus.content_tokens();
    if content == 0 {
        return Err(Error::InvalidArgument("corpus has no content tokens".into()));
    }
    let total = corpus.len() * corpus.slots();
    let max_len = corpus.sentences.iter().map(|s| s.true_len).max().unwrap_or(0);
    Ok(CorpusStats {
        sentences: corpus.len(),
        avg_len: content as f64 / corpus.len() as f64,
        max_len,
        pad_ratio: (total - content) as f64 / total as f64,
        adj_factor: total as f64 / content as f64,
        total_positions: total,
        content_positions: content,
    })
}

/// Length in words of the longest line.
pub fn max_words(lines: &[String]) -> usize {
    lines
        .iter()
        .map(|l| l.split_whitespace().count())
        .max()
        .unwrap_or(0)
}

/// Number of context tokens for compression factor `k`: `ceil(max_len / k)`.
pub fn context_length(max_len: usize, k: f64) -> Result<usize> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidArgument(format!("compression factor must be positive, got {k}")));
    }
    Ok((max_len as f64 / k).ceil() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_ordering() {
        let vocab = build_vocab(["a b", "a c"], 1).unwrap();
        assert_eq!(vocab.len(), NUM_RESERVED + 3);
        assert_eq!(vocab.content_size(), 3);
        assert_eq!(vocab.id("a"), Some(5));
        // tie between b and c is lexicographic
        assert_eq!(vocab.id("b"), Some(6));
        assert_eq!(vocab.id("c"), Some(7));
    }

    #[test]
    fn empty_stream_is_rejected() {
        let lines: [&str; 0] = [];
        assert!(matches!(build_vocab(lines, 1), Err(Error::EmptyCorpus)));
        assert!(matches!(build_vocab(["", "   "], 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn min_count_drops_rare_words_to_unk() {
        let vocab = build_vocab(["a a b"], 2).unwrap();
        assert_eq!(vocab.content_size(), 1);
        let s = vocab.encode_sentence("a b", 5).unwrap();
        assert_eq!(s.ids, vec![BOS, 5, UNK, EOS, PAD]);
    }

    #[test]
    fn encode_pads_and_counts() {
        let vocab = build_vocab(["a b"], 1).unwrap();
        let s = vocab.encode_sentence("a b", 6).unwrap();
        assert_eq!(s.ids, vec![BOS, 5, 6, EOS, PAD, PAD]);
        assert_eq!(s.true_len, 2);

        let empty = vocab.encode_sentence("", 4).unwrap();
        assert_eq!(empty.ids, vec![BOS, EOS, PAD, PAD]);
        assert_eq!(empty.true_len, 0);

        assert!(vocab.encode_sentence("a", 2).is_err());
    }

    #[test]
    fn long_line_is_truncated_to_content_slots() {
        let words: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
        let line = words.join(" ");
        let vocab = build_vocab([line.as_str()], 1).unwrap();
        let s = vocab.encode_sentence(&line, 53).unwrap();
        assert_eq!(s.true_len, 51);
        let expected: Vec<TokenId> = words[..51].iter().map(|w| vocab.id(w).unwrap()).collect();
        assert_eq!(s.content(), expected.as_slice());
        assert_eq!(s.ids[52], EOS);
    }

    #[test]
    fn stats_on_full_sentences() {
        let vocab = build_vocab(["a b c", "c b a"], 1).unwrap();
        let corpus = Corpus::encode(&vocab, ["a b c", "c b a"], 5).unwrap();
        let st = corpus_stats(&corpus).unwrap();
        assert_eq!(st.pad_ratio, 0.0);
        assert_eq!(st.adj_factor, 1.0);
        assert_eq!(st.max_len, 3);
    }

    #[test]
    fn stats_count_content_slots() {
        let vocab = build_vocab(["a b c d"], 1).unwrap();
        let corpus = Corpus::encode(&vocab, ["a", "a b c d"], 6).unwrap();
        let st = corpus_stats(&corpus).unwrap();
        // 2 sentences x 4 slots, 5 of them filled
        assert_eq!(st.total_positions, 8);
        assert_eq!(st.content_positions, 5);
        assert_eq!(st.avg_len, 2.5);
        assert_eq!(st.pad_ratio, 3.0 / 8.0);
        assert_eq!(st.adj_factor, 8.0 / 5.0);
    }

    #[test]
    fn context_length_values() {
        assert_eq!(context_length(51, 8.0).unwrap(), 7);
        assert_eq!(context_length(50, 8.0).unwrap(), 7);
        assert_eq!(context_length(37, 1.0).unwrap(), 37);
        assert!(context_length(51, 0.0).is_err());
        assert!(context_length(51, -2.0).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = build_vocab(["x y y z z z"], 1).unwrap();
        vocab.write_file(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "#reserved <pad> <bos> <eos> <sep> <unk>");
        assert_eq!(text.lines().nth(1).unwrap(), "z");
        assert_eq!(Vocabulary::read_file(&path).unwrap(), vocab);
    }
}
