//! Token informativeness scores and context-position selection.
//!
//! Scores are indexed by content position (0 is the first word after BOS).
//! Every selection is returned in ascending positional order, so the
//! selected tokens form a subsequence of the sentence.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence, TokenId};
use crate::error::{Error, Result};
use crate::lm::LossTable;

/// How the conditioning context of a sentence is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// No context: the plain language model.
    Baseline,
    /// The first `M` tokens.
    Lead,
    /// `M` positions drawn uniformly without replacement.
    Random,
    /// Highest tf-idf.
    Tfidf,
    /// Highest loss under the unidirectional LM.
    Lm,
    /// Highest loss under the bidirectional LM.
    Bilm,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Baseline,
        Strategy::Lead,
        Strategy::Random,
        Strategy::Tfidf,
        Strategy::Lm,
        Strategy::Bilm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Lead => "lead",
            Strategy::Random => "random",
            Strategy::Tfidf => "tfidf",
            Strategy::Lm => "lm",
            Strategy::Bilm => "bilm",
        }
    }

    /// Row label in the style of the comparison tables ("+tf-idf", "LEAD", ...).
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Baseline => "Baseline",
            Strategy::Lead => "LEAD",
            Strategy::Random => "Random",
            Strategy::Tfidf => "+tf-idf",
            Strategy::Lm => "+LM",
            Strategy::Bilm => "+bi-LM",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

/// Per-sentence scores over content positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub strategy: Strategy,
    pub rows: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(strategy: Strategy, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        Ok(ScoreTable { strategy, rows })
    }

    /// Checks that row `i` has exactly one score per content token of sentence `i`.
    pub fn check_aligned(&self, corpus: &Corpus) -> Result<()> {
        if self.rows.len() != corpus.len() {
            return Err(Error::Misaligned(format!(
                "{} score rows for {} sentences",
                self.rows.len(),
                corpus.len()
            )));
        }
        for (i, (row, s)) in self.rows.iter().zip(&corpus.sentences).enumerate() {
            if row.len() != s.true_len {
                return Err(Error::Misaligned(format!(
                    "sentence {i}: {} scores for {} tokens",
                    row.len(),
                    s.true_len
                )));
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# strategy={}\n", self.strategy);
        for (i, row) in self.rows.iter().enumerate() {
            write!(out, "{i}\t").unwrap();
            let vals: Vec<String> = row.iter().map(f64::to_string).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let strategy: Strategy = header
            .strip_prefix("# strategy=")
            .ok_or_else(|| Error::parse(path, 1, "missing strategy header"))?
            .parse()
            .map_err(|e: Error| Error::parse(path, 1, e.to_string()))?;
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let (idx, vals) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, ln + 2, "missing tab"))?;
            if idx.parse::<usize>().ok() != Some(rows.len()) {
                return Err(Error::parse(path, ln + 2, "sentence indices must be consecutive"));
            }
            let row = vals
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, ln + 2, e.to_string()))?;
            rows.push(row);
        }
        ScoreTable::new(strategy, rows)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}

/// Document frequencies of a reference corpus, each sentence one document.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    documents: usize,
    df: HashMap<TokenId, usize>,
}

impl IdfTable {
    pub fn fit(corpus: &Corpus) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut df: HashMap<TokenId, usize> = HashMap::new();
        for s in &corpus.sentences {
            let mut seen: Vec<TokenId> = s.content().to_vec();
            seen.sort_unstable();
            seen.dedup();
            for id in seen {
                *df.entry(id).or_default() += 1;
            }
        }
        Ok(IdfTable {
            documents: corpus.len(),
            df,
        })
    }

    /// `ln(N / df)`; a token absent from the reference corpus counts as `df = 1`.
    pub fn idf(&self, id: TokenId) -> f64 {
        let df = self.df.get(&id).copied().unwrap_or(1);
        (self.documents as f64 / df as f64).ln()
    }

    /// `count(t, d) * idf(t)` for every content token of `corpus`.
    /// Repeated tokens in a sentence share one score.
    pub fn scores(&self, corpus: &Corpus) -> Result<ScoreTable> {
        let rows = corpus
            .sentences
            .iter()
            .map(|s| {
                let mut tf: HashMap<TokenId, usize> = HashMap::new();
                for &id in s.content() {
                    *tf.entry(id).or_default() += 1;
                }
                s.content().iter().map(|id| tf[id] as f64 * self.idf(*id)).collect()
            })
            .collect();
        ScoreTable::new(Strategy::Tfidf, rows)
    }
}

/// tf-idf with each sentence of `corpus` as a document and idf from `corpus` itself.
pub fn tfidf_scores(corpus: &Corpus) -> Result<ScoreTable> {
    IdfTable::fit(corpus)?.scores(corpus)
}

/// Uses each content token's NLL as its score.
pub fn loss_scores(table: &LossTable, corpus: &Corpus, strategy: Strategy) -> Result<ScoreTable> {
    if table.len() != corpus.len() {
        return Err(Error::Misaligned(format!(
            "{} loss rows for {} sentences",
            table.len(),
            corpus.len()
        )));
    }
    let mut rows = Vec::with_capacity(table.len());
    for (i, (row, s)) in table.rows.iter().zip(&corpus.sentences).enumerate() {
        let scores: Vec<f64> = row.content().collect();
        if scores.len() != s.true_len {
            return Err(Error::Misaligned(format!(
                "sentence {i}: {} content losses for {} tokens",
                scores.len(),
                s.true_len
            )));
        }
        rows.push(scores);
    }
    ScoreTable::new(strategy, rows)
}

/// Which of two equal scores is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    EarlierPosition,
    LaterPosition,
}

/// Positions of the `m` highest scores, in ascending positional order.
pub fn select_top(scores: &[f64], m: usize, tie_break: TieBreak) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then_with(|| match tie_break {
            TieBreak::EarlierPosition => a.cmp(&b),
            TieBreak::LaterPosition => b.cmp(&a),
        })
    });
    order.truncate(m);
    order.sort_unstable();
    order
}

/// The first `min(m, true_len)` positions.
pub fn lead_select(sentence: &Sentence, m: usize) -> Vec<usize> {
    (0..m.min(sentence.true_len)).collect()
}

/// `min(m, true_len)` distinct positions drawn uniformly, ascending.
pub fn random_select<R: Rng>(sentence: &Sentence, m: usize, rng: &mut R) -> Vec<usize> {
    let n = sentence.true_len;
    let mut picked = rand::seq::index::sample(rng, n, m.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

/// Selected context positions for every sentence of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionResult {
    pub m: usize,
    pub rows: Vec<Vec<usize>>,
}

impl SelectionResult {
    pub fn from_scores(table: &ScoreTable, m: usize, tie_break: TieBreak) -> Self {
        SelectionResult {
            m,
            rows: table.rows.iter().map(|r| select_top(r, m, tie_break)).collect(),
        }
    }

    pub fn lead(corpus: &Corpus, m: usize) -> Self {
        SelectionResult {
            m,
            rows: corpus.sentences.iter().map(|s| lead_select(s, m)).collect(),
        }
    }

    pub fn random<R: Rng>(corpus: &Corpus, m: usize, rng: &mut R) -> Self {
        SelectionResult {
            m,
            rows: corpus.sentences.iter().map(|s| random_select(s, m, rng)).collect(),
        }
    }

    pub fn empty(corpus: &Corpus) -> Self {
        SelectionResult {
            m: 0,
            rows: vec![Vec::new(); corpus.len()],
        }
    }

    /// TSV: sentence index, M, then the ascending positions.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            let pos: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(out, "{i}\t{}\t{}", self.m, pos.join(" ")).unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut m = None;
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::parse(path, ln + 1, msg);
            let mut fields = line.split('\t');
            let idx: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("bad sentence index"))?;
            if idx != rows.len() {
                return Err(bad("sentence indices must be consecutive"));
            }
            let row_m: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("bad M"))?;
            if *m.get_or_insert(row_m) != row_m {
                return Err(bad("M differs between rows"));
            }
            let positions = fields
                .next()
                .unwrap_or("")
                .split_whitespace()
                .map(|p| p.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad position"))?;
            if positions.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("positions must be strictly ascending"));
            }
            rows.push(positions);
        }
        Ok(SelectionResult {
            m: m.unwrap_or(0),
            rows,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}
