use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TargetKind;
use crate::error::{Error, Result};

/// Per-target NLLs (nats) for one sequence, aligned with target kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub nll: Vec<f64>,
    pub kinds: Vec<TargetKind>,
}

impl LossRow {
    /// NLLs of the original sentence's content tokens, in order.
    pub fn content(&self) -> impl Iterator<Item = f64> + '_ {
        self.nll
            .iter()
            .zip(&self.kinds)
            .filter(|(_, &k)| k == TargetKind::Content)
            .map(|(&v, _)| v)
    }

    pub fn content_len(&self) -> usize {
        self.kinds.iter().filter(|&&k| k == TargetKind::Content).count()
    }
}

/// One [`LossRow`] per sentence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTable {
    pub rows: Vec<LossRow>,
}

impl LossTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// TSV: sentence index, tab, space-separated NLLs. Non-content entries
    /// carry a kind suffix (`c` context, `e` end of sentence, `p` padding).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            write!(out, "{i}\t").unwrap();
            for (j, (v, k)) in row.nll.iter().zip(&row.kinds).enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                write!(out, "{v}{}", k.suffix()).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let (idx, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, ln + 1, "missing tab"))?;
            if idx.parse::<usize>().ok() != Some(rows.len()) {
                return Err(Error::parse(path, ln + 1, format!("expected sentence index {}", rows.len())));
            }
            let mut nll = Vec::new();
            let mut kinds = Vec::new();
            for tok in values.split_whitespace() {
                let cut = tok.trim_end_matches(['c', 'e', 'p']);
                let kind = TargetKind::from_suffix(&tok[cut.len()..])
                    .ok_or_else(|| Error::parse(path, ln + 1, format!("bad entry {tok:?}")))?;
                let v: f64 = cut
                    .parse()
                    .map_err(|_| Error::parse(path, ln + 1, format!("bad entry {tok:?}")))?;
                nll.push(v);
                kinds.push(kind);
            }
            rows.push(LossRow { nll, kinds });
        }
        Ok(LossTable { rows })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}
