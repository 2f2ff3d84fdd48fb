//! Perplexity accounting and compression metrics. All logs are natural.
//!
//! * unadjusted log-ppl: mean NLL over content *and* padding targets, i.e.
//!   over every content slot of the padded sentence;
//! * adjusted log-ppl: mean NLL over content targets only;
//! * conditional log-ppl: mean NLL over evaluation-masked targets, first
//!   per sentence and then across sentences.
//!
//! EOS targets and context targets never enter any of these averages.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LossTable, TargetKind};
use crate::scoring::{SelectionResult, Strategy};

fn mean(sum: f64, count: usize, what: &str) -> Result<f64> {
    if count == 0 {
        return Err(Error::InvalidArgument(format!("no {what} targets to average")));
    }
    Ok(sum / count as f64)
}

pub fn unadjusted_log_ppl(table: &LossTable) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0);
    for row in &table.rows {
        for (&v, &k) in row.nll.iter().zip(&row.kinds) {
            if matches!(k, TargetKind::Content | TargetKind::Pad) {
                sum += v;
                count += 1;
            }
        }
    }
    mean(sum, count, "content or padding")
}

pub fn adjusted_log_ppl(table: &LossTable) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0);
    for row in &table.rows {
        for v in row.content() {
            sum += v;
            count += 1;
        }
    }
    mean(sum, count, "content")
}

fn check_masks(table: &LossTable, masks: &[Vec<bool>]) -> Result<()> {
    if table.len() != masks.len() {
        return Err(Error::Misaligned(format!("{} masks for {} loss rows", masks.len(), table.len())));
    }
    for (i, (row, mask)) in table.rows.iter().zip(masks).enumerate() {
        if row.nll.len() != mask.len() {
            return Err(Error::Misaligned(format!(
                "row {i}: mask of length {} for {} targets",
                mask.len(),
                row.nll.len()
            )));
        }
    }
    Ok(())
}

/// `mean over sentences of (1/l_x) * sum of masked NLLs`. Sentences with an
/// empty mask have no defined per-token loss and are skipped.
pub fn conditional_log_ppl(table: &LossTable, masks: &[Vec<bool>]) -> Result<f64> {
    check_masks(table, masks)?;
    let (mut total, mut sentences) = (0.0, 0);
    for (row, mask) in table.rows.iter().zip(masks) {
        let (mut sum, mut n) = (0.0, 0);
        for (&v, &m) in row.nll.iter().zip(mask) {
            if m {
                sum += v;
                n += 1;
            }
        }
        if n > 0 {
            total += sum / n as f64;
            sentences += 1;
        }
    }
    mean(total, sentences, "masked")
}

/// Masked NLL pooled over all tokens of the corpus; comparable to
/// [`adjusted_log_ppl`].
pub fn conditional_log_ppl_pooled(table: &LossTable, masks: &[Vec<bool>]) -> Result<f64> {
    check_masks(table, masks)?;
    let (mut sum, mut count) = (0.0, 0);
    for (row, mask) in table.rows.iter().zip(masks) {
        for (&v, &m) in row.nll.iter().zip(mask) {
            if m {
                sum += v;
                count += 1;
            }
        }
    }
    mean(sum, count, "masked")
}

/// Discrete sequence autoencoding efficiency: `k * (log_p - log_p_prime) / ln(v)`.
pub fn dsae(k: f64, v: usize, log_p: f64, log_p_prime: f64) -> Result<f64> {
    if v < 2 {
        return Err(Error::InvalidArgument(format!("vocabulary size must be at least 2, got {v}")));
    }
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("compression factor must be positive, got {k}")));
    }
    Ok(k * (log_p - log_p_prime) / (v as f64).ln())
}

/// Log-ppl of a model that pays nothing for the first `ctx_len` tokens and
/// the base rate for the rest: `(avg_len - ctx_len) * base / avg_len`.
pub fn lead_upper_bound(base_log_ppl: f64, avg_len: f64, ctx_len: usize) -> Result<f64> {
    let ctx = ctx_len as f64;
    if !(avg_len > 0.0) || ctx > avg_len {
        return Err(Error::InvalidArgument(format!(
            "context of {ctx_len} tokens does not fit an average length of {avg_len}"
        )));
    }
    Ok((avg_len - ctx) * base_log_ppl / avg_len)
}

/// Content log-ppl with the NLL of every selected position replaced by zero;
/// the zeroed positions still count in the denominator.
pub fn zero_prefix_ppl(table: &LossTable, selection: &SelectionResult) -> Result<f64> {
    if table.len() != selection.rows.len() {
        return Err(Error::Misaligned(format!(
            "{} selections for {} loss rows",
            selection.rows.len(),
            table.len()
        )));
    }
    let (mut sum, mut count) = (0.0, 0);
    for (i, (row, sel)) in table.rows.iter().zip(&selection.rows).enumerate() {
        let content: Vec<f64> = row.content().collect();
        if let Some(&p) = sel.iter().find(|&&p| p >= content.len()) {
            return Err(Error::Misaligned(format!(
                "row {i}: position {p} outside {} content targets",
                content.len()
            )));
        }
        let mut zeroed = vec![false; content.len()];
        for &p in sel {
            zeroed[p] = true;
        }
        sum += content.iter().zip(&zeroed).filter(|(_, &z)| !z).map(|(v, _)| v).sum::<f64>();
        count += content.len();
    }
    mean(sum, count, "content")
}

/// Result row for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: Strategy,
    pub seed: u64,
    /// Compression factor.
    pub k: f64,
    /// Content vocabulary size.
    pub v: usize,
    /// Context tokens per sentence.
    pub m: usize,
    /// Adjusted log-ppl of the unconditioned baseline on the same test split.
    pub baseline_log_ppl: f64,
    /// Unadjusted log-ppl; only defined for models scored on padded sentences.
    pub unadjusted_log_ppl: Option<f64>,
    pub adjusted_log_ppl: Option<f64>,
    pub conditional_log_ppl: f64,
    pub conditional_log_ppl_pooled: f64,
    pub dsae: f64,
    /// Analytic bound for LEAD, from the baseline and the average length.
    pub lead_bound: Option<f64>,
    /// Baseline losses with the selected positions zeroed.
    pub zero_prefix_ppl: Option<f64>,
}

impl MetricsReport {
    /// DSAE recomputed from the row's own fields.
    pub fn recompute_dsae(&self) -> Result<f64> {
        dsae(self.k, self.v, self.baseline_log_ppl, self.conditional_log_ppl)
    }
}

/// Structured report: a JSON array of rows.
pub fn reports_to_json(reports: &[MetricsReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)? + "\n")
}

pub fn reports_from_json(text: &str) -> Result<Vec<MetricsReport>> {
    Ok(serde_json::from_str(text)?)
}

/// Aligned text table, one row per report. A LEAD row with a bound shows it
/// as `value (<bound)`.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let header = ["Model", "seed", "K", "V", "M", "log-ppl", "pooled", "no adj.", "DSAE"];
    let mut rows: Vec<Vec<String>> = Vec::new();
    for r in reports {
        let mut ppl = format!("{:.3}", r.conditional_log_ppl);
        if let (Strategy::Lead, Some(b)) = (r.strategy, r.lead_bound) {
            write!(ppl, " (<{b:.3})").unwrap();
        }
        rows.push(vec![
            r.strategy.label().to_string(),
            r.seed.to_string(),
            format!("{}", r.k),
            r.v.to_string(),
            r.m.to_string(),
            ppl,
            format!("{:.3}", r.conditional_log_ppl_pooled),
            r.unadjusted_log_ppl.map_or("-".into(), |u| format!("{u:.3}")),
            format!("{:.3}", r.dsae),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap())
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for r in &rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
