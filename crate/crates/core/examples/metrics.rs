//! Metric arithmetic: LEAD bound, DSAE and zero-prefix filtering on a
//! hand-made loss table.
//!
//! cargo run --example metrics

use extractive_compression::lm::{LossRow, LossTable, TargetKind};
use extractive_compression::metrics::{
    adjusted_log_ppl, conditional_log_ppl, dsae, lead_upper_bound, unadjusted_log_ppl, zero_prefix_ppl,
};
use extractive_compression::scoring::SelectionResult;

fn main() -> extractive_compression::Result<()> {
    // models at 3.59 and 3.84 nats on sentences of 27 words on average
    for base in [3.59, 3.84] {
        let bound = lead_upper_bound(base, 27.0, 7)?;
        println!("base {base:.2}: LEAD bound at M = 7 is {bound:.3}");
    }
    println!("DSAE(K = 8, V = 32000, 3.59 -> 2.66) = {:.3}", dsae(8.0, 32000, 3.59, 2.66)?);

    use TargetKind::*;
    let table = LossTable {
        rows: vec![
            LossRow { nll: vec![4.0, 2.0, 1.0, 0.5, 0.2, 0.1], kinds: vec![Content, Content, Content, Content, End, Pad] },
            LossRow { nll: vec![3.0, 1.0, 0.3, 0.2, 0.1, 0.1], kinds: vec![Content, Content, End, Pad, Pad, Pad] },
        ],
    };
    println!("unadjusted {:.3}", unadjusted_log_ppl(&table)?);
    println!("adjusted   {:.3}", adjusted_log_ppl(&table)?);
    let first_word = SelectionResult { m: 1, rows: vec![vec![0], vec![0]] };
    println!("first word zeroed {:.3}", zero_prefix_ppl(&table, &first_word)?);
    let masks = vec![vec![false, true, true, true, false, false], vec![false, true, false, false, false, false]];
    println!("conditional, first word given {:.3}", conditional_log_ppl(&table, &masks)?);
    Ok(())
}
