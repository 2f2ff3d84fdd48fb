use extractive_compression::lm::{LossRow, LossTable, TargetKind};
use extractive_compression::metrics::{
    adjusted_log_ppl, conditional_log_ppl, conditional_log_ppl_pooled, dsae, lead_upper_bound, unadjusted_log_ppl,
    zero_prefix_ppl,
};
use extractive_compression::scoring::SelectionResult;
use proptest::prelude::*;

/// Rows of `len` content targets, EOS, then padding up to `slots + 1` targets.
fn table_strategy() -> impl Strategy<Value = (LossTable, usize)> {
    (1usize..10).prop_flat_map(|slots| {
        let row = (1..=slots).prop_flat_map(move |len| {
            prop::collection::vec(0.0f64..8.0, slots + 1).prop_map(move |nll| {
                let kinds = (0..=slots)
                    .map(|i| match i {
                        i if i < len => TargetKind::Content,
                        i if i == len => TargetKind::End,
                        _ => TargetKind::Pad,
                    })
                    .collect();
                LossRow { nll, kinds }
            })
        });
        (prop::collection::vec(row, 1..8).prop_map(|rows| LossTable { rows }), Just(slots))
    })
}

fn content_masks(t: &LossTable) -> Vec<Vec<bool>> {
    t.rows.iter().map(|r| r.kinds.iter().map(|&k| k == TargetKind::Content).collect()).collect()
}

#[test]
fn dsae_from_table_inputs() {
    // 8 * (3.84 - 2.32) / ln 5742, with ln 5742 = ln 2 * log2 5742
    let want = 8.0 * 1.52 / (2f64.ln() * 5742f64.log2());
    let got = dsae(8.0, 5742, 3.84, 2.32).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!((got - 1.405).abs() < 5e-4);
    assert!(got > 1.0);
}

#[test]
fn paper_bounds() {
    assert!((lead_upper_bound(3.59, 27.0, 7).unwrap() - 2.659).abs() < 0.005);
    assert!((lead_upper_bound(3.84, 27.0, 7).unwrap() - 2.844).abs() < 0.005);
    assert!((dsae(8.0, 32000, 3.59, 2.66).unwrap() - 0.717).abs() < 0.003);
}

#[test]
fn single_sentence_reductions() {
    use TargetKind::*;
    let t = LossTable {
        rows: vec![LossRow { nll: vec![1.0, 2.0, 4.5, 0.3, 0.1], kinds: vec![Content, Content, Content, End, Pad] }],
    };
    let masks = content_masks(&t);
    assert_eq!(conditional_log_ppl(&t, &masks).unwrap(), adjusted_log_ppl(&t).unwrap());
    let zero = LossTable { rows: vec![LossRow { nll: vec![0.0; 5], ..t.rows[0].clone() }] };
    assert_eq!(conditional_log_ppl(&zero, &masks).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn padding_identities((table, slots) in table_strategy()) {
        let total = table.len() * slots;
        let content: usize = table.rows.iter().map(|r| r.content_len()).sum();
        let sum_all: f64 = table.rows.iter()
            .flat_map(|r| r.nll.iter().zip(&r.kinds))
            .filter(|(_, &k)| k != TargetKind::End)
            .map(|(v, _)| v)
            .sum();
        let un = unadjusted_log_ppl(&table).unwrap();
        prop_assert!((un * total as f64 - sum_all).abs() < 1e-12 * sum_all.max(1.0));

        // with free padding, adjusted = unadjusted * total / content
        let mut free = table.clone();
        for r in &mut free.rows {
            for (v, k) in r.nll.iter_mut().zip(&r.kinds) {
                if *k == TargetKind::Pad {
                    *v = 0.0;
                }
            }
        }
        let adj = adjusted_log_ppl(&free).unwrap();
        let scaled = unadjusted_log_ppl(&free).unwrap() * total as f64 / content as f64;
        prop_assert!((adj - scaled).abs() < 1e-12 * adj.max(1.0));
        prop_assert!(adj >= unadjusted_log_ppl(&free).unwrap() - 1e-12);
    }

    #[test]
    fn conditional_reductions((table, _) in table_strategy()) {
        let masks = content_masks(&table);
        let pooled = conditional_log_ppl_pooled(&table, &masks).unwrap();
        prop_assert!((pooled - adjusted_log_ppl(&table).unwrap()).abs() < 1e-12);
        // per-sentence averaging equals the mean of each row's content mean
        let per: Vec<f64> = table.rows.iter()
            .map(|r| r.content().sum::<f64>() / r.content_len() as f64)
            .collect();
        let want = per.iter().sum::<f64>() / per.len() as f64;
        prop_assert!((conditional_log_ppl(&table, &masks).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn masking_free_positions_never_increases_loss((table, _) in table_strategy(), bits in any::<u64>()) {
        // zero out some content losses, then leave exactly those out of the mask
        let mut t = table.clone();
        let mut masks = content_masks(&t);
        for (ri, r) in t.rows.iter_mut().enumerate() {
            let n = r.content_len();
            for i in 0..n.saturating_sub(1) {
                if bits >> ((ri * 7 + i) % 64) & 1 == 1 {
                    r.nll[i] = 0.0;
                    masks[ri][i] = false;
                }
            }
        }
        let pooled = conditional_log_ppl_pooled(&t, &masks).unwrap();
        prop_assert!(pooled >= adjusted_log_ppl(&t).unwrap() - 1e-12);
        let conditional = conditional_log_ppl(&t, &content_masks(&t)).unwrap();
        prop_assert!(conditional <= conditional_log_ppl(&table, &content_masks(&table)).unwrap() + 1e-12);
    }

    #[test]
    fn dsae_shape(k in 0.5f64..16.0, v in 2usize..100_000, dv in 1usize..1000, p in 0.0f64..10.0, gap in 0.001f64..5.0, c in 0.1f64..4.0) {
        let base = dsae(k, v, p + gap, p).unwrap();
        prop_assert!(base > 0.0);
        let scaled = dsae(k, v, p + c * gap, p).unwrap();
        prop_assert!((scaled - c * base).abs() < 1e-9 * scaled.abs().max(1.0));
        prop_assert!(dsae(k, v + dv, p + gap, p).unwrap() < base);
    }

    #[test]
    fn lead_bound_is_linear(base in 0.0f64..10.0, len in 1usize..60, ctx in 0usize..60) {
        let avg = len as f64;
        match lead_upper_bound(base, avg, ctx) {
            Ok(b) => {
                prop_assert!(ctx <= len);
                prop_assert!((b - (1.0 - ctx as f64 / avg) * base).abs() < 1e-12);
            }
            Err(_) => prop_assert!(ctx > len),
        }
    }

    #[test]
    fn zero_prefix_on_constant_losses(c in 0.0f64..6.0, len in 1usize..20, n in 0usize..20, rows in 1usize..6) {
        let n = n.min(len);
        let table = LossTable {
            rows: (0..rows)
                .map(|_| LossRow { nll: vec![c; len + 1], kinds: (0..=len).map(|i| if i < len { TargetKind::Content } else { TargetKind::End }).collect() })
                .collect(),
        };
        let sel = SelectionResult { m: n, rows: (0..rows).map(|r| (0..len).filter(|i| (i + r) % len < n).collect()).collect() };
        let z = zero_prefix_ppl(&table, &sel).unwrap();
        prop_assert!((z - lead_upper_bound(c, len as f64, n).unwrap()).abs() < 1e-12);
    }
}
