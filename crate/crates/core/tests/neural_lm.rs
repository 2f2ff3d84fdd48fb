use extractive_compression::corpus::{build_vocab, Corpus, Sentence, TokenId, BOS, EOS, NUM_RESERVED, PAD};
use extractive_compression::lm::{
    gradient_check, load_checkpoint, save_checkpoint, train_lm, BiLm, Lm, LmConfig, LmExample, LossMaskMode, Model,
    ScoringModel, TargetKind, TrainConfig,
};
use extractive_compression::metrics::adjusted_log_ppl;
use extractive_compression::synthetic::{generate, SyntheticConfig};
use extractive_compression::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sentence(content: &[TokenId], max_positions: usize) -> Sentence {
    let mut ids = vec![BOS];
    ids.extend_from_slice(content);
    ids.push(EOS);
    ids.resize(max_positions, PAD);
    Sentence {
        ids,
        true_len: content.len(),
    }
}

fn example(content: &[TokenId], max_positions: usize) -> LmExample {
    LmExample::from_sentence(&sentence(content, max_positions))
}

fn random_content(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<TokenId> {
    (0..len).map(|_| rng.gen_range(NUM_RESERVED as u32..vocab as u32)).collect()
}

fn quick_train(steps: usize, batch: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig::new(steps, batch, lr, seed)
}

#[test]
fn init_is_deterministic() {
    let cfg = LmConfig::new(30, 16, 2, 12, 9);
    assert_eq!(Lm::init(&cfg).unwrap(), Lm::init(&cfg).unwrap());
    assert_ne!(Lm::init(&cfg).unwrap(), Lm::init(&LmConfig { seed: 10, ..cfg.clone() }).unwrap());
    assert_eq!(BiLm::init(&cfg).unwrap(), BiLm::init(&cfg).unwrap());
    assert_ne!(BiLm::init(&cfg).unwrap(), BiLm::init(&LmConfig { seed: 10, ..cfg }).unwrap());
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        LmConfig::new(30, 4, 1, 12, 0),
        LmConfig::new(30, 16, 0, 12, 0),
        LmConfig::new(1, 16, 1, 12, 0),
        LmConfig {
            num_heads: 3,
            ..LmConfig::new(30, 16, 1, 12, 0)
        },
    ] {
        assert!(matches!(Lm::init(&cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
        assert!(BiLm::init(&cfg).is_err());
    }
}

#[test]
fn reference_parameter_count() {
    let cfg = LmConfig::new(5747, 64, 2, 64, 0);
    // token 5747*64 + position 64*64 + 2 blocks * (norms 2*64, attention 4*64*64,
    // feed-forward 64*128 + 128 + 128*64 + 64) + final norm 64, then head 64*5747 + 5747
    let tower = 367_808 + 4_096 + 2 * (128 + 16_384 + 16_576) + 64;
    assert_eq!(tower, 438_144);
    assert_eq!(cfg.parameter_count(), tower + 373_555);
    assert_eq!(cfg.parameter_count(), 811_699);
    assert_eq!(Lm::init(&cfg).unwrap().parameter_count(), 811_699);
    assert_eq!(BiLm::init(&cfg).unwrap().parameter_count(), cfg.bi_parameter_count());
    assert_eq!(cfg.bi_parameter_count(), 2 * 438_144 + 2 * 64 * 5747 + 5747);
}

#[test]
fn uniform_output_gives_log_vocab() {
    let cfg = LmConfig::new(41, 16, 2, 20, 3);
    let mut lm = Lm::init(&cfg).unwrap();
    lm.make_output_uniform();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ex = example(&random_content(&mut rng, 9, 41), 20);
    let row = lm.forward_nll(&ex).unwrap();
    assert_eq!(row.nll.len(), 19);
    for v in row.nll {
        assert!((v - 41f64.ln()).abs() < 1e-12, "{v}");
    }
}

#[test]
fn sequences_longer_than_the_window_fail() {
    let cfg = LmConfig::new(20, 8, 1, 6, 0);
    let ex = example(&[5, 6, 7, 8, 9], 8);
    assert!(matches!(
        Lm::init(&cfg).unwrap().forward_nll(&ex),
        Err(Error::SequenceTooLong { len: 7, window: 6 })
    ));
    assert!(matches!(
        BiLm::init(&cfg).unwrap().forward_nll(&example(&[5, 6, 7, 8, 9, 10, 11], 10)),
        Err(Error::SequenceTooLong { .. })
    ));
}

#[test]
fn condition_mask_flags_context() {
    let ex = example(&[5, 6, 7, 8], 8).with_condition_mask(&[0, 2]).unwrap();
    assert_eq!(&ex.kinds[..4], &[TargetKind::Context, TargetKind::Content, TargetKind::Context, TargetKind::Content]);
    let lm = Lm::init(&LmConfig::new(12, 8, 1, 8, 0)).unwrap();
    let row = lm.forward_nll(&ex).unwrap();
    assert_eq!(row.content_len(), 2);
    assert!(example(&[5, 6], 6).with_condition_mask(&[2]).is_err());
}

#[test]
fn bilm_handles_single_token_sentences() {
    let cfg = LmConfig::new(12, 8, 1, 8, 4);
    let bi = BiLm::init(&cfg).unwrap();
    let row = bi.forward_nll(&example(&[7], 5)).unwrap();
    assert_eq!(row.kinds, [TargetKind::Content, TargetKind::End, TargetKind::Pad, TargetKind::Pad]);
    assert!(row.nll[0].is_finite() && row.nll[0] > 0.0);
    assert_eq!(&row.nll[1..], &[0.0, 0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lm_is_causal(seed in 0u64..1_000_000, len in 2usize..14, cut in 0usize..13) {
        let v = 23;
        let cfg = LmConfig { num_heads: 2, ..LmConfig::new(v, 8, 2, 16, seed) };
        let lm = Lm::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<TokenId> = std::iter::once(BOS).chain(random_content(&mut rng, len - 1, v)).collect();
        let cut = cut % len;
        let mut changed = ids.clone();
        for t in changed.iter_mut().skip(cut + 1) {
            *t = rng.gen_range(0..v as u32);
        }
        let a = lm.log_probs(&ids).unwrap();
        let b = lm.log_probs(&changed).unwrap();
        for t in 0..=cut {
            for w in 0..v {
                prop_assert!((a[[t, w]] - b[[t, w]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilm_never_sees_its_target(seed in 0u64..1_000_000, len in 1usize..12, pos in 0usize..11) {
        let v = 23;
        let cfg = LmConfig { num_heads: 2, ..LmConfig::new(v, 8, 2, 16, seed) };
        let bi = BiLm::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let content = random_content(&mut rng, len, v);
        let pos = pos % len;
        let mut replaced = content.clone();
        replaced[pos] = rng.gen_range(NUM_RESERVED as u32..v as u32);
        let a = bi.log_probs(&example(&content, 14)).unwrap();
        let b = bi.log_probs(&example(&replaced, 14)).unwrap();
        for w in 0..v {
            prop_assert!((a[[pos, w]] - b[[pos, w]]).abs() < 1e-12);
        }
    }
}

fn grad_batch(rng: &mut ChaCha8Rng, v: usize) -> Vec<LmExample> {
    let mut out: Vec<LmExample> = (0..3)
        .map(|i| example(&random_content(rng, 3 + i, v), 8))
        .collect();
    // a conditioned sample: context, SEP, then the sentence
    let s = sentence(&random_content(rng, 3, v), 6);
    let mut ids = vec![s.ids[2], 3];
    ids.extend_from_slice(&s.ids);
    let mut kinds = vec![TargetKind::Context, TargetKind::Context];
    kinds.extend(LmExample::from_sentence(&s).kinds);
    out.push(LmExample::new(ids, kinds).unwrap());
    out
}

#[test]
fn lm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = 17;
    let batch = grad_batch(&mut rng, v);
    let refs: Vec<&LmExample> = batch.iter().collect();
    for (dim, layers) in [(8, 1), (16, 2)] {
        let lm = Lm::init(&LmConfig::new(v, dim, layers, 10, 11)).unwrap();
        for mode in [LossMaskMode::AllTokens, LossMaskMode::PostSeparatorOnly] {
            let r = gradient_check(&lm, &refs, mode, 1e-4, 24, 2).unwrap();
            assert!(r.max_rel_error < 1e-4, "dim {dim} layers {layers} {mode:?}: {r:?}");
            assert!(r.checked > 100);
        }
    }
}

#[test]
fn bilm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v = 17;
    let batch: Vec<LmExample> = (0..3).map(|i| example(&random_content(&mut rng, 2 + 2 * i, v), 9)).collect();
    let refs: Vec<&LmExample> = batch.iter().collect();
    for (dim, layers) in [(8, 1), (16, 2)] {
        let bi = BiLm::init(&LmConfig::new(v, dim, layers, 10, 12)).unwrap();
        let r = gradient_check(&bi, &refs, LossMaskMode::AllTokens, 1e-4, 24, 3).unwrap();
        assert!(r.max_rel_error < 1e-4, "dim {dim} layers {layers}: {r:?}");
    }
}

#[test]
fn gradient_check_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = grad_batch(&mut rng, 13);
    let refs: Vec<&LmExample> = batch.iter().collect();
    let lm = Lm::init(&LmConfig::new(13, 8, 1, 10, 1)).unwrap();
    let a = gradient_check(&lm, &refs, LossMaskMode::AllTokens, 1e-4, 8, 9).unwrap();
    let b = gradient_check(&lm, &refs, LossMaskMode::AllTokens, 1e-4, 8, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn parameters_without_signal_get_zero_gradient() {
    let v = 15;
    let lm = Lm::init(&LmConfig::new(v, 8, 1, 10, 1)).unwrap();
    let ex = example(&[5, 6, 7], 6);
    let (_, count, grads) = lm.loss_and_grad(&[&ex], LossMaskMode::AllTokens).unwrap();
    assert_eq!(count, 5);
    let tensors = grads.tensors();
    let (_, tok, shape) = tensors.iter().find(|(n, _, _)| n == "tower.tok_emb").unwrap();
    let d = shape[1];
    // token 12 never occurs as an input
    assert!(tok[12 * d..13 * d].iter().all(|g| g.abs() < 1e-8));
    assert!(tok[5 * d..6 * d].iter().any(|g| g.abs() > 1e-8));
    // positions past the input are never used
    let (_, pos, _) = tensors.iter().find(|(n, _, _)| n == "tower.pos_emb").unwrap();
    assert!(pos[5 * d..].iter().all(|g| g.abs() < 1e-8));
}

#[test]
fn memorizes_a_single_sentence() {
    let v = 20;
    let ex = example(&[9, 14, 6, 6, 11, 17, 8], 10);
    let lm = Lm::init(&LmConfig::new(v, 16, 2, 10, 2)).unwrap();
    let out = train_lm(lm, std::slice::from_ref(&ex), LossMaskMode::AllTokens, &quick_train(300, 1, 1e-2, 0)).unwrap();
    assert!(out.loss_curve.iter().all(|l| l.is_finite()));
    let row = out.model.forward_nll(&ex).unwrap();
    let mean_content = row.content().sum::<f64>() / row.content_len() as f64;
    assert!(mean_content < 0.05, "{mean_content}");
    assert!(row.nll.iter().all(|&v| v < 0.05), "{:?}", row.nll);
}

#[test]
fn learns_deterministic_patterns() {
    // 26 cyclic shifts of the alphabet: only the first letter is uncertain
    let letters: Vec<String> = (b'a'..=b'z').map(|c| (c as char).to_string()).collect();
    let lines: Vec<String> = (0..26)
        .map(|i| (0..26).map(|j| letters[(i + j) % 26].as_str()).collect::<Vec<_>>().join(" "))
        .collect();
    let vocab = build_vocab(&lines, 1).unwrap();
    let corpus = Corpus::encode(&vocab, &lines, 28).unwrap();
    let examples: Vec<LmExample> = corpus.sentences.iter().map(LmExample::from_sentence).collect();
    let lm = Lm::init(&LmConfig::new(vocab.len(), 16, 2, 28, 4)).unwrap();
    let out = train_lm(lm, &examples, LossMaskMode::AllTokens, &quick_train(400, 8, 1e-2, 1)).unwrap();
    let table = out.model.per_token_losses(&corpus).unwrap();
    let mean = adjusted_log_ppl(&table).unwrap();
    assert!(mean < 0.2, "{mean}");
}

#[test]
fn random_targets_stay_at_the_entropy_floor() {
    let v = 45;
    let content = v - NUM_RESERVED;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let make = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Sentence> {
        (0..n).map(|_| sentence(&random_content(rng, 10, v), 12)).collect()
    };
    let train: Vec<LmExample> = make(&mut rng, 300).iter().map(LmExample::from_sentence).collect();
    let held_out = Corpus {
        sentences: make(&mut rng, 100),
        max_positions: 12,
    };
    let lm = Lm::init(&LmConfig::new(v, 16, 1, 12, 5)).unwrap();
    let out = train_lm(lm, &train, LossMaskMode::PostSeparatorOnly, &quick_train(200, 16, 3e-3, 2)).unwrap();
    let mean = adjusted_log_ppl(&out.model.per_token_losses(&held_out).unwrap()).unwrap();
    for floor in [(content as f64).ln(), (v as f64).ln()] {
        assert!((mean - floor).abs() < 0.1 * floor, "{mean} vs {floor}");
    }
}

#[test]
fn non_finite_loss_reports_the_step() {
    let mut lm = Lm::init(&LmConfig::new(12, 8, 1, 8, 0)).unwrap();
    // embedding of BOS, which every example reads
    lm.tensors_mut()[0][8] = f64::NAN;
    let ex = example(&[5, 6], 4);
    let r = train_lm(lm, &[ex], LossMaskMode::AllTokens, &quick_train(5, 1, 1e-3, 0));
    assert!(matches!(r, Err(Error::Diverged { step: 0, .. })), "{r:?}");
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<LmExample> = (0..20).map(|_| example(&random_content(&mut rng, 5, 19), 8)).collect();
    let lm = Lm::init(&LmConfig::new(19, 8, 1, 8, 0)).unwrap();
    let cfg = quick_train(30, 4, 3e-3, 5);
    let a = train_lm(lm.clone(), &data, LossMaskMode::AllTokens, &cfg).unwrap();
    let b = train_lm(lm, &data, LossMaskMode::AllTokens, &cfg).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.model, b.model);
    assert!(a.loss_curve.last().unwrap() < &a.loss_curve[0]);
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = LmConfig::new(19, 16, 2, 8, 3);
    let lm = Lm::init(&cfg).unwrap();
    let bi = BiLm::init(&cfg).unwrap();
    let (pl, pb) = (dir.path().join("lm.json"), dir.path().join("bi.json"));
    save_checkpoint(&lm, &pl).unwrap();
    save_checkpoint(&bi, &pb).unwrap();
    assert_eq!(load_checkpoint::<Lm>(&pl).unwrap(), lm);
    assert_eq!(load_checkpoint::<BiLm>(&pb).unwrap(), bi);
    assert!(matches!(load_checkpoint::<BiLm>(&pl), Err(Error::Checkpoint(_))));
    let text = std::fs::read_to_string(&pl).unwrap().replacen("\"version\":1", "\"version\":99", 1);
    std::fs::write(&pl, text).unwrap();
    assert!(load_checkpoint::<Lm>(&pl).is_err());
}

#[test]
fn loss_rows_cover_every_padded_target() {
    let lines = ["a b c", "b c", "c a b a"];
    let vocab = build_vocab(lines, 1).unwrap();
    let corpus = Corpus::encode(&vocab, lines, 7).unwrap();
    let lm = Lm::init(&LmConfig::new(vocab.len(), 8, 1, 7, 0)).unwrap();
    let table = lm.per_token_losses(&corpus).unwrap();
    assert!(table.rows.iter().all(|r| r.nll.len() == 6));
    let (sum, n) = table
        .rows
        .iter()
        .flat_map(|r| r.content())
        .fold((0.0, 0), |(s, n), v| (s + v, n + 1));
    assert_eq!(n, 9);
    assert!((sum / n as f64 - adjusted_log_ppl(&table).unwrap()).abs() < 1e-12);
    assert!(table.rows.iter().flat_map(|r| &r.nll).all(|&v| v >= 0.0));
}

#[test]
fn bilm_beats_lm_on_held_out_text() {
    let syn = generate(&SyntheticConfig {
        topics: 6,
        keywords_per_topic: 8,
        train_sentences: 600,
        test_sentences: 100,
        seed: 4,
    })
    .unwrap();
    let vocab = build_vocab(&syn.train, 1).unwrap();
    let train = Corpus::encode(&vocab, &syn.train, 37).unwrap();
    let test = Corpus::encode(&vocab, &syn.test, 37).unwrap();
    let examples: Vec<LmExample> = train.sentences.iter().map(LmExample::from_sentence).collect();
    let cfg = LmConfig::new(vocab.len(), 16, 1, 37, 6);
    let tc = quick_train(250, 16, 5e-3, 6);
    let lm = train_lm(Lm::init(&cfg).unwrap(), &examples, LossMaskMode::PostSeparatorOnly, &tc).unwrap().model;
    let bi = train_lm(BiLm::init(&cfg).unwrap(), &examples, LossMaskMode::PostSeparatorOnly, &tc).unwrap().model;
    let uni = adjusted_log_ppl(&lm.per_token_losses(&test).unwrap()).unwrap();
    let both = adjusted_log_ppl(&bi.per_token_losses(&test).unwrap()).unwrap();
    assert!(both <= uni, "bi-LM {both} vs LM {uni}");
}
