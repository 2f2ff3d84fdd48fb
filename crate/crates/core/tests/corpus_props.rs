use extractive_compression::corpus::{
    build_vocab, context_length, corpus_stats, Corpus, Vocabulary, BOS, EOS, NUM_RESERVED, PAD, RESERVED_SYMBOLS, UNK,
};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-e]{1,2}", 0..12)
}

#[test]
fn reserved_layout() {
    let v = build_vocab(["x y", "y"], 1).unwrap();
    for (i, s) in RESERVED_SYMBOLS.iter().enumerate() {
        assert_eq!(v.id(s), Some(i as u32));
        assert_eq!(v.token(i as u32), Some(*s));
    }
    assert_eq!(v.id("y"), Some(NUM_RESERVED as u32));
    assert_eq!(v.content_size(), 2);
    assert_eq!(v.len(), 7);
}

#[test]
fn stats_of_a_fully_packed_corpus() {
    // every sentence fills all content slots: no padding at all
    let lines = ["a b c", "c b a"];
    let v = build_vocab(lines, 1).unwrap();
    let c = Corpus::encode(&v, lines, 5).unwrap();
    let s = corpus_stats(&c).unwrap();
    assert_eq!((s.total_positions, s.content_positions), (6, 6));
    assert_eq!(s.adj_factor, 1.0);
    assert_eq!(s.pad_ratio, 0.0);
}

#[test]
fn context_length_reference_values() {
    assert_eq!(context_length(51, 8.0).unwrap(), 7);
    assert_eq!(context_length(50, 8.0).unwrap(), 7);
    assert_eq!(context_length(33, 1.0).unwrap(), 33);
    assert!(context_length(10, 0.0).is_err());
    assert!(context_length(10, -1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn encode_decode_round_trip(lines in prop::collection::vec(words(), 1..6), extra in 0usize..4) {
        let text: Vec<String> = lines.iter().map(|w| w.join(" ")).collect();
        prop_assume!(text.iter().any(|l| !l.is_empty()));
        let vocab = build_vocab(&text, 1).unwrap();
        let longest = lines.iter().map(Vec::len).max().unwrap();
        let corpus = Corpus::encode(&vocab, &text, longest + 2 + extra).unwrap();
        for (s, w) in corpus.sentences.iter().zip(&lines) {
            prop_assert_eq!(s.ids[0], BOS);
            prop_assert_eq!(s.ids[s.true_len + 1], EOS);
            prop_assert!(s.ids[s.true_len + 2..].iter().all(|&i| i == PAD));
            prop_assert_eq!(vocab.decode(s), w.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }

    #[test]
    fn vocabulary_maps_are_inverse(lines in prop::collection::vec(words(), 1..6), min_count in 1usize..3) {
        let text: Vec<String> = lines.iter().map(|w| w.join(" ")).collect();
        let Ok(vocab) = build_vocab(&text, min_count) else { return Ok(()); };
        for (i, w) in vocab.words().enumerate() {
            let id = (i + NUM_RESERVED) as u32;
            prop_assert_eq!(vocab.id(w), Some(id));
            prop_assert_eq!(vocab.token(id), Some(w));
        }
        let file = tempfile::NamedTempFile::new().unwrap();
        vocab.write_file(file.path()).unwrap();
        prop_assert_eq!(Vocabulary::read_file(file.path()).unwrap(), vocab.clone());
        // words below min_count become UNK
        for l in &lines {
            for w in l {
                let count = lines.iter().flatten().filter(|x| *x == w).count();
                prop_assert_eq!(vocab.id_or_unk(w) == UNK, count < min_count);
            }
        }
    }

    #[test]
    fn truncation_keeps_the_prefix(n in 0usize..40, max_positions in 3usize..30) {
        let line: Vec<String> = (0..n).map(|i| format!("w{}", i % 7)).collect();
        let text = line.join(" ");
        let vocab = build_vocab(["w0 w1 w2 w3 w4 w5 w6"], 1).unwrap();
        let s = vocab.encode_sentence(&text, max_positions).unwrap();
        prop_assert_eq!(s.ids.len(), max_positions);
        prop_assert_eq!(s.true_len, n.min(max_positions - 2));
        prop_assert_eq!(vocab.decode(&s), line[..s.true_len].iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn stats_identities(lens in prop::collection::vec(0usize..9, 1..10), extra in 0usize..4) {
        prop_assume!(lens.iter().any(|&l| l > 0));
        let text: Vec<String> = lens.iter().map(|&l| vec!["t"; l].join(" ")).collect();
        let vocab = build_vocab(&text, 1).unwrap();
        let max = *lens.iter().max().unwrap();
        let corpus = Corpus::encode(&vocab, &text, max + 2 + extra).unwrap();
        let s = corpus_stats(&corpus).unwrap();
        let content: usize = lens.iter().sum();
        prop_assert_eq!(s.content_positions, content);
        prop_assert_eq!(s.total_positions, lens.len() * (max + extra));
        prop_assert!((s.adj_factor * content as f64 - s.total_positions as f64).abs() < 1e-9);
        let pads = (s.total_positions - content) as f64 / s.total_positions as f64;
        prop_assert!((s.pad_ratio - pads).abs() < 1e-15);
        prop_assert!(s.adj_factor >= 1.0);
        prop_assert_eq!(s.adj_factor == 1.0, s.pad_ratio == 0.0);
        prop_assert!((s.avg_len - content as f64 / lens.len() as f64).abs() < 1e-12);
        prop_assert_eq!(s.max_len, max);
    }

    #[test]
    fn context_length_monotone(max_len in 0usize..200, k in 0.1f64..40.0, dk in 0.0f64..10.0, dl in 0usize..20) {
        let m = context_length(max_len, k).unwrap();
        prop_assert!(context_length(max_len, k + dk).unwrap() <= m);
        prop_assert!(context_length(max_len + dl, k).unwrap() >= m);
    }
}
