//! Deterministic synthetic news-like corpus for desk-scale experiments.
//!
//! Every sentence belongs to a topic. It starts with the topic's opener,
//! followed by 4 to 7 blocks; block `i` is a topic keyword (drawn without
//! replacement) and a fixed frame of function words with one of two
//! adjectives in it. A final `.` closes the sentence:
//!
//! ```text
//! zorafi kelumo of the old bavito and a small report .
//! ```
//!
//! Keywords carry almost all of the information, openers are implied by any
//! keyword, and frames are nearly free once the block index is known.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `*` marks the adjective slot.
const FRAMES: [&[&str]; 7] = [
    &["of", "the", "*"],
    &["and", "a", "*", "report"],
    &["with", "*", "news"],
    &["for", "the", "*", "local", "market"],
    &["from", "its", "*", "team"],
    &["in", "*", "terms"],
    &["on", "a", "*", "day"],
];

const ADJECTIVES: [[&str; 2]; 7] = [
    ["new", "old"],
    ["big", "small"],
    ["good", "bad"],
    ["early", "late"],
    ["main", "other"],
    ["real", "broad"],
    ["long", "short"],
];

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

pub const MIN_BLOCKS: usize = 4;
pub const MAX_BLOCKS: usize = FRAMES.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub keywords_per_topic: usize,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            topics: 30,
            keywords_per_topic: 12,
            train_sentences: 8000,
            test_sentences: 1000,
            seed: 2019,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone)]
struct Topic {
    opener: String,
    keywords: Vec<String>,
}

fn pseudo_words<R: Rng>(rng: &mut R, n: usize) -> Vec<String> {
    let reserved: BTreeSet<&str> = FRAMES
        .iter()
        .flat_map(|f| f.iter().copied())
        .chain(ADJECTIVES.iter().flatten().copied())
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn sentence<R: Rng>(rng: &mut R, topic: &Topic) -> String {
    let blocks = rng.gen_range(MIN_BLOCKS..=MAX_BLOCKS);
    let keywords: Vec<&String> = topic.keywords.choose_multiple(rng, blocks).collect();
    let mut words = vec![topic.opener.as_str()];
    for (i, kw) in keywords.into_iter().enumerate() {
        words.push(kw);
        let adj = ADJECTIVES[i][rng.gen_range(0..2)];
        words.extend(FRAMES[i].iter().map(|&w| if w == "*" { adj } else { w }));
    }
    words.push(".");
    words.join(" ")
}

/// Generates train and test splits; identical configs give identical text.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if config.topics == 0 || config.keywords_per_topic < MAX_BLOCKS {
        return Err(Error::InvalidConfig(format!(
            "need at least one topic and {MAX_BLOCKS} keywords per topic"
        )));
    }
    if config.train_sentences == 0 || config.test_sentences == 0 {
        return Err(Error::InvalidConfig("both splits need at least one sentence".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let words = pseudo_words(&mut rng, config.topics * (config.keywords_per_topic + 1));
    let topics: Vec<Topic> = words
        .chunks(config.keywords_per_topic + 1)
        .map(|c| Topic {
            opener: c[0].clone(),
            keywords: c[1..].to_vec(),
        })
        .collect();
    let mut draw = |n: usize| -> Vec<String> {
        (0..n)
            .map(|_| {
                let t = rng.gen_range(0..topics.len());
                sentence(&mut rng, &topics[t])
            })
            .collect()
    };
    let train = draw(config.train_sentences);
    let test = draw(config.test_sentences);
    Ok(SyntheticCorpus { train, test })
}

/// Longest sentence the generator can produce, in words.
pub fn max_sentence_len() -> usize {
    2 + FRAMES.iter().map(|f| f.len() + 1).sum::<usize>()
}
