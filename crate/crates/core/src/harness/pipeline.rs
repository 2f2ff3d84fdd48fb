use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::corpus::{
    build_vocab, context_length, corpus_stats, max_words, read_lines, write_lines, Corpus, CorpusStats, Vocabulary,
    SEP,
};
use crate::error::{Error, Result};
use crate::lm::{
    load_checkpoint, save_checkpoint, train_lm, BiLm, Checkpoint, Lm, LmExample, LossMaskMode, LossTable,
    ScoringModel, TargetKind,
};
use crate::metrics::{
    adjusted_log_ppl, conditional_log_ppl, conditional_log_ppl_pooled, dsae, lead_upper_bound, unadjusted_log_ppl,
    zero_prefix_ppl, MetricsReport,
};
use crate::scoring::{loss_scores, IdfTable, ScoreTable, SelectionResult, Strategy, TieBreak};
use crate::synthetic;
use crate::transform::{transform_with_selection, TransformedCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Encoded corpora shared by every seed of an experiment.
#[derive(Debug, Clone)]
pub struct Data {
    pub vocab: Vocabulary,
    pub train: Corpus,
    pub test: Corpus,
    pub train_stats: CorpusStats,
    pub test_stats: CorpusStats,
    /// Context tokens per sentence, from the longest training sentence and `k`.
    pub m: usize,
}

impl Data {
    pub fn load(cfg: &ExperimentConfig) -> Result<Data> {
        cfg.validate()?;
        let (mut train, test) = match (&cfg.train, &cfg.test, &cfg.synthetic) {
            (Some(tr), Some(te), _) => (read_lines(tr)?, read_lines(te)?),
            (_, _, Some(syn)) => {
                let c = synthetic::generate(syn)?;
                (c.train, c.test)
            }
            _ => unreachable!("checked by validate"),
        };
        if let Some(n) = cfg.subset {
            train.truncate(n);
        }
        let vocab = build_vocab(&train, cfg.min_count)?;
        Data::encode(cfg, vocab, &train, &test)
    }

    /// Encodes both splits with a given vocabulary.
    pub fn encode(cfg: &ExperimentConfig, vocab: Vocabulary, train: &[String], test: &[String]) -> Result<Data> {
        let max_len = cfg.max_len.unwrap_or_else(|| max_words(train));
        let train = Corpus::encode(&vocab, train, max_len + 2)?;
        let test = Corpus::encode(&vocab, test, max_len + 2)?;
        let train_stats = corpus_stats(&train)?;
        let test_stats = corpus_stats(&test)?;
        let m = context_length(train_stats.max_len, cfg.k)?;
        Ok(Data {
            vocab,
            train,
            test,
            train_stats,
            test_stats,
            m,
        })
    }

    pub fn corpus(&self, split: Split) -> &Corpus {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn max_positions(&self) -> usize {
        self.train.max_positions
    }
}

/// One point of a context-size sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub seed: u64,
    pub m: usize,
    pub conditional_log_ppl: f64,
    pub conditional_log_ppl_pooled: f64,
}

fn with_stage<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

/// Every stage of the pipeline for one seed. With an artifact directory,
/// finished stages are written there and read back instead of recomputed.
pub struct Run<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a Data,
    seed: u64,
    dir: Option<PathBuf>,
    baseline: Option<Lm>,
    baseline_test: Option<LossTable>,
    bilm: Option<BiLm>,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a ExperimentConfig, data: &'a Data, seed: u64) -> Result<Self> {
        let dir = match &cfg.out_dir {
            Some(out) => {
                let d = out.join(format!("seed-{seed}"));
                fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                Some(d)
            }
            None => None,
        };
        Ok(Run {
            cfg,
            data,
            seed,
            dir,
            baseline: None,
            baseline_test: None,
            bilm: None,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn artifact_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn artifact(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn cached_model<M: Checkpoint>(&self, name: &str, train: impl FnOnce() -> Result<M>) -> Result<M> {
        let path = self.artifact(name);
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            return load_checkpoint(p);
        }
        let model = train()?;
        if let Some(p) = path {
            save_checkpoint(&model, &p)?;
        }
        Ok(model)
    }

    fn train_model<M: crate::lm::Model>(&self, model: M, examples: &[LmExample], mode: LossMaskMode) -> Result<M> {
        let cfg = self.cfg.training.train_config(self.seed);
        Ok(train_lm(model, examples, mode, &cfg)?.model)
    }

    fn sentence_examples(corpus: &Corpus) -> Vec<LmExample> {
        corpus.sentences.iter().map(LmExample::from_sentence).collect()
    }

    /// Unconditioned LM on the training split; also the `+LM` scorer.
    pub fn baseline(&mut self) -> Result<&Lm> {
        if self.baseline.is_none() {
            let lm = with_stage(
                "baseline",
                self.cached_model("baseline.ckpt.json", || {
                    let lc = self
                        .cfg
                        .model
                        .lm_config(self.data.vocab.len(), self.data.max_positions(), self.seed);
                    let examples = Self::sentence_examples(&self.data.train);
                    self.train_model(Lm::init(&lc)?, &examples, LossMaskMode::AllTokens)
                }),
            )?;
            self.baseline = Some(lm);
        }
        Ok(self.baseline.as_ref().unwrap())
    }

    /// Baseline per-target losses on the test split.
    pub fn baseline_test_losses(&mut self) -> Result<&LossTable> {
        if self.baseline_test.is_none() {
            let path = self.artifact("losses-baseline-test.tsv");
            let table = match path.as_ref().filter(|p| p.exists()) {
                Some(p) => LossTable::read_file(p)?,
                None => {
                    let data = self.data;
                    let t = with_stage("evaluate:baseline", self.baseline()?.per_token_losses(&data.test))?;
                    if let Some(p) = path {
                        t.write_file(&p)?;
                    }
                    t
                }
            };
            self.baseline_test = Some(table);
        }
        Ok(self.baseline_test.as_ref().unwrap())
    }

    pub fn bilm(&mut self) -> Result<&BiLm> {
        if self.bilm.is_none() {
            let m = with_stage(
                "bilm",
                self.cached_model("bilm.ckpt.json", || {
                    let lc = self
                        .cfg
                        .model
                        .lm_config(self.data.vocab.len(), self.data.max_positions(), self.seed);
                    let examples = Self::sentence_examples(&self.data.train);
                    self.train_model(BiLm::init(&lc)?, &examples, LossMaskMode::PostSeparatorOnly)
                }),
            )?;
            self.bilm = Some(m);
        }
        Ok(self.bilm.as_ref().unwrap())
    }

    /// Token scores of a scored strategy (`tfidf`, `lm` or `bilm`).
    pub fn scores(&mut self, strategy: Strategy, split: Split) -> Result<ScoreTable> {
        let stage = format!("score:{strategy}");
        let path = self.artifact(&format!("scores-{strategy}-{}.tsv", split.name()));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            return ScoreTable::read_file(p);
        }
        let data = self.data;
        let corpus = data.corpus(split);
        let table = match strategy {
            Strategy::Tfidf => with_stage(&stage, IdfTable::fit(&data.train).and_then(|idf| idf.scores(corpus)))?,
            Strategy::Lm => {
                let losses = with_stage(&stage, self.baseline()?.per_token_losses(corpus))?;
                with_stage(&stage, loss_scores(&losses, corpus, strategy))?
            }
            Strategy::Bilm => {
                let losses = with_stage(&stage, self.bilm()?.per_token_losses(corpus))?;
                with_stage(&stage, loss_scores(&losses, corpus, strategy))?
            }
            other => {
                return Err(Error::InvalidArgument(format!("strategy {other} has no token scores")));
            }
        };
        if let Some(p) = path {
            table.write_file(&p)?;
        }
        Ok(table)
    }

    /// Context positions for every sentence of a split.
    pub fn selection(&mut self, strategy: Strategy, split: Split, m: usize) -> Result<SelectionResult> {
        let path = self.artifact(&format!("selection-{strategy}-m{m}-{}.tsv", split.name()));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            return SelectionResult::read_file(p);
        }
        let data = self.data;
        let corpus = data.corpus(split);
        let sel = match strategy {
            Strategy::Baseline => SelectionResult::empty(corpus),
            Strategy::Lead => SelectionResult::lead(corpus, m),
            Strategy::Random => {
                let stream = match split {
                    Split::Train => 0,
                    Split::Test => 1,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(stream);
                SelectionResult::random(corpus, m, &mut rng)
            }
            scored => SelectionResult::from_scores(&self.scores(scored, split)?, m, TieBreak::EarlierPosition),
        };
        if let Some(p) = path {
            sel.write_file(&p)?;
        }
        Ok(sel)
    }

    pub fn transformed(&mut self, strategy: Strategy, split: Split, m: usize) -> Result<TransformedCorpus> {
        let sel = self.selection(strategy, split, m)?;
        let tc = with_stage(
            &format!("transform:{strategy}"),
            transform_with_selection(self.data.corpus(split), &sel, SEP),
        )?;
        if let Some(p) = self.artifact(&format!("transformed-{strategy}-m{m}-{}.txt", split.name())) {
            if !p.exists() {
                write_lines(&p, &tc.to_lines(&self.data.vocab))?;
            }
        }
        Ok(tc)
    }

    /// LM trained on the transformed training split, loss on post-SEP content only.
    pub fn conditional(&mut self, strategy: Strategy, m: usize) -> Result<Lm> {
        let train = self.transformed(strategy, Split::Train, m)?;
        let window = self.data.max_positions() + m + 1;
        let stage = format!("conditional:{strategy}");
        with_stage(
            &stage,
            self.cached_model(&format!("conditional-{strategy}-m{m}.ckpt.json"), || {
                let lc = self.cfg.model.lm_config(self.data.vocab.len(), window, self.seed);
                self.train_model(Lm::init(&lc)?, &train.examples(), LossMaskMode::PostSeparatorOnly)
            }),
        )
    }

    /// Per-sentence and pooled conditional log-ppl on the test split.
    pub fn conditional_test_ppl(&mut self, strategy: Strategy, m: usize) -> Result<(f64, f64)> {
        let model = self.conditional(strategy, m)?;
        let test = self.transformed(strategy, Split::Test, m)?;
        let stage = format!("evaluate:{strategy}");
        let examples = test.examples();
        let refs: Vec<&LmExample> = examples.iter().collect();
        let table = LossTable {
            rows: with_stage(&stage, model.forward_nll_batch(&refs))?,
        };
        if let Some(p) = self.artifact(&format!("losses-{strategy}-m{m}-test.tsv")) {
            table.write_file(&p)?;
        }
        let masks = test.masks();
        Ok((
            with_stage(&stage, conditional_log_ppl(&table, &masks))?,
            with_stage(&stage, conditional_log_ppl_pooled(&table, &masks))?,
        ))
    }

    /// Full evaluation row for one strategy at the experiment's context size.
    pub fn evaluate(&mut self, strategy: Strategy) -> Result<MetricsReport> {
        let path = self.artifact(&format!("metrics-{strategy}.json"));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            return Ok(serde_json::from_str(&text)?);
        }
        let (k, v) = (self.cfg.k, self.data.vocab.content_size());
        let stage = format!("evaluate:{strategy}");
        let base_table = self.baseline_test_losses()?.clone();
        let base = with_stage(&stage, adjusted_log_ppl(&base_table))?;
        let report = if strategy == Strategy::Baseline {
            let masks: Vec<Vec<bool>> = base_table
                .rows
                .iter()
                .map(|r| r.kinds.iter().map(|&k| k == TargetKind::Content).collect())
                .collect();
            let cond = with_stage(&stage, conditional_log_ppl(&base_table, &masks))?;
            MetricsReport {
                strategy,
                seed: self.seed,
                k,
                v,
                m: 0,
                baseline_log_ppl: base,
                unadjusted_log_ppl: Some(with_stage(&stage, unadjusted_log_ppl(&base_table))?),
                adjusted_log_ppl: Some(base),
                conditional_log_ppl: cond,
                conditional_log_ppl_pooled: base,
                dsae: dsae(k, v, base, cond)?,
                lead_bound: None,
                zero_prefix_ppl: None,
            }
        } else {
            let m = self.data.m;
            let (cond, pooled) = self.conditional_test_ppl(strategy, m)?;
            let sel = self.selection(strategy, Split::Test, m)?;
            let lead_bound = match strategy {
                Strategy::Lead => Some(with_stage(
                    &stage,
                    lead_upper_bound(base, self.data.test_stats.avg_len, m),
                )?),
                _ => None,
            };
            MetricsReport {
                strategy,
                seed: self.seed,
                k,
                v,
                m,
                baseline_log_ppl: base,
                unadjusted_log_ppl: None,
                adjusted_log_ppl: None,
                conditional_log_ppl: cond,
                conditional_log_ppl_pooled: pooled,
                dsae: dsae(k, v, base, cond)?,
                lead_bound,
                zero_prefix_ppl: Some(with_stage(&stage, zero_prefix_ppl(&base_table, &sel))?),
            }
        };
        if let Some(p) = path {
            fs::write(&p, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&p, e))?;
        }
        Ok(report)
    }

    /// Conditional log-ppl with tf-idf contexts of size `m`.
    pub fn sweep_point(&mut self, m: usize) -> Result<SweepPoint> {
        let (cond, pooled) = self
            .conditional_test_ppl(Strategy::Tfidf, m)
            .map_err(|e| e.in_stage(&format!("sweep:m{m}")))?;
        Ok(SweepPoint {
            seed: self.seed,
            m,
            conditional_log_ppl: cond,
            conditional_log_ppl_pooled: pooled,
        })
    }
}

/// Writes the vocabulary and config, or checks that an existing artifact
/// directory was produced by an equivalent config.
pub fn prepare_out_dir(cfg: &ExperimentConfig, data: &Data) -> Result<()> {
    let Some(out) = &cfg.out_dir else {
        return Ok(());
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let fingerprint = ExperimentConfig {
        strategies: Vec::new(),
        seeds: Vec::new(),
        sweep: Vec::new(),
        out_dir: None,
        ..cfg.clone()
    };
    let text = toml::to_string(&fingerprint).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let path = out.join("experiment.toml");
    if path.exists() {
        let old = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        if old != text {
            return Err(Error::InvalidConfig(format!(
                "{} holds artifacts of a different experiment",
                out.display()
            )));
        }
    } else {
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    let vocab = out.join("vocab.txt");
    if !vocab.exists() {
        data.vocab.write_file(&vocab)?;
    }
    Ok(())
}

/// One report row per seed and strategy, seeds outermost.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Vec<MetricsReport>> {
    let data = with_stage("data", Data::load(cfg))?;
    run_pipeline_on(cfg, &data)
}

pub fn run_pipeline_on(cfg: &ExperimentConfig, data: &Data) -> Result<Vec<MetricsReport>> {
    prepare_out_dir(cfg, data)?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let mut run = Run::new(cfg, data, seed)?;
        for &strategy in &cfg.strategies {
            reports.push(run.evaluate(strategy)?);
        }
    }
    if let Some(out) = &cfg.out_dir {
        super::write_report(out, &reports)?;
    }
    Ok(reports)
}

/// One point per seed and context size, using tf-idf contexts throughout.
pub fn context_sweep(cfg: &ExperimentConfig, data: &Data, ms: &[usize]) -> Result<Vec<SweepPoint>> {
    prepare_out_dir(cfg, data)?;
    let mut points = Vec::new();
    for &seed in &cfg.seeds {
        let mut run = Run::new(cfg, data, seed)?;
        for &m in ms {
            points.push(run.sweep_point(m)?);
        }
    }
    if let Some(out) = &cfg.out_dir {
        let p = out.join("sweep.json");
        fs::write(&p, serde_json::to_string_pretty(&points)? + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(points)
}

/// Median conditional log-ppl over seeds for each context size, in order of first appearance.
pub fn sweep_medians(points: &[SweepPoint]) -> Vec<(usize, f64)> {
    let mut ms: Vec<usize> = Vec::new();
    for p in points {
        if !ms.contains(&p.m) {
            ms.push(p.m);
        }
    }
    ms.into_iter()
        .map(|m| {
            let mut v: Vec<f64> = points.iter().filter(|p| p.m == m).map(|p| p.conditional_log_ppl).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let med = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
            (m, med)
        })
        .collect()
}
