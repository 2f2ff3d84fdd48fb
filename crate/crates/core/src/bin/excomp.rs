use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use extractive_compression::corpus::write_lines;
use extractive_compression::harness::{
    collect_reports, context_sweep, prepare_out_dir, run_pipeline_on, sweep_medians, write_report, Data,
    ExperimentConfig, Run, Split,
};
use extractive_compression::metrics::render_table;
use extractive_compression::scoring::Strategy;
use extractive_compression::synthetic::{generate, SyntheticConfig};
use extractive_compression::{Error, Result};

#[derive(Parser)]
#[command(name = "excomp", about = "Extractive compression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults to the synthetic desk corpus.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run only this strategy.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use only the first N training sentences.
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and print corpus statistics.
    BuildVocab(Common),
    /// Train the baseline LM, and the bi-LM when bilm is among the strategies.
    TrainLm(Common),
    /// Score both splits for the scored strategies.
    Score(Common),
    /// Select contexts and write transformed corpora.
    Transform(Common),
    /// Train conditional LMs on transformed corpora.
    TrainConditional(Common),
    /// Evaluate strategies and print their report rows.
    Evaluate(Common),
    /// Conditional log-ppl against context size, with tf-idf contexts.
    Sweep(Common),
    /// Gather evaluated rows under --out into report.json and report.txt.
    Report(Common),
    /// Run every stage for every seed and strategy.
    Run(Common),
    /// Write the synthetic corpus to --out as train.txt and test.txt.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(c: &Common, needs_out: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = c.strategy {
        cfg.strategies = vec![s];
    }
    if let Some(o) = &c.out {
        cfg.out_dir = Some(o.clone());
    }
    if c.subset.is_some() {
        cfg.subset = c.subset;
    }
    cfg.validate()?;
    if needs_out && cfg.out_dir.is_none() {
        return Err(Error::InvalidConfig("this command needs --out or out_dir in the config".into()));
    }
    Ok(cfg)
}

/// Runs `f` for every seed with a prepared artifact directory.
fn per_seed(c: &Common, mut f: impl FnMut(&ExperimentConfig, &Data, &mut Run) -> Result<()>) -> Result<()> {
    let cfg = load_config(c, true)?;
    let data = Data::load(&cfg)?;
    prepare_out_dir(&cfg, &data)?;
    for &seed in &cfg.seeds {
        let mut run = Run::new(&cfg, &data, seed)?;
        f(&cfg, &data, &mut run)?;
    }
    Ok(())
}

fn scored(s: Strategy) -> bool {
    matches!(s, Strategy::Tfidf | Strategy::Lm | Strategy::Bilm)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildVocab(c) => {
            let cfg = load_config(&c, false)?;
            let data = Data::load(&cfg)?;
            prepare_out_dir(&cfg, &data)?;
            let (tr, te) = (&data.train_stats, &data.test_stats);
            println!("vocabulary: {} words (+{} reserved)", data.vocab.content_size(), data.vocab.len() - data.vocab.content_size());
            for (name, s) in [("train", tr), ("test", te)] {
                println!(
                    "{name}: {} sentences, avg_len {:.2}, max_len {}, pad_ratio {:.3}, adj_factor {:.3}",
                    s.sentences, s.avg_len, s.max_len, s.pad_ratio, s.adj_factor
                );
            }
            println!("context length M = {} at K = {}", data.m, cfg.k);
        }
        Command::TrainLm(c) => per_seed(&c, |cfg, _, run| {
            run.baseline()?;
            if cfg.strategies.contains(&Strategy::Bilm) {
                run.bilm()?;
            }
            println!("seed {}: trained", run.seed());
            Ok(())
        })?,
        Command::Score(c) => per_seed(&c, |cfg, _, run| {
            for &s in cfg.strategies.iter().filter(|&&s| scored(s)) {
                for split in [Split::Train, Split::Test] {
                    run.scores(s, split)?;
                }
                println!("seed {}: scored {s}", run.seed());
            }
            Ok(())
        })?,
        Command::Transform(c) => per_seed(&c, |cfg, data, run| {
            for &s in cfg.strategies.iter().filter(|&&s| s != Strategy::Baseline) {
                for split in [Split::Train, Split::Test] {
                    run.transformed(s, split, data.m)?;
                }
                println!("seed {}: transformed {s} (M = {})", run.seed(), data.m);
            }
            Ok(())
        })?,
        Command::TrainConditional(c) => per_seed(&c, |cfg, data, run| {
            for &s in cfg.strategies.iter().filter(|&&s| s != Strategy::Baseline) {
                run.conditional(s, data.m)?;
                println!("seed {}: trained conditional {s}", run.seed());
            }
            Ok(())
        })?,
        Command::Evaluate(c) => {
            let mut rows = Vec::new();
            per_seed(&c, |cfg, _, run| {
                for &s in &cfg.strategies {
                    rows.push(run.evaluate(s)?);
                }
                Ok(())
            })?;
            print!("{}", render_table(&rows));
        }
        Command::Sweep(c) => {
            let cfg = load_config(&c, false)?;
            let data = Data::load(&cfg)?;
            let points = context_sweep(&cfg, &data, &cfg.sweep)?;
            for p in &points {
                println!("seed {} M {:>3}: {:.4}", p.seed, p.m, p.conditional_log_ppl);
            }
            for (m, med) in sweep_medians(&points) {
                println!("median M {m:>3}: {med:.4}");
            }
        }
        Command::Report(c) => {
            let cfg = load_config(&c, true)?;
            let out = cfg.out_dir.as_ref().unwrap();
            let rows = collect_reports(out)?;
            write_report(out, &rows)?;
            print!("{}", render_table(&rows));
        }
        Command::Run(c) => {
            let cfg = load_config(&c, false)?;
            let data = Data::load(&cfg)?;
            print!("{}", render_table(&run_pipeline_on(&cfg, &data)?));
        }
        Command::Synth { out, seed } => {
            let mut syn = SyntheticConfig::default();
            if let Some(s) = seed {
                syn.seed = s;
            }
            let corpus = generate(&syn)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::InvalidArgument(format!("{}: {e}", out.display())))?;
            write_lines(&out.join("train.txt"), &corpus.train)?;
            write_lines(&out.join("test.txt"), &corpus.test)?;
            println!("wrote {} train and {} test sentences to {}", corpus.train.len(), corpus.test.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
