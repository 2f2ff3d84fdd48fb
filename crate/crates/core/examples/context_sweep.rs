//! Conditional log-ppl as the tf-idf context grows, median over seeds.
//!
//! cargo run --release --example context_sweep

use extractive_compression::harness::{context_sweep, sweep_medians, Data, ExperimentConfig, TrainSpec};
use extractive_compression::synthetic::SyntheticConfig;

fn main() -> extractive_compression::Result<()> {
    let cfg = ExperimentConfig {
        synthetic: Some(SyntheticConfig { train_sentences: 2000, test_sentences: 300, ..SyntheticConfig::default() }),
        training: TrainSpec { steps: 300, ..TrainSpec::default() },
        seeds: vec![1, 2, 3],
        ..ExperimentConfig::default()
    };
    let data = Data::load(&cfg)?;
    let points = context_sweep(&cfg, &data, &[0, 1, 3, 7, 14])?;
    for (m, median) in sweep_medians(&points) {
        println!("M = {m:>2}: {median:.3} nats");
    }
    Ok(())
}
