//! Runs every strategy end to end on a reduced synthetic corpus and prints
//! the comparison table. Artifacts land in the directory given as the first
//! argument, so a second run resumes instead of retraining.
//!
//! cargo run --release --example pipeline -- /tmp/excomp-demo

use extractive_compression::harness::{run_pipeline, ExperimentConfig, TrainSpec};
use extractive_compression::metrics::render_table;
use extractive_compression::synthetic::SyntheticConfig;

fn main() -> extractive_compression::Result<()> {
    let cfg = ExperimentConfig {
        synthetic: Some(SyntheticConfig { train_sentences: 2000, test_sentences: 300, ..SyntheticConfig::default() }),
        training: TrainSpec { steps: 300, ..TrainSpec::default() },
        out_dir: std::env::args_os().nth(1).map(Into::into),
        ..ExperimentConfig::default()
    };
    print!("{}", render_table(&run_pipeline(&cfg)?));
    Ok(())
}
