//! Four tasks in three stages: Digit + Fashion, then Boston Housing, then
//! IMDB sentiment through an unpruned embedding and a dedicated input
//! layer.
//!
//!     cargo run --release --example four_task_sentiment -- [config] [out]

use std::path::PathBuf;

use rsn2::experiment::{data_root, run_experiment, ExperimentConfig, RunOptions};

fn main() -> rsn2::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config = args.next().map_or_else(|| PathBuf::from("configs/exp7_fc_four_tasks.toml"), PathBuf::from);
    let (cfg, bytes) = ExperimentConfig::load(&config)?;
    let out = args.next().map_or_else(|| PathBuf::from("runs/examples").join(&cfg.name), PathBuf::from);
    let s = run_experiment(&cfg, &bytes, &data_root(), &out, &RunOptions::default())?;
    for e in &s.evals {
        println!("{:<8} loss {:.5} metric {:.4}", e.task, e.loss, e.metric());
    }
    print!("{}", s.forgetting.to_csv());
    Ok(())
}
