//! MNIST Digit and MNIST Fashion trained simultaneously in one dense net,
//! each on its own 10% of every layer.
//!
//!     cargo run --release --example two_mnist_tasks -- [config] [out]

use std::path::PathBuf;

use rsn2::cli::render_eval;
use rsn2::experiment::{data_root, run_experiment, ExperimentConfig, RunOptions};

fn main() -> rsn2::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config = args.next().map_or_else(|| PathBuf::from("configs/exp3_fc_two_mnist.toml"), PathBuf::from);
    let (cfg, bytes) = ExperimentConfig::load(&config)?;
    let out = args.next().map_or_else(|| PathBuf::from("runs/examples").join(&cfg.name), PathBuf::from);
    let s = run_experiment(&cfg, &bytes, &data_root(), &out, &RunOptions::default())?;
    for e in &s.evals {
        print!("{}", render_eval(e));
    }
    let worst = s.disjointness.iter().map(|r| r.max_overlap).max().unwrap_or(0);
    println!("max_overlap {worst}; artifacts in {}", out.display());
    Ok(())
}
