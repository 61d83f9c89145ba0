//! Stops a three-stage run after its first group, resumes it from the
//! checkpoint, and compares the result with an uninterrupted run.
//!
//!     cargo run --release --example checkpoint_resume -- [config] [out]

use std::path::PathBuf;

use rsn2::experiment::{data_root, run_experiment, ExperimentConfig, RunOptions};
use rsn2::io::read_file;

fn main() -> rsn2::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let config = args.next().map_or_else(|| PathBuf::from("configs/exp5_fc_mnist_boston.toml"), PathBuf::from);
    let (cfg, bytes) = ExperimentConfig::load(&config)?;
    let base = args.next().map_or_else(|| PathBuf::from("runs/examples/resume"), PathBuf::from);
    let root = data_root();

    let straight = base.join("straight");
    run_experiment(&cfg, &bytes, &root, &straight, &RunOptions::default())?;

    let split = base.join("split");
    let first = RunOptions {
        stop_after_groups: Some(1),
        ..RunOptions::default()
    };
    let s = run_experiment(&cfg, &bytes, &root, &split, &first)?;
    println!("stopped with {} forgetting rows", s.forgetting.rows().len());
    let rest = RunOptions {
        resume: true,
        ..RunOptions::default()
    };
    run_experiment(&cfg, &bytes, &root, &split, &rest)?;
    for f in ["model.smt", "checkpoint.ckpt", "forgetting.csv"] {
        let same = read_file(&straight.join(f))? == read_file(&split.join(f))?;
        println!("{f}: identical {same}");
    }
    Ok(())
}
