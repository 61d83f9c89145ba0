//! Digit and Fashion first, Boston Housing second. The housing task gets a
//! dedicated 13 -> 784 input layer and its own slice of the shared trunk;
//! the forgetting curve shows the image tasks' test losses unchanged.
//!
//!     cargo run --release --example sequential_forgetting -- [config] [out]

use std::path::PathBuf;

use rsn2::experiment::{data_root, run_experiment, ExperimentConfig, RunOptions};
use rsn2::io::{load_checkpoint, read_file};
use rsn2::train::weights_changed_outside;

fn main() -> rsn2::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let config = args.next().map_or_else(|| PathBuf::from("configs/exp5_fc_mnist_boston.toml"), PathBuf::from);
    let (cfg, bytes) = ExperimentConfig::load(&config)?;
    let out = args.next().map_or_else(|| PathBuf::from("runs/examples").join(&cfg.name), PathBuf::from);
    let s = run_experiment(&cfg, &bytes, &data_root(), &out, &RunOptions::default())?;

    println!("{:<6} {:<10} {:>22}", "after", "task", "test loss");
    for r in s.forgetting.rows() {
        println!("{:<6} {:<10} {:>22.17}", r.after_group, r.task, r.test_loss);
    }
    let schedule = cfg.schedule()?;
    for g in 1..schedule.groups.len() {
        let load = |k: usize| -> rsn2::Result<_> {
            Ok(load_checkpoint(&read_file(&out.join("checkpoints").join(format!("group-{k}.ckpt")))?)?.model)
        };
        let changed = weights_changed_outside(&load(g)?, &load(g + 1)?, &schedule.groups[g])?;
        println!("group {}: {changed} weights changed outside its own tasks", g + 1);
    }
    Ok(())
}
