//! A small shared convolutional trunk learns a 2-class digit task, then a
//! 2-class fashion task on a disjoint quarter of every layer.
//!
//!     cargo run --release --example conv_smoke -- [config] [out]

use std::path::PathBuf;

use rsn2::experiment::{data_root, run_experiment, ExperimentConfig, RunOptions};

fn main() -> rsn2::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let config = args.next().map_or_else(|| PathBuf::from("configs/conv_smoke.toml"), PathBuf::from);
    let (cfg, bytes) = ExperimentConfig::load(&config)?;
    let out = args.next().map_or_else(|| PathBuf::from("runs/examples").join(&cfg.name), PathBuf::from);
    let s = run_experiment(&cfg, &bytes, &data_root(), &out, &RunOptions::default())?;
    for r in &s.disjointness {
        println!("layer {} max_overlap {}", r.layer, r.max_overlap);
    }
    for e in &s.evals {
        println!("{}: accuracy {:.4}, f1 {:?}", e.task, e.metric(), e.f1);
    }
    print!("{}", s.forgetting.to_csv());
    Ok(())
}
