//! Sparse export of a trained four-task model against four dense
//! single-task files: entry bound per layer, byte sizes, and a bit-exact
//! forward pass after re-import.
//!
//!     cargo run --release --example sparse_export -- [config] [out]

use std::path::PathBuf;

use rsn2::experiment::{data_root, run_experiment, ExperimentConfig, RunOptions};
use rsn2::io::{check_entry_bound, import_dense, import_sparse, parse_sparse, read_file, size_report};
use rsn2::multitask::{mt_forward, TaskId};
use rsn2::tensor::Tensor;

fn main() -> rsn2::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let config = args.next().map_or_else(|| PathBuf::from("configs/size_fc_four_tasks.toml"), PathBuf::from);
    let (cfg, bytes) = ExperimentConfig::load(&config)?;
    let out = args.next().map_or_else(|| PathBuf::from("runs/examples").join(&cfg.name), PathBuf::from);
    let s = run_experiment(&cfg, &bytes, &data_root(), &out, &RunOptions::default())?;

    let smt = read_file(&out.join("model.smt"))?;
    for l in check_entry_bound(&parse_sparse(&smt)?, &cfg.prune_config().keep_fraction)? {
        println!("layer {}: {} kernel entries, bound {}", l.layer, l.entries, l.bound);
    }
    let dense: Vec<PathBuf> = s.model.tasks().iter().map(|t| out.join("dense").join(format!("{}.dense", t.name))).collect();
    let size = size_report(&out.join("model.smt"), &dense)?;
    println!(
        "multitask {} bytes, dedicated {} bytes, ratio {:.3}",
        size.multitask_bytes, size.dedicated_bytes, size.ratio
    );

    let back = import_sparse(&smt)?;
    let x = Tensor::new(vec![2, 784], (0..2 * 784).map(|i| (i % 17) as f32 / 17.0).collect())?;
    for t in 0..back.task_count() {
        let a = mt_forward(&s.model, &x, TaskId(t))?;
        let b = mt_forward(&back, &x, TaskId(t))?;
        let (_, net) = import_dense(&read_file(&dense[t])?)?;
        let c = net.forward(&x)?;
        println!("{}: sparse round trip exact {}, dense file exact {}", back.tasks()[t].name, a == b, a == c);
    }
    Ok(())
}
