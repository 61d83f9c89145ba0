//! Five disjoint convolutional subnetworks trained on the same Fashion
//! data; averaging their softmax outputs gives an ensemble from one model.
//!
//!     cargo run --release --example fashion_ensemble -- [config] [out]

use std::path::PathBuf;

use rsn2::experiment::{data_root, run_context, run_experiment, ExperimentConfig, RunOptions};
use rsn2::multitask::{mt_forward, TaskId};

fn argmax(row: &[f32]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

fn main() -> rsn2::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config = args.next().map_or_else(|| PathBuf::from("configs/exp1_conv_fashion_ensemble.toml"), PathBuf::from);
    let (cfg, bytes) = ExperimentConfig::load(&config)?;
    let out = args.next().map_or_else(|| PathBuf::from("runs/examples").join(&cfg.name), PathBuf::from);
    let s = run_experiment(&cfg, &bytes, &data_root(), &out, &RunOptions::default())?;
    for e in &s.evals {
        println!("{}: accuracy {:.4}", e.task, e.metric());
    }

    let (_, prep) = run_context(&out.join("model.smt"))?;
    let test = cfg.tasks[0].data.load(&data_root(), cfg.data_seed(0), prep.get(&cfg.tasks[0].name))?.test;
    let classes = test.y.dims()[1];
    let mut correct = 0;
    for start in (0..test.len()).step_by(1000) {
        let idx: Vec<usize> = (start..(start + 1000).min(test.len())).collect();
        let chunk = test.gather(&idx)?;
        let mut votes = vec![0f32; idx.len() * classes];
        for t in 0..s.model.task_count() {
            let p = mt_forward(&s.model, &chunk.x, TaskId(t))?;
            votes.iter_mut().zip(p.data()).for_each(|(v, &q)| *v += q);
        }
        for (i, row) in votes.chunks(classes).enumerate() {
            if argmax(row) == argmax(chunk.y.slab(i)) {
                correct += 1;
            }
        }
    }
    println!("ensemble of {}: accuracy {:.4}", s.model.task_count(), correct as f64 / test.len() as f64);
    Ok(())
}
