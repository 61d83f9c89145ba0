//! The `rsn2` command line.
//!
//! Errors go to stderr as `error[<id>]: <message>` and set the exit codes
//! listed on [`Error::exit_code`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiment::{data_root, report, run_context, run_experiment, ExperimentConfig, RunOptions, DATA_ROOT_ENV};
use crate::io::{check_entry_bound, import_sparse, load_checkpoint, parse_sparse, read_file, write_atomic, export_sparse, CHECKPOINT_MAGIC};
use crate::multitask::{disjointness_check_all, MultitaskModel};
use crate::train::{evaluate, EvalReport};
use crate::verify::{gradient_suite, GradCheckConfig};

#[derive(Debug, Parser)]
#[command(name = "rsn2", version, about = "Train, evaluate and export disjoint-subnetwork multitask models")]
pub struct Cli {
    /// Worker threads for matrix kernels (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment config: select, commit and train each group.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: the config's `out`, else runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = DATA_ROOT_ENV)]
        data: Option<PathBuf>,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate one task of a saved model on its test split.
    Eval {
        /// `.smt` or `.ckpt` inside a run directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, env = DATA_ROOT_ENV)]
        data: Option<PathBuf>,
        /// JSON report path (default: eval-<task>.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forgetting-curve table and disk-size comparison of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Also write the curve CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write the sparse export of a checkpoint.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config with the keep fractions for the entry bound (default: the
        /// run's config.toml).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Disjointness of a model plus the random gradient-check suite.
    Verify {
        /// Run directory whose model.smt is checked.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Model file to check instead of a run.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// `.smt` or `.ckpt`, told apart by magic.
pub fn load_model(path: &Path) -> Result<MultitaskModel> {
    let bytes = read_file(path)?;
    if bytes.starts_with(&CHECKPOINT_MAGIC) {
        Ok(load_checkpoint(&bytes)?.model)
    } else {
        import_sparse(&bytes)
    }
}

pub fn render_eval(r: &EvalReport) -> String {
    let mut s = format!("task {} ({} test samples)\n", r.task, r.samples);
    let _ = writeln!(s, "loss      {:.6}", r.loss);
    if let Some(a) = r.accuracy {
        let _ = writeln!(s, "accuracy  {a:.4}");
    }
    if let Some(m) = r.mse {
        let _ = writeln!(s, "mse       {m:.6}");
    }
    if !r.f1.is_empty() {
        let _ = writeln!(s, "class  f1-score  support");
        for (c, f) in r.f1.iter().enumerate() {
            let support: usize = r.confusion[c].iter().sum();
            let _ = writeln!(s, "{c:>5}  {f:>8.2}  {support:>7}");
        }
    }
    s
}

fn cmd_train(config: &Path, seed: Option<u64>, out: Option<PathBuf>, data: Option<PathBuf>, resume: bool) -> Result<()> {
    let (mut cfg, bytes) = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let root = data.unwrap_or_else(data_root);
    let summary = run_experiment(&cfg, &bytes, &root, &out, &RunOptions { resume, ..RunOptions::default() })?;
    for r in &summary.disjointness {
        println!("layer {} max_overlap {}", r.layer, r.max_overlap);
    }
    for e in &summary.evals {
        println!("{}: loss {:.6} metric {:.4}", e.task, e.loss, e.metric());
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_eval(model: &Path, task: &str, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let m = load_model(model)?;
    let id = m.task_id(task)?;
    let (cfg, prep) = run_context(model)?;
    let idx = cfg.tasks.iter().position(|t| t.name == task).ok_or_else(|| Error::UnknownTask(task.to_string()))?;
    let root = data.unwrap_or_else(data_root);
    let d = cfg.tasks[idx].data.load(&root, cfg.data_seed(idx), prep.get(task))?;
    let r = evaluate(&m, id, &d.test)?;
    print!("{}", render_eval(&r));
    let out = out.unwrap_or_else(|| PathBuf::from(format!("eval-{task}.json")));
    write_atomic(&out, serde_json::to_string_pretty(&r).expect("reports serialize").as_bytes())?;
    Ok(())
}

fn cmd_report(run: &Path, csv: Option<PathBuf>) -> Result<()> {
    let r = report(run)?;
    print!("{}", r.curve_csv);
    println!(
        "size multitask_bytes={} dedicated_bytes={} ratio={:.4}",
        r.size.multitask_bytes, r.size.dedicated_bytes, r.size.ratio
    );
    if let Some(p) = csv {
        write_atomic(&p, r.curve_csv.as_bytes())?;
    }
    Ok(())
}

fn cmd_export(checkpoint: &Path, out: &Path, config: Option<PathBuf>) -> Result<()> {
    let ck = load_checkpoint(&read_file(checkpoint)?)?;
    let bytes = export_sparse(&ck.model)?;
    let file = parse_sparse(&bytes)?;
    let cfg = match config {
        Some(p) => Some(ExperimentConfig::load(&p)?.0),
        None => run_context(checkpoint).ok().map(|c| c.0),
    };
    match cfg {
        Some(cfg) => {
            for l in check_entry_bound(&file, &cfg.prune_config().keep_fraction)? {
                println!("layer {} entries {} bound {}", l.layer, l.entries, l.bound);
            }
        }
        None => log::warn!("no config found; entry bound not checked"),
    }
    write_atomic(out, &bytes)?;
    println!("{} entries, {} bytes -> {}", file.total_entries(), bytes.len(), out.display());
    Ok(())
}

fn cmd_verify(run: Option<PathBuf>, model: Option<PathBuf>, cases: usize, seed: u64) -> Result<()> {
    let mut failures = Vec::new();
    let path = model.or_else(|| run.map(|r| r.join("model.smt")));
    if let Some(p) = path {
        let m = load_model(&p)?;
        for r in disjointness_check_all(&m) {
            let ok = r.passed();
            println!("disjointness layer {} max_overlap {} {}", r.layer, r.max_overlap, if ok { "PASS" } else { "FAIL" });
            if !ok {
                failures.push(format!("layer {} overlaps", r.layer));
            }
        }
    }
    let cfg = GradCheckConfig::default();
    let g = gradient_suite(seed, cases, &cfg)?;
    let ok = g.passed(cfg.tolerance);
    println!(
        "gradient check: {} cases, {} coordinates, {} skipped, max relative error {:.3e} {}",
        cases,
        g.checked,
        g.skipped,
        g.max_rel_error,
        if ok { "PASS" } else { "FAIL" }
    );
    if !ok {
        failures.push(format!("gradient error {:.3e}", g.max_rel_error));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(failures.join("; ")))
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("--threads", e.to_string()))?;
    }
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            data,
            resume,
        } => cmd_train(&config, seed, out, data, resume),
        Command::Eval { model, task, data, out } => cmd_eval(&model, &task, data, out),
        Command::Report { run, csv } => cmd_report(&run, csv),
        Command::Export { checkpoint, out, config } => cmd_export(&checkpoint, &out, config),
        Command::Verify { run, model, cases, seed } => cmd_verify(run, model, cases, seed),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.id());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn verbs_parse() {
        let c = Cli::try_parse_from(["rsn2", "--threads", "2", "train", "--config", "c.toml", "--seed", "4"]).unwrap();
        assert_eq!(c.threads, Some(2));
        assert!(matches!(c.command, Command::Train { seed: Some(4), .. }));
        let c = Cli::try_parse_from(["rsn2", "verify", "--cases", "3"]).unwrap();
        assert!(matches!(c.command, Command::Verify { cases: 3, .. }));
        assert!(Cli::try_parse_from(["rsn2", "eval", "--model", "m.smt"]).is_err());
    }

    #[test]
    fn eval_table_lists_classes() {
        let r = EvalReport {
            task: "x".into(),
            samples: 3,
            loss: 0.5,
            accuracy: Some(2.0 / 3.0),
            mse: None,
            f1: vec![1.0, 0.0],
            confusion: vec![vec![2, 0], vec![1, 0]],
        };
        let s = render_eval(&r);
        assert!(s.contains("accuracy  0.6667"));
        assert!(s.lines().any(|l| l.trim_start().starts_with("1      0.00")));
    }
}
