//! End-to-end acceptance checks. Trains the bundled configs through the
//! `rsn2` binary, then checks each criterion against an oracle computed
//! here. Prints one `PASS`/`FAIL` line per criterion and exits non-zero if
//! any fails.
//!
//!     cargo test --test acceptance
//!     cargo test --test acceptance -- 3 4

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rsn2::experiment::{data_root, run_context, ExperimentConfig, DATA_ROOT_ENV};
use rsn2::io::{import_sparse, load_checkpoint, parse_sparse, read_file, size_report};
use rsn2::multitask::{LayerMask, LayerStorage, Mask, ModelLayerSpec, MultitaskModel, TaskId, TaskSpec};
use rsn2::nn::{Activation, LayerKind, LayerSpec, LossKind, Padding};
use rsn2::prune::{commit_mask, select_subnetwork, AvailabilityLedger, PruneConfig};
use rsn2::rng::Rng;
use rsn2::tensor::Tensor;
use rsn2::train::evaluate;
use rsn2::verify::{gradient_suite, random_case, GradCheckConfig, MAX_CASE_PARAMS};

// Tolerances and thresholds.
const GRAD_CASES: usize = 50;
const GRAD_STEP: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-3;
const ORACLE_INSTANCES: u64 = 200;
const EXP3_DIGIT_MIN: f64 = 0.95;
const EXP3_FASHION_MIN: f64 = 0.82;
const BOSTON_MSE_MAX: f64 = 0.03;
const CONV_SMOKE_MIN: f64 = 0.80;
const IMDB_MIN: f64 = 0.75;

type Check = Result<String, String>;

fn need(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn rsn2() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rsn2"));
    c.env(DATA_ROOT_ENV, data_root()).env("RUST_LOG", "warn");
    c
}

/// Trains each config once, on first use.
struct Runs {
    dir: tempfile::TempDir,
    done: RefCell<BTreeMap<String, Result<PathBuf, String>>>,
}

impl Runs {
    fn get(&self, config: &str) -> Result<PathBuf, String> {
        if let Some(r) = self.done.borrow().get(config) {
            return r.clone();
        }
        let out = self.dir.path().join(config);
        let started = Instant::now();
        let r = rsn2()
            .args(["train", "--config"])
            .arg(configs().join(format!("{config}.toml")))
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(err)
            .and_then(|o| {
                if o.status.success() {
                    Ok(out.clone())
                } else {
                    Err(format!("train {config}: {}", String::from_utf8_lossy(&o.stderr).trim()))
                }
            });
        eprintln!("  trained {config} in {:.0}s", started.elapsed().as_secs_f64());
        self.done.borrow_mut().insert(config.to_string(), r.clone());
        r
    }
}

fn final_model(run: &Path) -> Result<MultitaskModel, String> {
    import_sparse(&read_file(&run.join("model.smt")).map_err(err)?).map_err(err)
}

fn group_model(run: &Path, group: usize) -> Result<MultitaskModel, String> {
    let bytes = read_file(&run.join("checkpoints").join(format!("group-{group}.ckpt"))).map_err(err)?;
    Ok(load_checkpoint(&bytes).map_err(err)?.model)
}

/// Largest number of slots holding a non-zero weight at one kernel position.
fn max_overlap(model: &MultitaskModel) -> usize {
    let mut worst = 0;
    for l in model.layers() {
        if let Some(p) = l.masked() {
            for j in 0..p.slice_len() {
                let n = (0..l.tasks.len()).filter(|&s| p.kernel_slot(s)[j] != 0.0).count();
                worst = worst.max(n);
            }
        }
    }
    worst
}

/// Parameter values that differ bitwise between two snapshots, outside the
/// slots and shared layers of `allowed`.
fn changed_outside(before: &MultitaskModel, after: &MultitaskModel, allowed: &[&str]) -> Result<usize, String> {
    let allowed: Vec<TaskId> = allowed.iter().map(|n| after.task_id(n)).collect::<Result<_, _>>().map_err(err)?;
    let diff = |a: &[f32], b: &[f32]| a.iter().zip(b).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
    let mut n = 0;
    for (lb, la) in before.layers().iter().zip(after.layers()) {
        let on_allowed = la.tasks.iter().any(|t| allowed.contains(t));
        match (&lb.storage, &la.storage) {
            (LayerStorage::Masked(pb), LayerStorage::Masked(pa)) => {
                for (s, t) in la.tasks.iter().enumerate() {
                    if !allowed.contains(t) {
                        n += diff(pb.kernel_slot(s), pa.kernel_slot(s)) + diff(pb.bias_slot(s), pa.bias_slot(s));
                    }
                }
            }
            (LayerStorage::Shared { kernel: kb, bias: bb, .. }, LayerStorage::Shared { kernel: ka, bias: ba, .. }) => {
                if !on_allowed {
                    n += diff(kb.data(), ka.data());
                    if let (Some(bb), Some(ba)) = (bb, ba) {
                        n += diff(bb.data(), ba.data());
                    }
                }
            }
            (LayerStorage::Stateless, LayerStorage::Stateless) => {}
            _ => return Err("layer storage kinds differ between snapshots".into()),
        }
    }
    Ok(n)
}

/// Test loss bits of `task` for two models, re-evaluated from the data.
fn reevaluate(run: &Path, a: &MultitaskModel, b: &MultitaskModel, task: &str) -> Result<(f64, f64), String> {
    let (cfg, prep) = run_context(&run.join("model.smt")).map_err(err)?;
    let i = cfg.tasks.iter().position(|t| t.name == task).ok_or("task not in config")?;
    let data = cfg.tasks[i].data.load(&data_root(), cfg.data_seed(i), prep.get(task)).map_err(err)?;
    let id = a.task_id(task).map_err(err)?;
    let la = evaluate(a, id, &data.test).map_err(err)?.loss;
    let lb = evaluate(b, id, &data.test).map_err(err)?.loss;
    Ok((la, lb))
}

/// Zero forgetting across consecutive groups. `stages[g]` lists the tasks
/// trained in group `g + 1`.
fn zero_forgetting(run: &Path, stages: &[&[&str]]) -> Check {
    let mut notes = Vec::new();
    let last = final_model(run)?;
    for g in 1..stages.len() {
        let before = group_model(run, g)?;
        let after = group_model(run, g + 1)?;
        let n = changed_outside(&before, &after, stages[g])?;
        need(n == 0, format!("{n} weights outside {:?} changed in group {}", stages[g], g + 1))?;
        for &t in stages[..g].iter().flat_map(|s| s.iter()) {
            let (lb, la) = reevaluate(run, &before, &last, t)?;
            need(
                lb.to_bits() == la.to_bits(),
                format!("{t} test loss {lb} after group {g}, {la} at the end"),
            )?;
        }
        notes.push(format!("group {}: 0 changed", g + 1));
    }
    let text = std::fs::read_to_string(run.join("forgetting.csv")).map_err(err)?;
    let mut first: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let loss = *first.entry(f[1]).or_insert(f[2]);
        need(loss == f[2], format!("forgetting row `{line}` differs from {loss}"))?;
    }
    Ok(notes.join(", "))
}

fn c1_disjointness(runs: &Runs) -> Check {
    let mut notes = Vec::new();
    for name in ["exp3_fc_two_mnist", "exp5_fc_mnist_boston", "exp7_fc_four_tasks", "conv_smoke", "size_fc_four_tasks"] {
        let run = runs.get(name)?;
        let o = rsn2()
            .args(["verify", "--cases", "0", "--run"])
            .arg(&run)
            .output()
            .map_err(err)?;
        let stdout = String::from_utf8_lossy(&o.stdout);
        need(o.status.success(), format!("verify {name} failed: {stdout}"))?;
        let reported: Vec<usize> = stdout
            .lines()
            .filter_map(|l| l.split("max_overlap ").nth(1))
            .filter_map(|s| s.split_whitespace().next()?.parse().ok())
            .collect();
        need(!reported.is_empty(), format!("verify {name} reported no layers"))?;
        let worst = reported.iter().copied().max().unwrap_or(0);
        need(worst <= 1, format!("{name}: verify max_overlap {worst}"))?;
        let recount = max_overlap(&final_model(&run)?);
        need(recount <= 1, format!("{name}: recount max_overlap {recount}"))?;
        notes.push(format!("{name} {worst}"));
    }
    Ok(format!("max_overlap {}", notes.join(", ")))
}

fn c2_zero_forgetting(runs: &Runs) -> Check {
    let run = runs.get("exp5_fc_mnist_boston")?;
    zero_forgetting(&run, &[&["digit", "fashion"], &["boston"]])
}

fn c3_gradients() -> Check {
    let cfg = GradCheckConfig::default();
    need(cfg.step == GRAD_STEP && cfg.tolerance == GRAD_TOL, "gradient check defaults moved")?;
    let rng = Rng::new(0);
    for i in 0..GRAD_CASES {
        let mut r = rng.derive(i as u64);
        let c = random_case(&mut r).map_err(err)?;
        need(c.net.param_count() <= MAX_CASE_PARAMS, format!("case {i} too large"))?;
    }
    let g = gradient_suite(0, GRAD_CASES, &cfg).map_err(err)?;
    need(g.checked > 0, "no coordinates checked")?;
    need(
        g.max_rel_error < GRAD_TOL,
        format!("max relative error {:.3e} at {:?}", g.max_rel_error, g.worst),
    )?;
    Ok(format!("{GRAD_CASES} networks, {} coords, max rel err {:.2e}", g.checked, g.max_rel_error))
}

/// Integer ceiling of `num/den · w`.
fn ceil_budget(num: usize, den: usize, w: usize) -> usize {
    (num * w).div_ceil(den)
}

/// Stable sort by descending magnitude; ties keep the lower index first.
fn oracle_top(grad: &[f32], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| grad[b].abs().partial_cmp(&grad[a].abs()).expect("finite gradients"));
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    top
}

fn random_instance(rng: &mut Rng) -> (MultitaskModel, Vec<usize>, usize) {
    let tasks = 2 + rng.below(3);
    let den = [4, 5, 8, 10][rng.below(4)];
    let nums: Vec<usize> = (0..tasks).map(|_| 1 + rng.below(den / tasks)).collect();
    let conv = rng.below(3) == 0;
    let (input, layers) = if conv {
        let filters = 1 + rng.below(3);
        (
            vec![4 + rng.below(3), 4 + rng.below(3), 1 + rng.below(2)],
            vec![
                LayerSpec::new(
                    LayerKind::Conv2d {
                        filters,
                        size: [2 + rng.below(2), 2],
                        padding: Padding::Valid,
                    },
                    Activation::Relu,
                ),
                LayerSpec::new(LayerKind::Flatten, Activation::Identity),
                LayerSpec::dense(1 + rng.below(4), Activation::Identity),
            ],
        )
    } else {
        (
            vec![1 + rng.below(8)],
            vec![
                LayerSpec::dense(1 + rng.below(8), Activation::Relu),
                LayerSpec::dense(1 + rng.below(4), Activation::Identity),
            ],
        )
    };
    let specs: Vec<TaskSpec> = (0..tasks)
        .map(|i| TaskSpec {
            name: format!("t{i}"),
            loss: LossKind::MeanSquaredError,
            input_dims: input.clone(),
        })
        .collect();
    let layers: Vec<ModelLayerSpec> = layers.into_iter().map(|spec| ModelLayerSpec { spec, tasks: None }).collect();
    let model = MultitaskModel::new(&specs, &layers, &mut Rng::new(rng.next_u64())).expect("valid instance");
    (model, nums, den)
}

/// Whether every masked layer can hold all integer budgets at once.
fn feasible(model: &MultitaskModel, nums: &[usize], den: usize) -> bool {
    model.layers().iter().all(|l| {
        l.masked()
            .is_none_or(|p| l.tasks.iter().map(|t| ceil_budget(nums[t.0], den, p.slice_len())).sum::<usize>() <= p.slice_len())
    })
}

fn c4_oracle() -> Check {
    let mut compared = 0usize;
    let mut redrawn = 0usize;
    let mut draw = 0u64;
    for inst in 0..ORACLE_INSTANCES {
        // Rounded-up budgets can oversubscribe very small layers even when
        // the fractions sum to at most one; those draws must fail with a
        // capacity error and are replaced.
        let (mut rng, mut model, nums, den) = loop {
            let mut rng = Rng::new(draw);
            draw += 1;
            let (model, nums, den) = random_instance(&mut rng);
            if feasible(&model, &nums, den) {
                break (rng, model, nums, den);
            }
            redrawn += 1;
            let cfg = PruneConfig::new(nums.iter().map(|&n| n as f64 / den as f64).collect(), 0);
            let (dims, outs) = (model.tasks()[0].input_dims.clone(), model.tasks()[0].output_dims.iter().product::<usize>());
            let x = Tensor::new([vec![1], dims.clone()].concat(), vec![0.5; dims.iter().product()]).map_err(err)?;
            let y = Tensor::new(vec![1, outs], vec![0.5; outs]).map_err(err)?;
            let mut ledger = AvailabilityLedger::new(&model);
            let mut m = model;
            let mut hit = false;
            for t in 0..m.task_count() {
                match select_subnetwork(&m, TaskId(t), &x, &y, &cfg, &ledger) {
                    Ok(sel) => commit_mask(&mut m, TaskId(t), &sel.masks, &mut ledger).map_err(err)?,
                    Err(rsn2::Error::Capacity { .. }) => {
                        hit = true;
                        break;
                    }
                    Err(e) => return Err(format!("draw {}: {e}", draw - 1)),
                }
            }
            need(hit, format!("draw {}: oversubscribed layer accepted", draw - 1))?;
        };
        let fractions: Vec<f64> = nums.iter().map(|&n| n as f64 / den as f64).collect();
        let cfg = PruneConfig::new(fractions, 0);
        let mut ledger = AvailabilityLedger::new(&model);
        // Earlier tasks claim random free positions of their budget size.
        let last = model.task_count() - 1;
        for t in 0..last {
            let masks: Vec<Option<LayerMask>> = model
                .path(TaskId(t))
                .iter()
                .map(|&i| {
                    let p = model.layers()[i].masked()?;
                    let mut free = ledger.used(i).expect("masked").complement().indices();
                    rng.shuffle(&mut free);
                    free.truncate(ceil_budget(nums[t], den, p.slice_len()));
                    Some(LayerMask {
                        kernel: Mask::from_indices(p.kernel_dims(), &free).expect("in range"),
                        bias: Mask::ones(p.bias_dims()),
                    })
                })
                .collect();
            commit_mask(&mut model, TaskId(t), &masks, &mut ledger).map_err(err)?;
        }
        let task = TaskId(last);
        let dims = model.tasks()[last].input_dims.clone();
        let outs: usize = model.tasks()[last].output_dims.iter().product();
        let b = 1 + rng.below(6);
        let n: usize = dims.iter().product();
        let x = Tensor::new(
            [vec![b], dims].concat(),
            (0..b * n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
        )
        .map_err(err)?;
        let y = Tensor::new(vec![b, outs], (0..b * outs).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).map_err(err)?;
        let sel = select_subnetwork(&model, task, &x, &y, &cfg, &ledger).map_err(err)?;

        // Oracle: gradient of the task loss through every free weight.
        let net = model
            .network_with(task, |i, mp, _| LayerMask {
                kernel: ledger.used(i).expect("masked").complement(),
                bias: Mask::ones(mp.bias_dims()),
            })
            .map_err(err)?;
        let (_, grads) = net.loss_gradients(&x, &y, LossKind::MeanSquaredError, false).map_err(err)?;
        for ((&li, g), got) in model.path(task).iter().zip(&grads.layers).zip(&sel.masks) {
            let Some(p) = model.layers()[li].masked() else {
                need(got.is_none(), format!("instance {inst}: mask on an unmasked layer"))?;
                continue;
            };
            let got = got.as_ref().ok_or(format!("instance {inst}: no mask for layer {li}"))?;
            let free = ledger.used(li).expect("masked").complement().indices();
            let k = ceil_budget(nums[last], den, p.slice_len());
            let want = oracle_top(g.kernel.as_ref().expect("kernel").data(), &free, k);
            need(got.kernel.indices() == want, format!("instance {inst} layer {li}: kernel selection differs"))?;
            let kb = ceil_budget(nums[last], den, p.bias_len());
            let all: Vec<usize> = (0..p.bias_len()).collect();
            let want_b = oracle_top(g.bias.as_ref().expect("bias").data(), &all, kb);
            need(got.bias.indices() == want_b, format!("instance {inst} layer {li}: bias selection differs"))?;
            compared += 1;
        }
        commit_mask(&mut model, task, &sel.masks, &mut ledger).map_err(err)?;
        for (li, l) in model.layers().iter().enumerate() {
            if let Some(p) = l.masked() {
                for (s, t) in l.tasks.iter().enumerate() {
                    let want = ceil_budget(nums[t.0], den, p.slice_len());
                    let have = p.mask(s).kernel.count();
                    need(have == want, format!("instance {inst} layer {li} task {}: {have} != {want}", t.0))?;
                }
            }
        }
    }
    Ok(format!(
        "{ORACLE_INSTANCES} instances, {compared} layer selections identical ({redrawn} oversubscribed draws raised capacity errors)"
    ))
}

fn eval_metric(run: &Path, task: &str) -> Result<f64, String> {
    let text = std::fs::read_to_string(run.join("eval").join(format!("{task}.json"))).map_err(err)?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(err)?;
    v.get("accuracy")
        .and_then(|a| a.as_f64())
        .or_else(|| v.get("mse").and_then(|m| m.as_f64()))
        .ok_or_else(|| format!("{task}: no metric"))
}

fn c5_exp3(runs: &Runs) -> Check {
    let run = runs.get("exp3_fc_two_mnist")?;
    let d = eval_metric(&run, "digit")?;
    let f = eval_metric(&run, "fashion")?;
    need(d >= EXP3_DIGIT_MIN, format!("digit accuracy {d:.4} < {EXP3_DIGIT_MIN}"))?;
    need(f >= EXP3_FASHION_MIN, format!("fashion accuracy {f:.4} < {EXP3_FASHION_MIN}"))?;
    Ok(format!("digit {d:.4}, fashion {f:.4}"))
}

fn c6_boston(runs: &Runs) -> Check {
    let run = runs.get("exp5_fc_mnist_boston")?;
    let m = eval_metric(&run, "boston")?;
    need(m <= BOSTON_MSE_MAX, format!("boston mse {m:.5} > {BOSTON_MSE_MAX}"))?;
    Ok(format!("boston test mse {m:.5}"))
}

fn c7_entry_bound(runs: &Runs) -> Check {
    let mut layers = 0;
    for name in ["exp3_fc_two_mnist", "exp5_fc_mnist_boston", "exp7_fc_four_tasks", "conv_smoke", "size_fc_four_tasks"] {
        let run = runs.get(name)?;
        let (cfg, _) = ExperimentConfig::load(&configs().join(format!("{name}.toml"))).map_err(err)?;
        let p: BTreeMap<&str, f64> = cfg.tasks.iter().map(|t| (t.name.as_str(), t.keep_fraction)).collect();
        let file = parse_sparse(&read_file(&run.join("model.smt")).map_err(err)?).map_err(err)?;
        let model = final_model(&run)?;
        for (li, l) in model.layers().iter().enumerate() {
            let Some(mp) = l.masked() else { continue };
            let w = mp.slice_len() as f64;
            let bound: usize = l.tasks.iter().map(|t| (p[model.tasks()[t.0].name.as_str()] * w).ceil() as usize).sum();
            let stored = file.blocks.iter().filter(|b| b.layer == li).map(|b| b.kernel.len()).sum::<usize>();
            need(stored <= bound, format!("{name} layer {li}: {stored} entries > {bound}"))?;
            layers += 1;
        }
        // The export verb performs the same check on its own output.
        let out = run.join("reexport.smt");
        let o = rsn2()
            .args(["export", "--checkpoint"])
            .arg(run.join("checkpoint.ckpt"))
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(err)?;
        let stdout = String::from_utf8_lossy(&o.stdout);
        need(o.status.success() && stdout.contains(" bound "), format!("{name}: export did not check bounds"))?;
    }
    Ok(format!("{layers} layers within bound"))
}

fn c8_size(runs: &Runs) -> Check {
    let run = runs.get("size_fc_four_tasks")?;
    let model = final_model(&run)?;
    need(model.task_count() == 4, "size run needs four tasks")?;
    let dense: Vec<PathBuf> = model.tasks().iter().map(|t| run.join("dense").join(format!("{}.dense", t.name))).collect();
    let r = size_report(&run.join("model.smt"), &dense).map_err(err)?;
    let smt = std::fs::metadata(run.join("model.smt")).map_err(err)?.len();
    let sum: u64 = dense.iter().map(|p| std::fs::metadata(p).map(|m| m.len()).unwrap_or(0)).sum();
    need(smt == r.multitask_bytes && sum == r.dedicated_bytes, "size report disagrees with the filesystem")?;
    need(smt < sum, format!("{smt} sparse bytes >= {sum} dense bytes"))?;
    Ok(format!("{smt} vs {sum} bytes, ratio {:.3}", smt as f64 / sum as f64))
}

fn c9_conv_smoke(runs: &Runs) -> Check {
    let run = runs.get("conv_smoke")?;
    let d = eval_metric(&run, "digit")?;
    let f = eval_metric(&run, "fashion")?;
    need(d >= CONV_SMOKE_MIN && f >= CONV_SMOKE_MIN, format!("digit {d:.4}, fashion {f:.4} below {CONV_SMOKE_MIN}"))?;
    let overlap = max_overlap(&final_model(&run)?);
    need(overlap <= 1, format!("max_overlap {overlap}"))?;
    let z = zero_forgetting(&run, &[&["digit"], &["fashion"]])?;
    Ok(format!("digit {d:.4}, fashion {f:.4}, overlap {overlap}, {z}"))
}

fn c10_imdb(runs: &Runs) -> Check {
    let run = runs.get("exp7_fc_four_tasks")?;
    let a = eval_metric(&run, "imdb")?;
    need(a >= IMDB_MIN, format!("imdb accuracy {a:.4} < {IMDB_MIN}"))?;
    let overlap = max_overlap(&final_model(&run)?);
    need(overlap <= 1, format!("max_overlap {overlap}"))?;
    let z = zero_forgetting(&run, &[&["digit", "fashion"], &["boston"], &["imdb"]])?;
    Ok(format!("imdb {a:.4}, overlap {overlap}, {z}"))
}

fn main() -> ExitCode {
    // Numeric arguments pick criteria; libtest flags such as --nocapture
    // are ignored.
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let runs = Runs {
        dir: tempfile::tempdir().expect("temp dir"),
        done: RefCell::new(BTreeMap::new()),
    };
    let criteria: Vec<(u8, &str, Box<dyn Fn() -> Check + '_>)> = vec![
        (1, "disjointness", Box::new(|| c1_disjointness(&runs))),
        (2, "zero forgetting", Box::new(|| c2_zero_forgetting(&runs))),
        (3, "gradient correctness", Box::new(c3_gradients)),
        (4, "selection oracle", Box::new(c4_oracle)),
        (5, "two MNIST tasks, dense", Box::new(|| c5_exp3(&runs))),
        (6, "housing regression", Box::new(|| c6_boston(&runs))),
        (7, "active-weight bound", Box::new(|| c7_entry_bound(&runs))),
        (8, "disk size direction", Box::new(|| c8_size(&runs))),
        (9, "conv smoke", Box::new(|| c9_conv_smoke(&runs))),
        (10, "sentiment, four tasks", Box::new(|| c10_imdb(&runs))),
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for (id, name, check) in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.0)) {
        let started = Instant::now();
        let r = check();
        let secs = started.elapsed().as_secs_f64();
        let line = match &r {
            Ok(d) => format!("criterion {id:>2} PASS {name}: {d} ({secs:.0}s)"),
            Err(d) => {
                failed += 1;
                format!("criterion {id:>2} FAIL {name}: {d} ({secs:.0}s)")
            }
        };
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("{l}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
