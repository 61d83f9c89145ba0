//! One-shot gradient selection: each task takes the free weights with the
//! largest loss-gradient magnitudes on a probe batch, then commits them.
//!
//!     cargo run --example subnetwork_selection

use rsn2::multitask::{active_weight_count, disjointness_check_all, ModelLayerSpec, MultitaskModel, TaskId, TaskSpec};
use rsn2::nn::{Activation, LayerSpec, LossKind};
use rsn2::prune::{budget, commit_mask, select_subnetwork, AvailabilityLedger, PruneConfig};
use rsn2::rng::Rng;
use rsn2::tensor::Tensor;

fn main() -> rsn2::Result<()> {
    let (inputs, outputs, tasks) = (6, 4, 4);
    let specs: Vec<TaskSpec> = (0..tasks)
        .map(|i| TaskSpec {
            name: format!("task{i}"),
            loss: LossKind::MeanSquaredError,
            input_dims: vec![inputs],
        })
        .collect();
    let layers = [
        ModelLayerSpec {
            spec: LayerSpec::dense(8, Activation::Relu),
            tasks: None,
        },
        ModelLayerSpec {
            spec: LayerSpec::dense(outputs, Activation::Identity),
            tasks: None,
        },
    ];
    let mut rng = Rng::new(1);
    let mut model = MultitaskModel::new(&specs, &layers, &mut rng)?;
    let cfg = PruneConfig::new(vec![0.25; tasks], 0);
    cfg.validate(&model)?;
    let mut ledger = AvailabilityLedger::new(&model);
    println!("budget per task: layer 0 {}, layer 1 {}", budget(0.25, inputs * 8), budget(0.25, 8 * outputs));

    for t in 0..tasks {
        let x = Tensor::new(vec![16, inputs], (0..16 * inputs).map(|_| rng.uniform(-1.0, 1.0) as f32).collect())?;
        let y = Tensor::new(vec![16, outputs], (0..16 * outputs).map(|_| rng.uniform(-1.0, 1.0) as f32).collect())?;
        let sel = select_subnetwork(&model, TaskId(t), &x, &y, &cfg, &ledger)?;
        for line in &sel.report {
            println!("{line}");
        }
        commit_mask(&mut model, TaskId(t), &sel.masks, &mut ledger)?;
    }
    let counts = active_weight_count(&model);
    println!("active kernel weights per task {:?}, total {}", counts.per_task, counts.total);
    let worst = disjointness_check_all(&model).iter().map(|r| r.max_overlap).max().unwrap_or(0);
    println!("max_overlap {worst}; free left {} and {}", ledger.free_count(0), ledger.free_count(1));
    Ok(())
}
