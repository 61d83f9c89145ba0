//! Two tasks share one dense layer through disjoint binary masks. Changing
//! every weight outside task A's mask leaves task A's outputs untouched.
//!
//!     cargo run --example disjoint_masks

use rsn2::multitask::{disjointness_check_all, mt_forward, LayerMask, Mask, ModelLayerSpec, MultitaskModel, TaskId, TaskSpec};
use rsn2::nn::{Activation, LayerSpec, LossKind};
use rsn2::prune::{commit_mask, AvailabilityLedger};
use rsn2::rng::Rng;
use rsn2::tensor::Tensor;

fn main() -> rsn2::Result<()> {
    let tasks: Vec<TaskSpec> = ["a", "b"]
        .iter()
        .map(|n| TaskSpec {
            name: n.to_string(),
            loss: LossKind::MeanSquaredError,
            input_dims: vec![3],
        })
        .collect();
    let layers = [ModelLayerSpec {
        spec: LayerSpec::dense(2, Activation::Identity),
        tasks: None,
    }];
    let mut model = MultitaskModel::new(&tasks, &layers, &mut Rng::new(7))?;
    let mut ledger = AvailabilityLedger::new(&model);

    // A 3x2 kernel has six positions; A takes {0, 3, 4}, B takes {1, 2}.
    for (task, picks) in [(0, vec![0, 3, 4]), (1, vec![1, 2])] {
        let m = LayerMask {
            kernel: Mask::from_indices(&[3, 2], &picks)?,
            bias: Mask::ones(&[2]),
        };
        commit_mask(&mut model, TaskId(task), &[Some(m)], &mut ledger)?;
    }
    for r in disjointness_check_all(&model) {
        println!("layer {} max_overlap {}", r.layer, r.max_overlap);
    }
    println!("free positions left: {}", ledger.free_count(0));

    let x = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0])?;
    let before = mt_forward(&model, &x, TaskId(0))?;

    // Scribble over everything task A does not own.
    let p = model.layers_mut()[0].masked_mut().expect("dense layers are masked");
    let mask_a = p.mask(0).kernel.clone();
    for (j, w) in p.kernel_slot_mut(0).iter_mut().enumerate() {
        if !mask_a.bits()[j] {
            *w = 123.0;
        }
    }
    p.kernel_slot_mut(1).iter_mut().for_each(|w| *w = -9.0);
    let after = mt_forward(&model, &x, TaskId(0))?;
    println!("task a before {:?}", before.data());
    println!("task a after  {:?}", after.data());
    assert_eq!(before, after);
    println!("task b now    {:?}", mt_forward(&model, &x, TaskId(1))?.data());
    Ok(())
}
