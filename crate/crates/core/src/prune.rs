//! One-shot subnetwork selection. A new task sees every weight no earlier
//! task has claimed, takes one gradient on a probe batch, and keeps the
//! `⌈p·W⌉` free weights with the largest gradient magnitude per layer.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multitask::{disjointness_check, LayerMask, Mask, MultitaskModel, TaskId};
use crate::nn::{GradientBundle, ParamGrad};
use crate::tensor::{top_k_indices, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Keep fraction per task, indexed by task id.
    pub keep_fraction: Vec<f64>,
    pub probe_batch_size: usize,
    pub seed: u64,
}

pub const DEFAULT_PROBE_BATCH: usize = 512;

impl PruneConfig {
    pub fn new(keep_fraction: Vec<f64>, seed: u64) -> Self {
        Self {
            keep_fraction,
            probe_batch_size: DEFAULT_PROBE_BATCH,
            seed,
        }
    }

    pub fn fraction(&self, task: TaskId) -> Result<f64> {
        self.keep_fraction
            .get(task.0)
            .copied()
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }

    /// Every fraction lies in `(0, 1]` and the fractions of tasks sharing a
    /// layer sum to at most 1 (`t·p ≤ 1` for equal fractions).
    pub fn validate(&self, model: &MultitaskModel) -> Result<()> {
        if self.keep_fraction.len() != model.task_count() {
            return Err(Error::config(
                "prune.keep_fraction",
                format!("{} fractions for {} tasks", self.keep_fraction.len(), model.task_count()),
            ));
        }
        if self.probe_batch_size == 0 {
            return Err(Error::config("prune.probe_batch_size", "must be positive"));
        }
        for (i, &p) in self.keep_fraction.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config(
                    format!("tasks[{i}].keep_fraction"),
                    format!("{p} is outside (0, 1]"),
                ));
            }
        }
        for (li, l) in model.layers().iter().enumerate() {
            if l.masked().is_none() {
                continue;
            }
            let sum: f64 = l.tasks.iter().map(|t| self.keep_fraction[t.0]).sum();
            if sum > 1.0 + 1e-9 {
                return Err(Error::config(
                    "tasks.keep_fraction",
                    format!("fractions of tasks sharing layer {li} sum to {sum}; t·p ≤ 1 is required"),
                ));
            }
        }
        Ok(())
    }
}

/// `⌈p·w⌉`, treating products within 1e-9 of an integer as that integer
/// so that e.g. `0.1 · 30` does not round up to 4.
pub fn budget(p: f64, w: usize) -> usize {
    let x = p * w as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Weights claimed by any committed task, per task-indexed layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityLedger {
    layers: Vec<Option<Mask>>,
}

impl AvailabilityLedger {
    /// Empty ledger shaped like the task-indexed layers of `model`.
    pub fn new(model: &MultitaskModel) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| l.masked().map(|p| Mask::zeros(p.kernel_dims())))
                .collect(),
        }
    }

    /// Union of all committed kernel masks.
    pub fn from_model(model: &MultitaskModel) -> Self {
        let mut ledger = Self::new(model);
        for (i, l) in model.layers().iter().enumerate() {
            if let (Some(p), Some(used)) = (l.masked(), ledger.layers[i].as_mut()) {
                for slot in 0..l.tasks.len() {
                    if p.is_committed(slot) {
                        used.union_with(&p.mask(slot).kernel);
                    }
                }
            }
        }
        ledger
    }

    pub(crate) fn from_layers(layers: Vec<Option<Mask>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Option<Mask>] {
        &self.layers
    }

    pub fn used(&self, layer: usize) -> Option<&Mask> {
        self.layers.get(layer).and_then(Option::as_ref)
    }

    pub fn used_count(&self, layer: usize) -> usize {
        self.used(layer).map_or(0, Mask::count)
    }

    pub fn free_count(&self, layer: usize) -> usize {
        self.used(layer).map_or(0, |m| m.len() - m.count())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneReportLine {
    pub layer: usize,
    pub task: String,
    pub budget: usize,
    /// Smallest selected gradient magnitude.
    pub threshold: f32,
    /// Free weights left once this selection is committed.
    pub free_after: usize,
    pub bias_budget: usize,
}

impl fmt::Display for PruneReportLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer={} task={} budget={} threshold={:.6e} free={} bias_budget={}",
            self.layer, self.task, self.budget, self.threshold, self.free_after, self.bias_budget
        )
    }
}

/// Masks aligned with the task path (`None` for layers without masks).
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub task: TaskId,
    pub masks: Vec<Option<LayerMask>>,
    pub report: Vec<PruneReportLine>,
}

/// Positions among `free` with the `k` largest `|grad|`, lowest flat index
/// first on ties.
fn select_free(grad: &[f32], free: &[usize], k: usize) -> Result<(Vec<usize>, f32)> {
    let mags: Vec<f32> = free.iter().map(|&j| grad[j].abs()).collect();
    let picked = top_k_indices(&mags, k)?;
    let threshold = picked.iter().map(|&i| mags[i]).fold(f32::INFINITY, f32::min);
    Ok((picked.into_iter().map(|i| free[i]).collect(), threshold))
}

/// Choose the subnetwork of `task` from the free weights recorded in
/// `ledger`, using one gradient of the task loss on the probe batch.
pub fn select_subnetwork(
    model: &MultitaskModel,
    task: TaskId,
    probe_x: &Tensor,
    probe_y: &Tensor,
    config: &PruneConfig,
    ledger: &AvailabilityLedger,
) -> Result<Selection> {
    let info = model.task(task)?;
    let p = config.fraction(task)?;
    if probe_x.is_empty() || probe_y.dims()[0] != probe_x.dims()[0] {
        return Err(Error::Input(format!(
            "probe batch for `{}` has {} inputs and {} targets",
            info.name,
            probe_x.dims()[0],
            probe_y.dims()[0]
        )));
    }
    let path = model.path(task);
    for &i in &path {
        let l = &model.layers()[i];
        if let Some(mp) = l.masked() {
            if mp.is_committed(l.slot(task).expect("on path")) {
                return Err(Error::State(format!("`{}` already has a committed mask in layer {i}", info.name)));
            }
        }
    }
    let net = model.network_with(task, |i, mp, _| LayerMask {
        kernel: ledger.used(i).map_or_else(|| Mask::ones(mp.kernel_dims()), Mask::complement),
        bias: Mask::ones(mp.bias_dims()),
    })?;
    let (_, grads) = net.loss_gradients(probe_x, probe_y, info.loss, false)?;
    let mut masks = Vec::with_capacity(path.len());
    let mut report = Vec::new();
    for (&i, g) in path.iter().zip(&grads.layers) {
        let Some(mp) = model.layers()[i].masked() else {
            masks.push(None);
            continue;
        };
        let kgrad = g.kernel.as_ref().expect("masked layers have kernels");
        let bgrad = g.bias.as_ref().expect("masked layers have biases");
        let used = ledger.used(i).cloned().unwrap_or_else(|| Mask::zeros(mp.kernel_dims()));
        let free: Vec<usize> = used.complement().indices();
        let k = budget(p, mp.slice_len());
        if k > free.len() {
            return Err(Error::Capacity {
                layer: i,
                task: info.name.clone(),
                budget: k,
                free: free.len(),
            });
        }
        let (chosen, threshold) = select_free(kgrad.data(), &free, k)?;
        let nb = budget(p, mp.bias_len());
        let all: Vec<usize> = (0..mp.bias_len()).collect();
        let (bias_chosen, _) = select_free(bgrad.data(), &all, nb)?;
        report.push(PruneReportLine {
            layer: i,
            task: info.name.clone(),
            budget: k,
            threshold,
            free_after: free.len() - k,
            bias_budget: nb,
        });
        masks.push(Some(LayerMask {
            kernel: Mask::from_indices(mp.kernel_dims(), &chosen)?,
            bias: Mask::from_indices(mp.bias_dims(), &bias_chosen)?,
        }));
    }
    for line in &report {
        log::info!("prune {line}");
    }
    Ok(Selection { task, masks, report })
}

/// Install `masks` for `task` and add them to the ledger. The masks must
/// not touch any weight already in the ledger.
pub fn commit_mask(
    model: &mut MultitaskModel,
    task: TaskId,
    masks: &[Option<LayerMask>],
    ledger: &mut AvailabilityLedger,
) -> Result<()> {
    let name = model.task(task)?.name.clone();
    let path = model.path(task);
    if masks.len() != path.len() {
        return Err(Error::Dimension {
            op: "commit_mask",
            left: vec![masks.len()],
            right: vec![path.len()],
        });
    }
    for (&i, m) in path.iter().zip(masks) {
        let l = &model.layers()[i];
        let Some(mp) = l.masked() else { continue };
        let m = m
            .as_ref()
            .ok_or_else(|| Error::State(format!("no mask for `{name}` in layer {i}")))?;
        if mp.is_committed(l.slot(task).expect("on path")) {
            return Err(Error::State(format!("`{name}` already committed in layer {i}")));
        }
        let used = ledger
            .used(i)
            .ok_or_else(|| Error::State(format!("ledger does not cover layer {i}")))?;
        if m.kernel.dims() != used.dims() {
            return Err(Error::Dimension {
                op: "commit_mask",
                left: m.kernel.dims().to_vec(),
                right: used.dims().to_vec(),
            });
        }
        if m.kernel.intersects(used) {
            let clash = m.kernel.indices().into_iter().filter(|&j| used.bits()[j]).count();
            return Err(Error::Disjointness {
                layer: i,
                detail: format!("mask of `{name}` reuses {clash} weights claimed by earlier tasks"),
            });
        }
    }
    model.set_masks(task, masks, true)?;
    for (&i, m) in path.iter().zip(masks) {
        if let (Some(Some(used)), Some(m)) = (ledger.layers.get_mut(i), m) {
            used.union_with(&m.kernel);
            let r = disjointness_check(model, i)?;
            if !r.passed() {
                return Err(Error::Disjointness {
                    layer: i,
                    detail: format!("{} positions active in more than one task", r.violating_positions.len()),
                });
            }
        }
    }
    Ok(())
}

/// `grads ⊙ masks`; `masks` is aligned with the bundle, `None` leaves a
/// layer unchanged.
pub fn masked_gradient_filter(mut grads: GradientBundle, masks: &[Option<&LayerMask>]) -> Result<GradientBundle> {
    if masks.len() != grads.layers.len() {
        return Err(Error::Dimension {
            op: "masked_gradient_filter",
            left: vec![grads.layers.len()],
            right: vec![masks.len()],
        });
    }
    for (g, m) in grads.layers.iter_mut().zip(masks) {
        let Some(m) = m else { continue };
        let ParamGrad { kernel, bias } = g;
        for (t, mask) in [(kernel, &m.kernel), (bias, &m.bias)] {
            let t = t.as_mut().ok_or_else(|| Error::State("mask given for a parameter-free layer".into()))?;
            if t.dims() != mask.dims() {
                return Err(Error::Dimension {
                    op: "masked_gradient_filter",
                    left: t.dims().to_vec(),
                    right: mask.dims().to_vec(),
                });
            }
            for (v, &on) in t.data_mut().iter_mut().zip(mask.bits()) {
                if !on {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multitask::{disjointness_check_all, ModelLayerSpec, TaskSpec};
    use crate::nn::{Activation, LayerSpec, LossKind};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn model(tasks: usize, inputs: usize, units: usize, seed: u64) -> MultitaskModel {
        let specs: Vec<TaskSpec> = (0..tasks)
            .map(|i| TaskSpec {
                name: format!("t{i}"),
                loss: LossKind::MeanSquaredError,
                input_dims: vec![inputs],
            })
            .collect();
        let layers = [ModelLayerSpec {
            spec: LayerSpec::dense(units, Activation::Identity),
            tasks: None,
        }];
        MultitaskModel::new(&specs, &layers, &mut Rng::new(seed)).unwrap()
    }

    fn probe(rng: &mut Rng, b: usize, d: usize, o: usize) -> (Tensor, Tensor) {
        let x = Tensor::new(vec![b, d], (0..b * d).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap();
        let y = Tensor::new(vec![b, o], (0..b * o).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap();
        (x, y)
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(budget(0.5, 4), 2);
        assert_eq!(budget(0.1, 30), 3);
        assert_eq!(budget(0.2, 100), 20);
        assert_eq!(budget(0.25, 5), 2);
        assert_eq!(budget(0.01, 3), 1);
        assert_eq!(budget(1.0, 7), 7);
    }

    #[test]
    fn four_weight_example() {
        let (chosen, thr) = select_free(&[0.9, -0.1, 0.5, 0.3], &[0, 1, 2, 3], 2).unwrap();
        assert_eq!(chosen, vec![0, 2]);
        assert_eq!(thr, 0.5);
        // Second task after {0, 2} is taken.
        let (chosen, _) = select_free(&[0.0, 0.1, 0.0, 0.3], &[1, 3], 2).unwrap();
        assert_eq!(chosen, vec![1, 3]);
    }

    #[test]
    fn keep_everything() {
        let m = model(1, 3, 2, 1);
        let mut rng = Rng::new(2);
        let (x, y) = probe(&mut rng, 4, 3, 2);
        let cfg = PruneConfig::new(vec![1.0], 0);
        let sel = select_subnetwork(&m, TaskId(0), &x, &y, &cfg, &AvailabilityLedger::new(&m)).unwrap();
        let mask = sel.masks[0].as_ref().unwrap();
        assert_eq!(mask.kernel.count(), 6);
        assert_eq!(mask.bias.count(), 2);
    }

    #[test]
    fn sequential_commits_stay_disjoint() {
        let mut m = model(4, 5, 4, 3);
        let mut rng = Rng::new(4);
        let cfg = PruneConfig::new(vec![0.25; 4], 0);
        cfg.validate(&m).unwrap();
        let mut ledger = AvailabilityLedger::new(&m);
        for t in 0..4 {
            let (x, y) = probe(&mut rng, 8, 5, 4);
            let sel = select_subnetwork(&m, TaskId(t), &x, &y, &cfg, &ledger).unwrap();
            assert!(!sel.masks[0].as_ref().unwrap().kernel.intersects(ledger.used(0).unwrap()));
            commit_mask(&mut m, TaskId(t), &sel.masks, &mut ledger).unwrap();
            assert_eq!(ledger.used_count(0), (t + 1) * budget(0.25, 20));
            assert_eq!(sel.report[0].free_after, 20 - (t + 1) * 5);
        }
        assert!(disjointness_check_all(&m).iter().all(|r| r.passed()));
        assert_eq!(ledger, AvailabilityLedger::from_model(&m));
    }

    #[test]
    fn capacity_error_when_exhausted() {
        let m = model(2, 3, 1, 5);
        let mut ledger = AvailabilityLedger::new(&m);
        ledger.layers[0] = Some(Mask::from_indices(&[3, 1], &[0, 1]).unwrap());
        let mut rng = Rng::new(6);
        let (x, y) = probe(&mut rng, 2, 3, 1);
        let cfg = PruneConfig::new(vec![0.5, 0.5], 0);
        let err = select_subnetwork(&m, TaskId(1), &x, &y, &cfg, &ledger).unwrap_err();
        assert!(matches!(err, Error::Capacity { budget: 2, free: 1, .. }), "{err}");
    }

    #[test]
    fn same_mask_twice_is_rejected() {
        let mut m = model(2, 2, 2, 7);
        let mut ledger = AvailabilityLedger::new(&m);
        let mask = vec![Some(LayerMask {
            kernel: Mask::from_indices(&[2, 2], &[0, 3]).unwrap(),
            bias: Mask::ones(&[2]),
        })];
        commit_mask(&mut m, TaskId(0), &mask, &mut ledger).unwrap();
        assert!(matches!(
            commit_mask(&mut m, TaskId(1), &mask, &mut ledger),
            Err(Error::Disjointness { .. })
        ));
        assert!(matches!(
            commit_mask(&mut m, TaskId(0), &mask, &mut ledger),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn validate_rejects_overcommitted_layer() {
        let m = model(3, 2, 2, 8);
        assert!(PruneConfig::new(vec![0.4; 3], 0).validate(&m).is_err());
        assert!(PruneConfig::new(vec![0.0, 0.1, 0.1], 0).validate(&m).is_err());
        assert!(PruneConfig::new(vec![1.0 / 3.0; 3], 0).validate(&m).is_ok());
    }

    #[test]
    fn gradient_filter_cases() {
        let g = GradientBundle {
            layers: vec![ParamGrad {
                kernel: Some(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap()),
                bias: Some(Tensor::new(vec![2], vec![5., 6.]).unwrap()),
            }],
            input: None,
        };
        let ones = LayerMask {
            kernel: Mask::ones(&[2, 2]),
            bias: Mask::ones(&[2]),
        };
        assert_eq!(masked_gradient_filter(g.clone(), &[Some(&ones)]).unwrap(), g);
        let zeros = LayerMask {
            kernel: Mask::zeros(&[2, 2]),
            bias: Mask::zeros(&[2]),
        };
        let z = masked_gradient_filter(g.clone(), &[Some(&zeros)]).unwrap();
        assert!(z.layers[0].kernel.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
        let bad = LayerMask {
            kernel: Mask::ones(&[4]),
            bias: Mask::ones(&[2]),
        };
        assert!(matches!(masked_gradient_filter(g, &[Some(&bad)]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn selection_is_deterministic() {
        let m = model(2, 4, 3, 9);
        let (x, y) = probe(&mut Rng::new(10), 6, 4, 3);
        let cfg = PruneConfig::new(vec![0.3, 0.3], 0);
        let l = AvailabilityLedger::new(&m);
        assert_eq!(
            select_subnetwork(&m, TaskId(0), &x, &y, &cfg, &l).unwrap(),
            select_subnetwork(&m, TaskId(0), &x, &y, &cfg, &l).unwrap()
        );
    }

    proptest! {
        #[test]
        fn filter_is_elementwise_product(bits in proptest::collection::vec(any::<bool>(), 6), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let k: Vec<f32> = (0..6).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let g = GradientBundle {
                layers: vec![ParamGrad { kernel: Some(Tensor::new(vec![2, 3], k.clone()).unwrap()), bias: Some(Tensor::new(vec![3], vec![1.0; 3]).unwrap()) }],
                input: None,
            };
            let m = LayerMask { kernel: Mask::new(vec![2, 3], bits.clone()).unwrap(), bias: Mask::ones(&[3]) };
            let out = masked_gradient_filter(g, &[Some(&m)]).unwrap();
            let want: Vec<f32> = k.iter().zip(&bits).map(|(&v, &b)| v * f32::from(u8::from(b))).collect();
            prop_assert_eq!(out.layers[0].kernel.as_ref().unwrap().data(), &want[..]);
        }
    }
}
