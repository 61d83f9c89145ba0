//! Task-indexed layers. Every maskable layer stores one kernel and bias
//! slice per attached task plus a binary mask per task; a task runs the
//! plain network obtained by selecting its slices and zeroing masked-out
//! entries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerKind, LayerSpec, LossKind, Network};
use crate::rng::Rng;
use crate::tensor::{glorot_uniform_init, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub usize);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task {}", self.0)
    }
}

/// `1` iff `x != 0`.
pub fn indicator(x: f32) -> u8 {
    u8::from(x != 0.0)
}

/// A binary tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    dims: Vec<usize>,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(dims: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        if dims.iter().product::<usize>() != bits.len() {
            return Err(Error::Shape(format!("mask {dims:?} given {} bits", bits.len())));
        }
        Ok(Self { dims, bits })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            bits: vec![false; dims.iter().product()],
        }
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            bits: vec![true; dims.iter().product()],
        }
    }

    pub fn from_indices(dims: &[usize], indices: &[usize]) -> Result<Self> {
        let mut m = Self::zeros(dims);
        let n = m.bits.len();
        for &i in indices {
            *m.bits.get_mut(i).ok_or_else(|| Error::Bounds(format!("mask index {i} >= {n}")))? = true;
        }
        Ok(m)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            dims: self.dims.clone(),
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    pub fn union_with(&mut self, other: &Mask) {
        self.bits.iter_mut().zip(&other.bits).for_each(|(a, &b)| *a |= b);
    }

    /// `values ⊙ mask`, writing `+0` where the mask is clear.
    pub fn apply(&self, values: &[f32]) -> Vec<f32> {
        values
            .iter()
            .zip(&self.bits)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect()
    }

    fn check_dims(&self, dims: &[usize], op: &'static str) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Dimension {
                op,
                left: self.dims.clone(),
                right: dims.to_vec(),
            });
        }
        Ok(())
    }
}

/// Kernel and bias masks of one task in one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    pub kernel: Mask,
    pub bias: Mask,
}

/// Per-task kernels `[slots × kernel dims]` and biases `[slots × bias dims]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedParams {
    pub(crate) kernel_dims: Vec<usize>,
    pub(crate) bias_dims: Vec<usize>,
    pub(crate) kernel: Vec<f32>,
    pub(crate) bias: Vec<f32>,
    pub(crate) masks: Vec<LayerMask>,
    pub(crate) committed: Vec<bool>,
}

impl MaskedParams {
    /// Weights in one task slice, `W` of the layer.
    pub fn slice_len(&self) -> usize {
        self.kernel_dims.iter().product()
    }

    pub fn bias_len(&self) -> usize {
        self.bias_dims.iter().product()
    }

    pub fn kernel_dims(&self) -> &[usize] {
        &self.kernel_dims
    }

    pub fn bias_dims(&self) -> &[usize] {
        &self.bias_dims
    }

    pub fn kernel_slot(&self, slot: usize) -> &[f32] {
        let w = self.slice_len();
        &self.kernel[slot * w..(slot + 1) * w]
    }

    pub fn kernel_slot_mut(&mut self, slot: usize) -> &mut [f32] {
        let w = self.slice_len();
        &mut self.kernel[slot * w..(slot + 1) * w]
    }

    pub fn bias_slot(&self, slot: usize) -> &[f32] {
        let n = self.bias_len();
        &self.bias[slot * n..(slot + 1) * n]
    }

    pub fn bias_slot_mut(&mut self, slot: usize) -> &mut [f32] {
        let n = self.bias_len();
        &mut self.bias[slot * n..(slot + 1) * n]
    }

    pub fn mask(&self, slot: usize) -> &LayerMask {
        &self.masks[slot]
    }

    pub fn is_committed(&self, slot: usize) -> bool {
        self.committed[slot]
    }

    /// Full `[slots × kernel dims]` tensor.
    pub fn kernel_tensor(&self) -> Result<Tensor> {
        let mut dims = vec![self.masks.len()];
        dims.extend_from_slice(&self.kernel_dims);
        Tensor::new(dims, self.kernel.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerStorage {
    /// Pooling and flatten.
    Stateless,
    /// Unmasked parameters used as-is by every attached task.
    Shared {
        kernel: Tensor,
        bias: Option<Tensor>,
        frozen: bool,
    },
    Masked(MaskedParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayer {
    pub spec: LayerSpec,
    /// Tasks whose path includes this layer, in slot order.
    pub tasks: Vec<TaskId>,
    /// Per-sample input extents.
    pub input_dims: Vec<usize>,
    pub storage: LayerStorage,
}

impl ModelLayer {
    pub fn slot(&self, task: TaskId) -> Option<usize> {
        self.tasks.iter().position(|&t| t == task)
    }

    pub fn masked(&self) -> Option<&MaskedParams> {
        match &self.storage {
            LayerStorage::Masked(p) => Some(p),
            _ => None,
        }
    }

    pub fn masked_mut(&mut self) -> Option<&mut MaskedParams> {
        match &mut self.storage {
            LayerStorage::Masked(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub name: String,
    pub loss: LossKind,
    pub input_dims: Vec<usize>,
    pub output_dims: Vec<usize>,
}

/// One layer of a model description; `tasks = None` attaches every task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayerSpec {
    #[serde(flatten)]
    pub spec: LayerSpec,
    #[serde(default)]
    pub tasks: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub loss: LossKind,
    pub input_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskModel {
    pub(crate) tasks: Vec<TaskInfo>,
    pub(crate) layers: Vec<ModelLayer>,
}

impl MultitaskModel {
    /// Builds the model and initializes every slice independently. Masks
    /// start empty and uncommitted.
    pub fn new(tasks: &[TaskSpec], layers: &[ModelLayerSpec], rng: &mut Rng) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::State("model needs at least one task".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::State(format!("duplicate task name `{}`", t.name)));
            }
        }
        let lookup = |name: &str| {
            tasks
                .iter()
                .position(|t| t.name == name)
                .map(TaskId)
                .ok_or_else(|| Error::UnknownTask(name.to_string()))
        };
        let mut cur: Vec<Vec<usize>> = tasks.iter().map(|t| t.input_dims.clone()).collect();
        let mut built = Vec::with_capacity(layers.len());
        for (li, l) in layers.iter().enumerate() {
            let ids = match &l.tasks {
                None => (0..tasks.len()).map(TaskId).collect::<Vec<_>>(),
                Some(names) => names.iter().map(|n| lookup(n)).collect::<Result<Vec<_>>>()?,
            };
            if ids.is_empty() {
                return Err(Error::State(format!("layer {li} is attached to no task")));
            }
            let input = cur[ids[0].0].clone();
            if let Some(t) = ids.iter().find(|t| cur[t.0] != input) {
                return Err(Error::Shape(format!(
                    "layer {li} receives {:?} from `{}` but {:?} from `{}`",
                    input, tasks[ids[0].0].name, cur[t.0], tasks[t.0].name
                )));
            }
            let output = l.spec.output_dims(&input)?;
            let storage = match l.spec.param_dims(&input)? {
                None => LayerStorage::Stateless,
                Some((kdims, _)) if !l.spec.is_maskable() => {
                    let layer = Layer::<f32>::init(l.spec.clone(), &input, rng)?;
                    debug_assert_eq!(layer.kernel.as_ref().map(|k| k.dims().to_vec()), Some(kdims));
                    LayerStorage::Shared {
                        kernel: layer.kernel.expect("parametric layer"),
                        bias: layer.bias,
                        frozen: false,
                    }
                }
                Some((kdims, bdims)) => {
                    let bdims = bdims.expect("maskable layers have a bias");
                    let mut kernel = Vec::new();
                    for _ in &ids {
                        kernel.extend(glorot_uniform_init::<f32>(&kdims, rng)?.into_data());
                    }
                    let n: usize = bdims.iter().product();
                    LayerStorage::Masked(MaskedParams {
                        bias: vec![0.0; n * ids.len()],
                        masks: ids
                            .iter()
                            .map(|_| LayerMask {
                                kernel: Mask::zeros(&kdims),
                                bias: Mask::zeros(&bdims),
                            })
                            .collect(),
                        committed: vec![false; ids.len()],
                        kernel_dims: kdims,
                        bias_dims: bdims,
                        kernel,
                    })
                }
            };
            for t in &ids {
                cur[t.0] = output.clone();
            }
            built.push(ModelLayer {
                spec: l.spec.clone(),
                tasks: ids,
                input_dims: input,
                storage,
            });
        }
        let infos = tasks
            .iter()
            .zip(cur)
            .map(|(t, out)| TaskInfo {
                name: t.name.clone(),
                loss: t.loss,
                input_dims: t.input_dims.clone(),
                output_dims: out,
            })
            .collect();
        let model = Self { tasks: infos, layers: built };
        for t in 0..model.tasks.len() {
            if model.path(TaskId(t)).is_empty() {
                return Err(Error::State(format!("task `{}` has no layers", model.tasks[t].name)));
            }
            model.task_network(TaskId(t))?;
        }
        Ok(model)
    }

    pub(crate) fn from_parts(tasks: Vec<TaskInfo>, layers: Vec<ModelLayer>) -> Self {
        Self { tasks, layers }
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn tasks(&self) -> &[TaskInfo] {
        &self.tasks
    }

    pub fn task(&self, task: TaskId) -> Result<&TaskInfo> {
        self.tasks.get(task.0).ok_or_else(|| Error::UnknownTask(task.to_string()))
    }

    pub fn task_id(&self, name: &str) -> Result<TaskId> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .map(TaskId)
            .ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    pub fn layers(&self) -> &[ModelLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ModelLayer] {
        &mut self.layers
    }

    /// Model layer indices on the task's path, in order.
    pub fn path(&self, task: TaskId) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].slot(task).is_some())
            .collect()
    }

    /// Task masks aligned with [`MultitaskModel::path`]; `None` for layers without masks.
    pub fn path_masks(&self, task: TaskId) -> Result<Vec<Option<&LayerMask>>> {
        self.task(task)?;
        Ok(self
            .path(task)
            .into_iter()
            .map(|i| {
                let l = &self.layers[i];
                l.masked().map(|p| p.mask(l.slot(task).expect("on path")))
            })
            .collect())
    }

    /// Single-task network for `task` with every masked kernel and bias
    /// replaced by `mask(layer)`-selected values of the task's slice.
    pub fn network_with(&self, task: TaskId, masks: impl Fn(usize, &MaskedParams, usize) -> LayerMask) -> Result<Network<f32>> {
        self.task(task)?;
        let mut layers = Vec::new();
        for i in self.path(task) {
            let l = &self.layers[i];
            let slot = l.slot(task).expect("on path");
            let (kernel, bias) = match &l.storage {
                LayerStorage::Stateless => (None, None),
                LayerStorage::Shared { kernel, bias, .. } => (Some(kernel.clone()), bias.clone()),
                LayerStorage::Masked(p) => {
                    let m = masks(i, p, slot);
                    m.kernel.check_dims(&p.kernel_dims, "kernel mask")?;
                    m.bias.check_dims(&p.bias_dims, "bias mask")?;
                    (
                        Some(Tensor::new(p.kernel_dims.clone(), m.kernel.apply(p.kernel_slot(slot)))?),
                        Some(Tensor::new(p.bias_dims.clone(), m.bias.apply(p.bias_slot(slot)))?),
                    )
                }
            };
            layers.push(Layer::new(l.spec.clone(), kernel, bias)?);
        }
        Network::new(layers)
    }

    /// The plain network task `task` computes under its installed masks.
    pub fn task_network(&self, task: TaskId) -> Result<Network<f32>> {
        self.network_with(task, |_, p, slot| p.mask(slot).clone())
    }

    /// Install masks directly, without ledger bookkeeping. `masks` is
    /// aligned with the task path; entries for unmasked layers are ignored.
    pub fn set_masks(&mut self, task: TaskId, masks: &[Option<LayerMask>], committed: bool) -> Result<()> {
        let path = self.path(task);
        if masks.len() != path.len() {
            return Err(Error::Dimension {
                op: "set_masks",
                left: vec![masks.len()],
                right: vec![path.len()],
            });
        }
        for (&i, m) in path.iter().zip(masks) {
            let slot = self.layers[i].slot(task).expect("on path");
            if let (Some(p), Some(m)) = (self.layers[i].masked_mut(), m) {
                m.kernel.check_dims(&p.kernel_dims, "kernel mask")?;
                m.bias.check_dims(&p.bias_dims, "bias mask")?;
                p.masks[slot] = m.clone();
                p.committed[slot] = committed;
            }
        }
        Ok(())
    }

    /// Whether every masked layer on the task path has a committed mask.
    pub fn is_committed(&self, task: TaskId) -> bool {
        self.path(task).into_iter().all(|i| {
            let l = &self.layers[i];
            l.masked().is_none_or(|p| p.committed[l.slot(task).expect("on path")])
        })
    }

    fn check_input(&self, task: TaskId, x: &Tensor) -> Result<()> {
        let info = self.task(task)?;
        if x.dims().len() != info.input_dims.len() + 1 || x.dims()[1..] != info.input_dims[..] {
            let mut expected = vec![x.dims()[0]];
            expected.extend_from_slice(&info.input_dims);
            return Err(Error::Dimension {
                op: "mt_forward",
                left: x.dims().to_vec(),
                right: expected,
            });
        }
        Ok(())
    }
}

/// Forward pass of `task` on a batch; a final softmax yields probabilities.
pub fn mt_forward(model: &MultitaskModel, x: &Tensor, task: TaskId) -> Result<Tensor> {
    model.check_input(task, x)?;
    model.task_network(task)?.forward(x)
}

/// Forward pass returning logits.
pub fn mt_forward_logits(model: &MultitaskModel, x: &Tensor, task: TaskId) -> Result<Tensor> {
    model.check_input(task, x)?;
    model.task_network(task)?.forward_logits(x)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DisjointnessReport {
    pub layer: usize,
    pub max_overlap: usize,
    pub violating_positions: Vec<usize>,
}

impl DisjointnessReport {
    pub fn passed(&self) -> bool {
        self.max_overlap <= 1
    }
}

/// Per kernel position `(b, c)`, counts the tasks `a` with
/// `I(k[a,b,c] · mask[a,b,c]) = 1`.
pub fn disjointness_check(model: &MultitaskModel, layer: usize) -> Result<DisjointnessReport> {
    let l = model
        .layers
        .get(layer)
        .ok_or_else(|| Error::Bounds(format!("layer {layer} of {}", model.layers.len())))?;
    let p = l
        .masked()
        .ok_or_else(|| Error::State(format!("layer {layer} ({:?}) is not task-indexed", l.spec.kind)))?;
    let w = p.slice_len();
    let mut counts = vec![0usize; w];
    for slot in 0..l.tasks.len() {
        let k = p.kernel_slot(slot);
        for (j, &m) in p.masks[slot].kernel.bits.iter().enumerate() {
            if m {
                counts[j] += usize::from(indicator(k[j]));
            }
        }
    }
    Ok(DisjointnessReport {
        layer,
        max_overlap: counts.iter().copied().max().unwrap_or(0),
        violating_positions: (0..w).filter(|&j| counts[j] > 1).collect(),
    })
}

/// [`disjointness_check`] for every task-indexed layer.
pub fn disjointness_check_all(model: &MultitaskModel) -> Vec<DisjointnessReport> {
    (0..model.layers.len())
        .filter(|&i| model.layers[i].masked().is_some())
        .map(|i| disjointness_check(model, i).expect("masked layer"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActiveCounts {
    /// Kernel mask entries per task over all task-indexed layers.
    pub per_task: Vec<usize>,
    /// `[layer][slot]` kernel mask entries per task-indexed layer.
    pub per_layer: Vec<(usize, Vec<usize>)>,
    pub bias_per_task: Vec<usize>,
    pub total: usize,
}

pub fn active_weight_count(model: &MultitaskModel) -> ActiveCounts {
    let mut per_task = vec![0; model.tasks.len()];
    let mut bias_per_task = vec![0; model.tasks.len()];
    let mut per_layer = Vec::new();
    for (i, l) in model.layers.iter().enumerate() {
        if let Some(p) = l.masked() {
            let counts: Vec<usize> = p.masks.iter().map(|m| m.kernel.count()).collect();
            for (slot, t) in l.tasks.iter().enumerate() {
                per_task[t.0] += counts[slot];
                bias_per_task[t.0] += p.masks[slot].bias.count();
            }
            per_layer.push((i, counts));
        }
    }
    ActiveCounts {
        total: per_task.iter().sum(),
        per_task,
        per_layer,
        bias_per_task,
    }
}

/// Whether a layer spec is an embedding (shared, never pruned).
pub fn is_embedding(spec: &LayerSpec) -> bool {
    matches!(spec.kind, LayerKind::Embedding { .. })
}
