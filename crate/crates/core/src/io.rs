//! On-disk formats: sparse multitask models (`.smt`), dense single-task
//! models (`.dense`) and training checkpoints (`.ckpt`).
//!
//! All three share one frame: an 8-byte magic, a version byte, a
//! little-endian `u32` length followed by a UTF-8 JSON layer table, a
//! little-endian binary payload, and a trailing `u64` holding the first
//! eight bytes of the SHA-256 of everything before it, read little-endian.
//! `docs/formats.md` gives the byte layouts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::multitask::{disjointness_check_all, LayerMask, LayerStorage, Mask, MaskedParams, ModelLayer, MultitaskModel, TaskId, TaskInfo};
use crate::nn::{Layer, LayerSpec, Network};
use crate::prune::{budget, AvailabilityLedger};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::train::{OptimizerState, SlotMoments, SHARED_SLOT};

pub const SPARSE_MAGIC: [u8; 8] = *b"RSN2SMT\0";
pub const DENSE_MAGIC: [u8; 8] = *b"RSN2DNS\0";
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"RSN2CKP\0";
pub const FORMAT_VERSION: u8 = 1;

/// Bytes of frame overhead before the JSON header.
const PREFIX: usize = 8 + 1 + 4;

pub fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn bits(&mut self, bits: &[bool]) {
        for chunk in bits.chunks(8) {
            let b = chunk.iter().enumerate().fold(0u8, |acc, (i, &s)| acc | (u8::from(s) << i));
            self.0.push(b);
        }
    }
    fn count(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::State(format!("{n} entries exceed the u32 range")))?;
        self.u32(n);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}: need {n} bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.pos as u64, "length overflow"))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
    fn bits(&mut self, n: usize, what: &str) -> Result<Vec<bool>> {
        let raw = self.take(n.div_ceil(8), what)?;
        Ok((0..n).map(|i| raw[i / 8] >> (i % 8) & 1 == 1).collect())
    }
    fn offset(&self) -> u64 {
        self.pos as u64
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.pos as u64, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn frame<H: Serialize>(magic: [u8; 8], header: &H, payload: Writer) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).expect("headers serialize");
    let mut w = Writer::default();
    w.0.extend_from_slice(&magic);
    w.u8(FORMAT_VERSION);
    w.count(json.len())?;
    w.0.extend_from_slice(&json);
    w.0.extend_from_slice(&payload.0);
    let sum = checksum(&w.0);
    w.u64(sum);
    Ok(w.0)
}

/// Checks magic, version and checksum; returns the parsed header and a
/// reader over the payload.
fn unframe<'a, H: for<'de> Deserialize<'de>>(bytes: &'a [u8], magic: [u8; 8], kind: &str) -> Result<(H, Reader<'a>)> {
    if bytes.len() < PREFIX + 8 {
        return Err(Error::format(bytes.len() as u64, format!("file too short for a {kind} file")));
    }
    if bytes[..8] != magic {
        return Err(Error::format(0, format!("not a {kind} file")));
    }
    if bytes[8] != FORMAT_VERSION {
        return Err(Error::Version(bytes[8]));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let computed = checksum(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 9 };
    let len = r.u32("header length")? as usize;
    let start = r.offset();
    let json = r.take(len, "header")?;
    let header = serde_json::from_slice(json).map_err(|e| Error::format(start, format!("header: {e}")))?;
    Ok((header, r))
}

/// Temp file plus rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let ctx = || path.display().to_string();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(ctx(), e)
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StorageKind {
    Stateless,
    Shared,
    Masked,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerHeader {
    spec: LayerSpec,
    tasks: Vec<usize>,
    input_dims: Vec<usize>,
    storage: StorageKind,
    #[serde(default)]
    committed: Vec<bool>,
    #[serde(default)]
    frozen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    tasks: Vec<TaskInfo>,
    layers: Vec<LayerHeader>,
}

fn model_header(model: &MultitaskModel) -> ModelHeader {
    let layers = model
        .layers()
        .iter()
        .map(|l| {
            let (storage, committed, frozen) = match &l.storage {
                LayerStorage::Stateless => (StorageKind::Stateless, vec![], false),
                LayerStorage::Shared { frozen, .. } => (StorageKind::Shared, vec![], *frozen),
                LayerStorage::Masked(p) => (StorageKind::Masked, p.committed.clone(), false),
            };
            LayerHeader {
                spec: l.spec.clone(),
                tasks: l.tasks.iter().map(|t| t.0).collect(),
                input_dims: l.input_dims.clone(),
                storage,
                committed,
                frozen,
            }
        })
        .collect();
    ModelHeader {
        tasks: model.tasks().to_vec(),
        layers,
    }
}

/// Parameter extents of a header layer, checked against its storage kind.
fn header_dims(li: usize, h: &LayerHeader, tasks: usize) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
    let bad = |d: String| Error::format(0, format!("layer {li}: {d}"));
    if h.tasks.is_empty() || h.tasks.iter().any(|&t| t >= tasks) {
        return Err(bad("task list out of range".into()));
    }
    let dims = h.spec.param_dims(&h.input_dims).map_err(|e| bad(e.to_string()))?;
    match (h.storage, dims) {
        (StorageKind::Stateless, None) => Ok((vec![], None)),
        (StorageKind::Shared, Some(d)) => Ok(d),
        (StorageKind::Masked, Some((k, Some(b)))) => {
            if h.committed.len() != h.tasks.len() {
                return Err(bad("committed flags do not match task list".into()));
            }
            Ok((k, Some(b)))
        }
        (kind, _) => Err(bad(format!("{kind:?} storage does not fit {:?}", h.spec.kind))),
    }
}

fn assemble(header: &ModelHeader, layers: Vec<ModelLayer>) -> Result<MultitaskModel> {
    let model = MultitaskModel::from_parts(header.tasks.clone(), layers);
    for t in 0..model.task_count() {
        model.task_network(TaskId(t)).map_err(|e| Error::format(0, format!("task {t}: {e}")))?;
    }
    Ok(model)
}

fn model_layer(h: &LayerHeader, storage: LayerStorage) -> ModelLayer {
    ModelLayer {
        spec: h.spec.clone(),
        tasks: h.tasks.iter().map(|&t| TaskId(t)).collect(),
        input_dims: h.input_dims.clone(),
        storage,
    }
}

fn write_shared(w: &mut Writer, l: &ModelLayer) {
    if let LayerStorage::Shared { kernel, bias, .. } = &l.storage {
        w.f32s(kernel.data());
        if let Some(b) = bias {
            w.f32s(b.data());
        }
    }
}

fn read_shared(r: &mut Reader, h: &LayerHeader, dims: (Vec<usize>, Option<Vec<usize>>)) -> Result<LayerStorage> {
    let (kd, bd) = dims;
    let kernel = Tensor::new(kd.clone(), r.f32s(kd.iter().product(), "shared kernel")?)?;
    let bias = match bd {
        Some(bd) => Some(Tensor::new(bd.clone(), r.f32s(bd.iter().product(), "shared bias")?)?),
        None => None,
    };
    Ok(LayerStorage::Shared {
        kernel,
        bias,
        frozen: h.frozen,
    })
}

/// One `(layer, task)` block of a sparse file.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBlock {
    pub layer: usize,
    pub task: TaskId,
    pub kernel: Vec<(u32, f32)>,
    pub bias: Vec<(u32, f32)>,
}

/// Decoded sparse file before it is turned back into a model.
#[derive(Debug, Clone)]
pub struct SparseFile {
    header: ModelHeader,
    pub blocks: Vec<SparseBlock>,
    shared: Vec<(usize, LayerStorage)>,
}

impl SparseFile {
    pub fn tasks(&self) -> &[TaskInfo] {
        &self.header.tasks
    }

    /// Kernel entries stored per layer, summed over tasks.
    pub fn kernel_entries(&self, layer: usize) -> usize {
        self.blocks.iter().filter(|b| b.layer == layer).map(|b| b.kernel.len()).sum()
    }

    pub fn total_entries(&self) -> usize {
        self.blocks.iter().map(|b| b.kernel.len() + b.bias.len()).sum()
    }
}

fn coo(mask: &Mask, values: &[f32]) -> Vec<(u32, f32)> {
    mask.indices().into_iter().map(|j| (j as u32, values[j])).collect()
}

/// Sparse COO export. Every position inside a task's mask is stored, in
/// increasing flat-index order, including values that trained to exactly
/// zero. Refuses models whose masks overlap.
pub fn export_sparse(model: &MultitaskModel) -> Result<Vec<u8>> {
    if let Some(r) = disjointness_check_all(model).into_iter().find(|r| !r.passed()) {
        return Err(Error::Disjointness {
            layer: r.layer,
            detail: format!("{} overlapping positions; refusing to export", r.violating_positions.len()),
        });
    }
    let mut w = Writer::default();
    for l in model.layers() {
        match &l.storage {
            LayerStorage::Stateless => {}
            LayerStorage::Shared { .. } => write_shared(&mut w, l),
            LayerStorage::Masked(p) => {
                if p.slice_len() > u32::MAX as usize {
                    return Err(Error::State("layer too large for u32 flat indices".into()));
                }
                for slot in 0..l.tasks.len() {
                    let m = p.mask(slot);
                    for entries in [coo(&m.kernel, p.kernel_slot(slot)), coo(&m.bias, p.bias_slot(slot))] {
                        w.count(entries.len())?;
                        for (j, v) in entries {
                            w.u32(j);
                            w.0.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                }
            }
        }
    }
    frame(SPARSE_MAGIC, &model_header(model), w)
}

fn read_coo(r: &mut Reader, len: usize, owner: &mut [Option<usize>], slot: usize, what: &str) -> Result<Vec<(u32, f32)>> {
    let n = r.u32(what)? as usize;
    if n > len {
        return Err(Error::format(r.offset(), format!("{what}: {n} entries for {len} positions")));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let j = r.u32(what)?;
        let v = r.f32(what)?;
        let ju = j as usize;
        if ju >= len {
            return Err(Error::format(at, format!("{what}: index {j} out of range {len}")));
        }
        if out.last().is_some_and(|&(p, _)| p >= j) {
            return Err(Error::format(at, format!("{what}: indices not strictly increasing at {j}")));
        }
        match owner[ju] {
            Some(o) if o != slot => {
                return Err(Error::format(at, format!("{what}: disjointness violated, index {j} also stored for slot {o}")));
            }
            _ => owner[ju] = Some(slot),
        }
        out.push((j, v));
    }
    Ok(out)
}

/// Decode and validate a sparse file without building a model.
pub fn parse_sparse(bytes: &[u8]) -> Result<SparseFile> {
    let (header, mut r): (ModelHeader, _) = unframe(bytes, SPARSE_MAGIC, "sparse model")?;
    let mut blocks = Vec::new();
    let mut shared = Vec::new();
    for (li, h) in header.layers.iter().enumerate() {
        let dims = header_dims(li, h, header.tasks.len())?;
        match h.storage {
            StorageKind::Stateless => {}
            StorageKind::Shared => shared.push((li, read_shared(&mut r, h, dims)?)),
            StorageKind::Masked => {
                let w: usize = dims.0.iter().product();
                let nb: usize = dims.1.as_ref().expect("masked has bias").iter().product();
                let mut kernel_owner = vec![None; w];
                // Bias rows are per task; only order and range apply.
                for (slot, &t) in h.tasks.iter().enumerate() {
                    let kernel = read_coo(&mut r, w, &mut kernel_owner, slot, &format!("layer {li} kernel"))?;
                    let mut own = vec![None; nb];
                    let bias = read_coo(&mut r, nb, &mut own, slot, &format!("layer {li} bias"))?;
                    blocks.push(SparseBlock {
                        layer: li,
                        task: TaskId(t),
                        kernel,
                        bias,
                    });
                }
            }
        }
    }
    r.finish()?;
    Ok(SparseFile { header, blocks, shared })
}

/// Inference model from a sparse file: values outside the stored entries
/// are zero and the stored positions become the committed masks.
pub fn import_sparse(bytes: &[u8]) -> Result<MultitaskModel> {
    let file = parse_sparse(bytes)?;
    let mut shared = file.shared.into_iter();
    let mut blocks = file.blocks.into_iter().peekable();
    let mut layers = Vec::with_capacity(file.header.layers.len());
    for (li, h) in file.header.layers.iter().enumerate() {
        let storage = match h.storage {
            StorageKind::Stateless => LayerStorage::Stateless,
            StorageKind::Shared => shared.next().expect("parsed in order").1,
            StorageKind::Masked => {
                let (kd, bd) = header_dims(li, h, file.header.tasks.len())?;
                let bd = bd.expect("masked has bias");
                let (w, nb) = (kd.iter().product::<usize>(), bd.iter().product::<usize>());
                let slots = h.tasks.len();
                let mut kernel = vec![0.0; w * slots];
                let mut bias = vec![0.0; nb * slots];
                let mut masks = Vec::with_capacity(slots);
                for slot in 0..slots {
                    let b = blocks.next().filter(|b| b.layer == li).expect("parsed in order");
                    let ki: Vec<usize> = b.kernel.iter().map(|&(j, _)| j as usize).collect();
                    let bi: Vec<usize> = b.bias.iter().map(|&(j, _)| j as usize).collect();
                    for &(j, v) in &b.kernel {
                        kernel[slot * w + j as usize] = v;
                    }
                    for &(j, v) in &b.bias {
                        bias[slot * nb + j as usize] = v;
                    }
                    masks.push(LayerMask {
                        kernel: Mask::from_indices(&kd, &ki)?,
                        bias: Mask::from_indices(&bd, &bi)?,
                    });
                }
                LayerStorage::Masked(MaskedParams {
                    kernel_dims: kd,
                    bias_dims: bd,
                    kernel,
                    bias,
                    masks,
                    committed: h.committed.clone(),
                })
            }
        };
        layers.push(model_layer(h, storage));
    }
    assemble(&file.header, layers)
}

/// One row of the active-entry bound check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundLine {
    pub layer: usize,
    pub entries: usize,
    pub bound: usize,
}

impl BoundLine {
    pub fn passed(&self) -> bool {
        self.entries <= self.bound
    }
}

/// Kernel entries per task-indexed layer against `Σ budget(p_task, W)` over
/// the layer's tasks; a violation is a [`Error::Verification`].
pub fn check_entry_bound(file: &SparseFile, keep_fraction: &[f64]) -> Result<Vec<BoundLine>> {
    let mut lines = Vec::new();
    for (li, h) in file.header.layers.iter().enumerate() {
        if h.storage != StorageKind::Masked {
            continue;
        }
        let w: usize = header_dims(li, h, file.header.tasks.len())?.0.iter().product();
        let mut bound = 0;
        for &t in &h.tasks {
            let p = *keep_fraction
                .get(t)
                .ok_or_else(|| Error::State(format!("no keep fraction for task {t}")))?;
            bound += budget(p, w);
        }
        let line = BoundLine {
            layer: li,
            entries: file.kernel_entries(li),
            bound,
        };
        if !line.passed() {
            return Err(Error::Verification(format!(
                "layer {li} stores {} kernel entries, bound is {bound}",
                line.entries
            )));
        }
        lines.push(line);
    }
    Ok(lines)
}

pub fn save_sparse(model: &MultitaskModel, path: &Path) -> Result<u64> {
    let bytes = export_sparse(model)?;
    write_atomic(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load_sparse(path: &Path) -> Result<MultitaskModel> {
    import_sparse(&read_file(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenseHeader {
    task: TaskInfo,
    input_dims: Vec<usize>,
    layers: Vec<LayerSpec>,
}

/// Dense standalone network for one task: every parameter of its path,
/// with positions outside the task's masks stored as zeros.
pub fn export_dense_task(model: &MultitaskModel, task: TaskId) -> Result<Vec<u8>> {
    let info = model.task(task)?.clone();
    let net = model.task_network(task)?;
    export_dense(&info, &net)
}

pub fn export_dense(info: &TaskInfo, net: &Network<f32>) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    for l in net.layers() {
        if let Some(k) = &l.kernel {
            w.f32s(k.data());
        }
        if let Some(b) = &l.bias {
            w.f32s(b.data());
        }
    }
    let header = DenseHeader {
        task: info.clone(),
        input_dims: info.input_dims.clone(),
        layers: net.layers().iter().map(|l| l.spec.clone()).collect(),
    };
    frame(DENSE_MAGIC, &header, w)
}

pub fn import_dense(bytes: &[u8]) -> Result<(TaskInfo, Network<f32>)> {
    let (h, mut r): (DenseHeader, _) = unframe(bytes, DENSE_MAGIC, "dense model")?;
    let mut dims = h.input_dims.clone();
    let mut layers = Vec::with_capacity(h.layers.len());
    for (i, spec) in h.layers.iter().enumerate() {
        let pd = spec.param_dims(&dims).map_err(|e| Error::format(0, format!("layer {i}: {e}")))?;
        let (kernel, bias) = match pd {
            None => (None, None),
            Some((kd, bd)) => {
                let k = Tensor::new(kd.clone(), r.f32s(kd.iter().product(), "kernel")?)?;
                let b = match bd {
                    Some(bd) => Some(Tensor::new(bd.clone(), r.f32s(bd.iter().product(), "bias")?)?),
                    None => None,
                };
                (Some(k), b)
            }
        };
        layers.push(Layer::new(spec.clone(), kernel, bias)?);
        dims = spec.output_dims(&dims)?;
    }
    r.finish()?;
    Ok((h.task, Network::new(layers)?))
}

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MultitaskModel,
    pub ledger: AvailabilityLedger,
    pub optimizer: Option<OptimizerState>,
    pub rng: RngState,
    pub completed_groups: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MomentHeader {
    layer: usize,
    /// `None` for shared layers.
    slot: Option<usize>,
    step: u64,
    kernel_len: usize,
    bias_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelHeader,
    completed_groups: usize,
    optimizer: Option<Vec<MomentHeader>>,
}

pub fn save_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.u64(ck.rng.seed);
    w.0.extend_from_slice(&ck.rng.word_pos.to_le_bytes());
    for l in ck.model.layers() {
        match &l.storage {
            LayerStorage::Stateless => {}
            LayerStorage::Shared { .. } => write_shared(&mut w, l),
            LayerStorage::Masked(p) => {
                w.f32s(&p.kernel);
                w.f32s(&p.bias);
                for m in &p.masks {
                    w.bits(m.kernel.bits());
                    w.bits(m.bias.bits());
                }
            }
        }
    }
    if ck.ledger.layers().len() != ck.model.layers().len() {
        return Err(Error::State("ledger does not match the model".into()));
    }
    for used in ck.ledger.layers().iter().flatten() {
        w.bits(used.bits());
    }
    let optimizer = ck.optimizer.as_ref().map(|o| {
        o.slots
            .iter()
            .map(|(&(layer, slot), m)| {
                w.f32s(&m.kernel_m);
                w.f32s(&m.kernel_v);
                w.f32s(&m.bias_m);
                w.f32s(&m.bias_v);
                MomentHeader {
                    layer,
                    slot: (slot != SHARED_SLOT).then_some(slot),
                    step: m.step,
                    kernel_len: m.kernel_m.len(),
                    bias_len: m.bias_m.len(),
                }
            })
            .collect()
    });
    let header = CheckpointHeader {
        model: model_header(&ck.model),
        completed_groups: ck.completed_groups,
        optimizer,
    };
    frame(CHECKPOINT_MAGIC, &header, w)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (h, mut r): (CheckpointHeader, _) = unframe(bytes, CHECKPOINT_MAGIC, "checkpoint")?;
    let seed = r.u64("rng seed")?;
    let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
    let mut layers = Vec::with_capacity(h.model.layers.len());
    for (li, lh) in h.model.layers.iter().enumerate() {
        let dims = header_dims(li, lh, h.model.tasks.len())?;
        let storage = match lh.storage {
            StorageKind::Stateless => LayerStorage::Stateless,
            StorageKind::Shared => read_shared(&mut r, lh, dims)?,
            StorageKind::Masked => {
                let (kd, bd) = dims;
                let bd = bd.expect("masked has bias");
                let slots = lh.tasks.len();
                let (w, nb) = (kd.iter().product::<usize>(), bd.iter().product::<usize>());
                let kernel = r.f32s(w * slots, "kernel slots")?;
                let bias = r.f32s(nb * slots, "bias slots")?;
                let masks = (0..slots)
                    .map(|_| {
                        Ok(LayerMask {
                            kernel: Mask::new(kd.clone(), r.bits(w, "kernel mask")?)?,
                            bias: Mask::new(bd.clone(), r.bits(nb, "bias mask")?)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                LayerStorage::Masked(MaskedParams {
                    kernel_dims: kd,
                    bias_dims: bd,
                    kernel,
                    bias,
                    masks,
                    committed: lh.committed.clone(),
                })
            }
        };
        layers.push(model_layer(lh, storage));
    }
    let mut ledger = Vec::with_capacity(layers.len());
    for l in &layers {
        ledger.push(match l.masked() {
            Some(p) => Some(Mask::new(p.kernel_dims.clone(), r.bits(p.slice_len(), "ledger")?)?),
            None => None,
        });
    }
    let ledger = AvailabilityLedger::from_layers(ledger);
    let optimizer = match &h.optimizer {
        None => None,
        Some(entries) => {
            let mut state = OptimizerState::default();
            for e in entries {
                let m = SlotMoments {
                    step: e.step,
                    kernel_m: r.f32s(e.kernel_len, "moments")?,
                    kernel_v: r.f32s(e.kernel_len, "moments")?,
                    bias_m: r.f32s(e.bias_len, "moments")?,
                    bias_v: r.f32s(e.bias_len, "moments")?,
                };
                state.slots.insert((e.layer, e.slot.unwrap_or(SHARED_SLOT)), m);
            }
            Some(state)
        }
    };
    r.finish()?;
    let model = assemble(&h.model, layers)?;
    if ledger != AvailabilityLedger::from_model(&model) {
        return Err(Error::format(0, "ledger disagrees with the committed masks"));
    }
    Ok(Checkpoint {
        model,
        ledger,
        optimizer,
        rng: RngState { seed, word_pos },
        completed_groups: h.completed_groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub multitask_bytes: u64,
    pub dedicated_bytes: u64,
    pub ratio: f64,
}

fn file_size(p: &Path) -> Result<u64> {
    Ok(fs::metadata(p).map_err(|e| Error::io(p.display().to_string(), e))?.len())
}

/// Filesystem sizes of one multitask file against dedicated per-task files.
pub fn size_report(multitask: &Path, dedicated: &[PathBuf]) -> Result<SizeReport> {
    let multitask_bytes = file_size(multitask)?;
    let mut dedicated_bytes = 0;
    for p in dedicated {
        dedicated_bytes += file_size(p)?;
    }
    Ok(SizeReport {
        multitask_bytes,
        dedicated_bytes,
        ratio: multitask_bytes as f64 / dedicated_bytes as f64,
    })
}
