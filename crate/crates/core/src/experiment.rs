//! Config-driven experiment runs and their on-disk artifacts.
//!
//! A run directory holds:
//!
//! | file | contents |
//! |------|----------|
//! | `config.toml` | byte copy of the config used |
//! | `metrics.jsonl` | training history and forgetting records |
//! | `forgetting.csv` | `after_group,task,test_loss,test_metric` |
//! | `prune_report.txt` | one selection line per (layer, task) |
//! | `disjointness.json` | overlap report per task-indexed layer |
//! | `preprocessing.json` | fitted vocabularies and scalers per task |
//! | `checkpoint.ckpt`, `checkpoints/group-K.ckpt` | resumable state |
//! | `model.smt` | sparse multitask export |
//! | `dense/<task>.dense` | dense single-task equivalents |
//! | `eval/<task>.json` | final test evaluation |
//! | `manifest.json` | config hash, metrics, artifact hashes |

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetSpec, Preprocessing};
use crate::error::{Error, Result};
use crate::io::{
    check_entry_bound, export_dense_task, export_sparse, load_checkpoint, parse_sparse, read_file, save_checkpoint, size_report,
    write_atomic, BoundLine, Checkpoint, SizeReport,
};
use crate::multitask::{disjointness_check_all, DisjointnessReport, ModelLayerSpec, MultitaskModel, TaskId, TaskSpec};
use crate::nn::LossKind;
use crate::prune::{AvailabilityLedger, PruneConfig, DEFAULT_PROBE_BATCH};
use crate::rng::Rng;
use crate::train::{
    run_schedule, EarlyStopConfig, EvalReport, ForgettingLog, ForgettingRow, HistoryRecord, OptimizerConfig, OptimizerState, RunConfig,
    RunObserver, RunState, TaskStreams, TrainSchedule, VALIDATION_FRACTION,
};

pub const DATA_ROOT_ENV: &str = "RSN2_DATA_ROOT";

const TAG_INIT: u64 = 0x1417;
const TAG_DATA: u64 = 0xda7a_0000;
const TAG_SPLIT: u64 = 0x5917_0000;

fn default_validation() -> f64 {
    VALIDATION_FRACTION
}

fn default_probe() -> usize {
    DEFAULT_PROBE_BATCH
}

fn default_batch() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub loss: LossKind,
    pub keep_fraction: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub data: DatasetSpec,
}

/// One experiment: architecture, tasks, schedule and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    #[serde(default = "default_probe")]
    pub probe_batch_size: usize,
    /// Task names per group, trained in order.
    pub schedule: Vec<Vec<String>>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub early_stop: EarlyStopConfig,
    pub tasks: Vec<TaskConfig>,
    pub layers: Vec<ModelLayerSpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "<root>".into());
            Error::config(path, e.message().to_string())
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::config("<file>", "config is not UTF-8"))?;
        Ok((Self::from_toml(text)?, bytes))
    }

    /// Structural checks that need no data; the keep-fraction sum is
    /// checked per shared layer once the model is built.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        if self.tasks.is_empty() {
            return Err(Error::config("tasks", "at least one task is required"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            let at = |f: &str| format!("tasks[{i}].{f}");
            if self.tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::config(at("name"), format!("duplicate task `{}`", t.name)));
            }
            if !(t.keep_fraction > 0.0 && t.keep_fraction <= 1.0) {
                return Err(Error::config(at("keep_fraction"), "must lie in (0, 1]"));
            }
            if t.batch_size == 0 {
                return Err(Error::config(at("batch_size"), "must be at least 1"));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation_fraction", "must lie in (0, 1)"));
        }
        if self.probe_batch_size == 0 {
            return Err(Error::config("probe_batch_size", "must be at least 1"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            for name in l.tasks.iter().flatten() {
                if !self.tasks.iter().any(|t| &t.name == name) {
                    return Err(Error::config(format!("layers[{i}].tasks"), format!("unknown task `{name}`")));
                }
            }
        }
        self.optimizer.validate()?;
        self.early_stop.validate()?;
        self.schedule_ids().map(|_| ())
    }

    fn schedule_ids(&self) -> Result<TrainSchedule> {
        let mut groups = Vec::with_capacity(self.schedule.len());
        for (g, names) in self.schedule.iter().enumerate() {
            let mut ids = Vec::with_capacity(names.len());
            for n in names {
                let i = self
                    .tasks
                    .iter()
                    .position(|t| &t.name == n)
                    .ok_or_else(|| Error::config(format!("schedule[{g}]"), format!("unknown task `{n}`")))?;
                ids.push(TaskId(i));
            }
            groups.push(ids);
        }
        TrainSchedule::new(groups, self.tasks.len()).map_err(|e| match e {
            Error::Config { message, .. } => Error::config("schedule", message),
            other => Error::config("schedule", other.to_string()),
        })
    }

    pub fn schedule(&self) -> Result<TrainSchedule> {
        self.schedule_ids()
    }

    /// Every referenced data directory must exist under `root`.
    pub fn check_data(&self, root: &Path) -> Result<()> {
        for t in &self.tasks {
            let dir = match &t.data {
                DatasetSpec::Idx { dir, .. } | DatasetSpec::CsvRegression { dir } | DatasetSpec::TextSentiment { dir, .. } => dir,
            };
            let p = root.join(dir);
            if !p.is_dir() {
                return Err(Error::Input(format!("data for `{}` not found at {}", t.name, p.display())));
            }
        }
        Ok(())
    }

    pub fn prune_config(&self) -> PruneConfig {
        PruneConfig {
            keep_fraction: self.tasks.iter().map(|t| t.keep_fraction).collect(),
            probe_batch_size: self.probe_batch_size,
            seed: self.seed,
        }
    }

    pub fn task_specs(&self) -> Vec<TaskSpec> {
        self.tasks
            .iter()
            .map(|t| TaskSpec {
                name: t.name.clone(),
                loss: t.loss,
                input_dims: t.data.input_dims(),
            })
            .collect()
    }

    /// Freshly initialized model; also checks heads against the data and
    /// the keep-fraction sum of every shared layer.
    pub fn build_model(&self) -> Result<MultitaskModel> {
        self.validate()?;
        let mut rng = Rng::new(self.seed).derive(TAG_INIT);
        let model = MultitaskModel::new(&self.task_specs(), &self.layers, &mut rng).map_err(|e| match e {
            e @ Error::Config { .. } => e,
            other => Error::config("layers", other.to_string()),
        })?;
        for (i, t) in self.tasks.iter().enumerate() {
            let out: usize = model.tasks()[i].output_dims.iter().product();
            let want = match (t.loss, t.data.classes()) {
                (LossKind::CategoricalCrossEntropy, Some(c)) => c,
                (LossKind::BinaryCrossEntropy, Some(2)) | (LossKind::MeanSquaredError, None) => 1,
                (loss, classes) => {
                    return Err(Error::config(
                        format!("tasks[{i}].loss"),
                        format!("{loss:?} does not fit a dataset with {classes:?} classes"),
                    ))
                }
            };
            if out != want {
                return Err(Error::config(
                    format!("tasks[{i}]"),
                    format!("`{}` head has {out} outputs, data needs {want}", t.name),
                ));
            }
        }
        self.prune_config().validate(&model)?;
        Ok(model)
    }

    pub fn data_seed(&self, task: usize) -> u64 {
        Rng::new(self.seed).derive(TAG_DATA + task as u64).seed()
    }
}

/// `RSN2_DATA_ROOT`, else `./data`, else the workspace `data/` directory.
pub fn data_root() -> PathBuf {
    if let Some(p) = std::env::var_os(DATA_ROOT_ENV) {
        return PathBuf::from(p);
    }
    let local = PathBuf::from("data");
    if local.is_dir() {
        return local;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub test_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
}

/// Written once at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_sha256: String,
    pub library_version: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub completed_groups: usize,
    pub metrics: Vec<TaskMetrics>,
    /// Run-relative path to SHA-256 hex.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from `checkpoint.ckpt` when the run directory has one.
    pub resume: bool,
    /// Stop after this many groups (checkpoint only, no final exports).
    pub stop_after_groups: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub model: MultitaskModel,
    pub manifest: Option<RunManifest>,
    pub evals: Vec<EvalReport>,
    pub forgetting: ForgettingLog,
    pub disjointness: Vec<DisjointnessReport>,
    pub bounds: Vec<BoundLine>,
}

struct DiskObserver {
    dir: PathBuf,
    metrics: fs::File,
    seed: u64,
}

impl RunObserver for DiskObserver {
    fn record(&mut self, record: &HistoryRecord) {
        if let Err(e) = writeln!(self.metrics, "{}", record.to_json()) {
            log::error!("metrics write failed: {e}");
        }
    }

    fn group_done(&mut self, group: usize, model: &MultitaskModel, ledger: &AvailabilityLedger, state: &OptimizerState) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io("metrics.jsonl", e))?;
        let bytes = save_checkpoint(&Checkpoint {
            model: model.clone(),
            ledger: ledger.clone(),
            optimizer: Some(state.clone()),
            rng: Rng::new(self.seed).state(),
            completed_groups: group,
        })?;
        write_atomic(&self.dir.join("checkpoints").join(format!("group-{group}.ckpt")), &bytes)?;
        write_atomic(&self.dir.join("checkpoint.ckpt"), &bytes)?;
        log::info!("group {group} done; checkpoint written");
        Ok(())
    }
}

/// Data streams for every task in config order, with fitted preprocessing.
pub fn load_streams(cfg: &ExperimentConfig, root: &Path) -> Result<(Vec<TaskStreams>, BTreeMap<String, Preprocessing>)> {
    let mut streams = Vec::with_capacity(cfg.tasks.len());
    let mut prep = BTreeMap::new();
    for (i, t) in cfg.tasks.iter().enumerate() {
        let d = t.data.load(root, cfg.data_seed(i), None)?;
        log::info!("{}: {} train, {} test samples", t.name, d.train.len(), d.test.len());
        let mut rng = Rng::new(cfg.seed).derive(TAG_SPLIT + i as u64);
        streams.push(TaskStreams::split(&d.train, d.test, t.batch_size, cfg.validation_fraction, &mut rng)?);
        prep.insert(t.name.clone(), d.preprocessing);
    }
    Ok((streams, prep))
}

fn forgetting_from_metrics(path: &Path) -> Result<ForgettingLog> {
    let mut log = ForgettingLog::default();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: HistoryRecord =
            serde_json::from_str(line).map_err(|e| Error::Input(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if r.event == "forgetting" {
            log.push(ForgettingRow {
                after_group: r.after_group.unwrap_or(0),
                task: r.task,
                test_loss: r.loss,
                test_metric: r.metric.unwrap_or(f64::NAN),
            });
        }
    }
    Ok(log)
}

fn write_text(dir: &Path, name: &str, text: &str, artifacts: &mut BTreeMap<String, String>) -> Result<()> {
    write_atomic(&dir.join(name), text.as_bytes())?;
    artifacts.insert(name.to_string(), sha256_hex(text.as_bytes()));
    Ok(())
}

/// Select, commit and train every schedule group, then write all artifacts
/// into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, config_bytes: &[u8], root: &Path, out: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let started = Instant::now();
    let mut model = cfg.build_model()?;
    cfg.check_data(root)?;
    let schedule = cfg.schedule()?;
    let prune = cfg.prune_config();
    let (streams, prep) = load_streams(cfg, root)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;

    let ck_path = out.join("checkpoint.ckpt");
    let mut state = RunState::fresh(&model);
    let resuming = opts.resume && ck_path.is_file();
    if resuming {
        let ck = load_checkpoint(&read_file(&ck_path)?)?;
        if ck.model.tasks() != model.tasks() || ck.model.layers().len() != model.layers().len() {
            return Err(Error::Input(format!("{} belongs to a different model", ck_path.display())));
        }
        log::info!("resuming after group {}", ck.completed_groups);
        model = ck.model;
        state = RunState {
            ledger: ck.ledger,
            optimizer: ck.optimizer.unwrap_or_default(),
            completed_groups: ck.completed_groups,
        };
    }
    write_atomic(&out.join("config.toml"), config_bytes)?;
    let metrics_path = out.join("metrics.jsonl");
    let metrics = fs::OpenOptions::new()
        .create(true)
        .append(resuming)
        .write(true)
        .truncate(!resuming)
        .open(&metrics_path)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    let mut observer = DiskObserver {
        dir: out.to_path_buf(),
        metrics,
        seed: cfg.seed,
    };
    let mut limited = schedule.clone();
    if let Some(k) = opts.stop_after_groups {
        limited.groups.truncate(k.max(state.completed_groups));
    }
    let outcome = run_schedule(
        &mut model,
        &streams,
        RunConfig {
            schedule: &limited,
            prune: &prune,
            optimizer: &cfg.optimizer,
            early_stop: &cfg.early_stop,
            seed: cfg.seed,
        },
        &mut state,
        &mut observer,
    )?;
    drop(observer);
    let disjointness = disjointness_check_all(&model);
    let forgetting = forgetting_from_metrics(&metrics_path)?;
    let mut summary = RunSummary {
        dir: out.to_path_buf(),
        model,
        manifest: None,
        evals: outcome.evals,
        forgetting,
        disjointness,
        bounds: Vec::new(),
    };
    if state.completed_groups < schedule.groups.len() {
        return Ok(summary);
    }

    let mut artifacts = BTreeMap::new();
    artifacts.insert("config.toml".into(), sha256_hex(config_bytes));
    artifacts.insert("metrics.jsonl".into(), sha256_hex(&read_file(&metrics_path)?));
    artifacts.insert("checkpoint.ckpt".into(), sha256_hex(&read_file(&ck_path)?));
    write_text(out, "forgetting.csv", &summary.forgetting.to_csv(), &mut artifacts)?;
    let report: String = outcome.prune_report.iter().map(|l| format!("{l}\n")).collect();
    write_text(out, "prune_report.txt", &report, &mut artifacts)?;
    let dj = serde_json::to_string_pretty(&summary.disjointness).expect("reports serialize");
    write_text(out, "disjointness.json", &dj, &mut artifacts)?;
    let pp = serde_json::to_string_pretty(&prep).expect("preprocessing serializes");
    write_text(out, "preprocessing.json", &pp, &mut artifacts)?;

    let smt = export_sparse(&summary.model)?;
    summary.bounds = check_entry_bound(&parse_sparse(&smt)?, &prune.keep_fraction)?;
    write_atomic(&out.join("model.smt"), &smt)?;
    artifacts.insert("model.smt".into(), sha256_hex(&smt));
    for t in 0..summary.model.task_count() {
        let name = &summary.model.tasks()[t].name;
        let dense = export_dense_task(&summary.model, TaskId(t))?;
        let rel = format!("dense/{name}.dense");
        write_atomic(&out.join(&rel), &dense)?;
        artifacts.insert(rel, sha256_hex(&dense));
        let ev = serde_json::to_string_pretty(&summary.evals[t]).expect("reports serialize");
        write_text(out, &format!("eval/{name}.json"), &ev, &mut artifacts)?;
    }
    let manifest = RunManifest {
        name: cfg.name.clone(),
        config_sha256: sha256_hex(config_bytes),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        completed_groups: state.completed_groups,
        metrics: summary
            .evals
            .iter()
            .map(|e| TaskMetrics {
                task: e.task.clone(),
                test_loss: e.loss,
                accuracy: e.accuracy,
                mse: e.mse,
            })
            .collect(),
        artifacts,
    };
    let mj = serde_json::to_string_pretty(&manifest).expect("manifests serialize");
    write_atomic(&out.join("manifest.json"), mj.as_bytes())?;
    summary.manifest = Some(manifest);
    Ok(summary)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let p = dir.join("manifest.json");
    let bytes = read_file(&p)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(e.column() as u64, format!("{}: {e}", p.display())))
}

/// Every artifact listed in the manifest must hash to its recorded value.
pub fn verify_artifacts(dir: &Path, manifest: &RunManifest) -> Result<()> {
    for (rel, want) in &manifest.artifacts {
        let got = sha256_hex(&read_file(&dir.join(rel))?);
        if &got != want {
            let head = |h: &str| u64::from_str_radix(&h[..16.min(h.len())], 16).unwrap_or(0);
            log::error!("{rel}: sha256 {got} does not match the manifest");
            return Err(Error::Checksum {
                stored: head(want),
                computed: head(&got),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub manifest: RunManifest,
    /// `after_group,task,loss` rows.
    pub curve_csv: String,
    pub rows: usize,
    pub size: SizeReport,
}

/// Forgetting curve and disk-size comparison of a finished run.
pub fn report(dir: &Path) -> Result<RunReport> {
    let manifest = read_manifest(dir)?;
    verify_artifacts(dir, &manifest)?;
    let log = forgetting_from_metrics(&dir.join("metrics.jsonl"))?;
    let mut curve_csv = String::from("after_group,task,loss\n");
    for r in log.rows() {
        curve_csv.push_str(&format!("{},{},{}\n", r.after_group, r.task, r.test_loss));
    }
    let dense: Vec<PathBuf> = manifest.artifacts.keys().filter(|k| k.starts_with("dense/")).map(|k| dir.join(k)).collect();
    let size = size_report(&dir.join("model.smt"), &dense)?;
    Ok(RunReport {
        manifest,
        curve_csv,
        rows: log.rows().len(),
        size,
    })
}

/// Config and fitted preprocessing stored beside a model file (or one
/// directory up, for files under `checkpoints/`).
pub fn run_context(model_path: &Path) -> Result<(ExperimentConfig, BTreeMap<String, Preprocessing>)> {
    let mut dir = model_path.parent().map(Path::to_path_buf).unwrap_or_default();
    if !dir.join("config.toml").is_file() {
        if let Some(up) = dir.parent() {
            dir = up.to_path_buf();
        }
    }
    let (cfg, _) = ExperimentConfig::load(&dir.join("config.toml"))?;
    let pp = dir.join("preprocessing.json");
    let prep = if pp.is_file() {
        serde_json::from_slice(&read_file(&pp)?).map_err(|e| Error::Input(format!("{}: {e}", pp.display())))?
    } else {
        BTreeMap::new()
    };
    Ok((cfg, prep))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
name = "mini"
seed = 3
schedule = [["a", "b"], ["c"]]

[optimizer]
kind = "adam"
learning_rate = 0.001

[early_stop]
patience = 2
max_epochs = 4

[[tasks]]
name = "a"
loss = "categorical_cross_entropy"
keep_fraction = 0.3
data = { kind = "idx", dir = "mnist", max_train = 100 }

[[tasks]]
name = "b"
loss = "categorical_cross_entropy"
keep_fraction = 0.3
data = { kind = "idx", dir = "fashion", classes = [0, 1] }

[[tasks]]
name = "c"
loss = "mean_squared_error"
keep_fraction = 0.3
batch_size = 32
data = { kind = "csv_regression", dir = "boston" }

[[layers]]
kind = "dense"
units = 784
activation = "relu"
tasks = ["c"]

[[layers]]
kind = "dense"
units = 16
activation = "relu"

[[layers]]
kind = "dense"
units = 10
activation = "softmax"
tasks = ["a"]

[[layers]]
kind = "dense"
units = 2
activation = "softmax"
tasks = ["b"]

[[layers]]
kind = "dense"
units = 1
tasks = ["c"]
"#;

    #[test]
    fn config_round_trip() {
        let c = ExperimentConfig::from_toml(MINI).unwrap();
        assert_eq!(c.early_stop.min_delta, 0.01);
        assert_eq!(c.tasks[0].batch_size, 512);
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        c.validate().unwrap();
    }

    #[test]
    fn mini_builds_with_heads_checked() {
        let c = ExperimentConfig::from_toml(MINI).unwrap();
        let m = c.build_model().unwrap();
        assert_eq!(m.task_count(), 3);
        assert_eq!(m.path(TaskId(2)), vec![0, 1, 4]);
        let mut wrong = c.clone();
        wrong.layers[3].spec = crate::nn::LayerSpec::dense(3, crate::nn::Activation::Softmax);
        assert!(matches!(wrong.build_model(), Err(Error::Config { .. })));
    }

    #[test]
    fn oversubscribed_fractions_name_the_constraint() {
        let mut c = ExperimentConfig::from_toml(MINI).unwrap();
        for t in &mut c.tasks {
            t.keep_fraction = 0.4;
        }
        match c.build_model() {
            Err(e @ Error::Config { .. }) => {
                assert_eq!(e.exit_code(), 2);
                assert!(e.to_string().contains("t·p ≤ 1"), "{e}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn field_paths_in_errors() {
        let mut c = ExperimentConfig::from_toml(MINI).unwrap();
        c.tasks[1].batch_size = 0;
        assert!(c.validate().unwrap_err().to_string().contains("tasks[1].batch_size"));
        let mut c = ExperimentConfig::from_toml(MINI).unwrap();
        c.schedule = vec![vec!["a".into()], vec!["c".into()]];
        assert!(c.validate().unwrap_err().to_string().contains("schedule"));
        assert!(ExperimentConfig::from_toml("name = 1").is_err());
        assert!(ExperimentConfig::from_toml(&format!("bogus = 1\n{MINI}")).is_err());
    }

    #[test]
    fn missing_data_is_input_error() {
        let c = ExperimentConfig::from_toml(MINI).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let e = c.check_data(dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn shipped_configs_build() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().and_then(|e| e.to_str()) != Some("toml") {
                continue;
            }
            let (cfg, _) = ExperimentConfig::load(&path).unwrap();
            let model = cfg.build_model().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            // Ceiling budgets of all tasks sharing a layer must fit, or selection fails mid-run.
            for (i, layer) in model.layers().iter().enumerate() {
                let Some(p) = layer.masked() else { continue };
                let need: usize =
                    layer.tasks.iter().map(|t| crate::prune::budget(cfg.tasks[t.0].keep_fraction, p.slice_len())).sum();
                assert!(need <= p.slice_len(), "{}: layer {i} needs {need} of {}", path.display(), p.slice_len());
            }
            n += 1;
        }
        assert!(n >= 8);
    }
}
