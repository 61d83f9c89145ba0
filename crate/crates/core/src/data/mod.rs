//! Loading, preprocessing and batching of the image, tabular and text
//! datasets.

mod idx;
mod scale;
mod tabular;
mod text;

pub use idx::{decode_idx, encode_idx, load_idx, load_idx_images, load_idx_labels, IdxArray, IMAGES_MAGIC, LABELS_MAGIC};
pub use scale::{fit_apply_minmax, resample_area, scale_pixels, MinMaxScaler};
pub use tabular::{load_regression_csv, BOSTON_HEADER};
pub use text::{load_sentiment_dir, tokenize, tokenize_pad, tokenize_pad_len, Vocab, MAX_WORDS, PAD, SEQUENCE_LEN, UNKNOWN};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multitask::TaskId;
use crate::nn::LossKind;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Inputs and targets with a shared leading sample dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Tensor,
}

impl Dataset {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if x.dims()[0] != y.dims()[0] {
            return Err(Error::Dimension {
                op: "dataset",
                left: x.dims().to_vec(),
                right: y.dims().to_vec(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample input extents.
    pub fn sample_dims(&self) -> &[usize] {
        &self.x.dims()[1..]
    }

    /// Samples at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            x: gather_rows(&self.x, indices)?,
            y: gather_rows(&self.y, indices)?,
        })
    }

    /// Seeded holdout of `fraction` of the samples: `(train, validation)`.
    pub fn split_validation(&self, fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        if n < 2 {
            return Err(Error::Input(format!("cannot hold out validation data from {n} samples")));
        }
        let k = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        let order = rng.permutation(n);
        Ok((self.gather(&order[k..])?, self.gather(&order[..k])?))
    }

    /// Keep only samples whose label is in `classes`, relabelled to the
    /// position of their class in the list.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Dataset> {
        if self.y.dims().len() != 1 {
            return Err(Error::Shape("class selection needs a [n] label vector".into()));
        }
        let mut keep = Vec::new();
        let mut labels = Vec::new();
        for (i, &v) in self.y.data().iter().enumerate() {
            if let Some(pos) = classes.iter().position(|&c| c as f32 == v) {
                keep.push(i);
                labels.push(pos as f32);
            }
        }
        if keep.is_empty() {
            return Err(Error::Input(format!("no samples of classes {classes:?}")));
        }
        Dataset::new(gather_rows(&self.x, &keep)?, Tensor::vector(labels)?)
    }

    /// A seeded random subset of at most `n` samples, in original order.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Dataset> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut idx = rng.permutation(self.len());
        idx.truncate(n);
        idx.sort_unstable();
        self.gather(&idx)
    }

    pub fn reshape_inputs(self, dims: &[usize]) -> Result<Dataset> {
        let mut full = vec![self.len()];
        full.extend_from_slice(dims);
        Ok(Dataset {
            x: self.x.reshape(full)?,
            y: self.y,
        })
    }
}

fn gather_rows(t: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let n = t.dims()[0];
    let row = t.len() / n;
    let mut out = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        if i >= n {
            return Err(Error::Bounds(format!("sample {i} of {n}")));
        }
        out.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut dims = t.dims().to_vec();
    dims[0] = indices.len();
    if indices.is_empty() {
        return Err(Error::Input("empty selection".into()));
    }
    Tensor::new(dims, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub task: TaskId,
}

impl Batch {
    /// Leading dims agree and targets suit the loss and output width.
    pub fn validate(&self, loss: LossKind, outputs: usize) -> Result<()> {
        let b = self.x.dims()[0];
        if self.y.dims()[0] != b {
            return Err(Error::Dimension {
                op: "batch",
                left: self.x.dims().to_vec(),
                right: self.y.dims().to_vec(),
            });
        }
        match loss {
            LossKind::CategoricalCrossEntropy => {
                if let Some(v) = self.y.data().iter().find(|&&v| v < 0.0 || v.fract() != 0.0 || v as usize >= outputs) {
                    return Err(Error::Input(format!("label {v} invalid for {outputs} classes")));
                }
            }
            LossKind::BinaryCrossEntropy => {
                if self.y.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::Input("binary targets must lie in [0, 1]".into()));
                }
            }
            LossKind::MeanSquaredError => {
                if self.y.len() != b * outputs {
                    return Err(Error::Dimension {
                        op: "batch",
                        left: self.y.dims().to_vec(),
                        right: vec![b, outputs],
                    });
                }
            }
        }
        Ok(())
    }
}

/// One epoch of shuffled batches; the last batch may be short.
#[derive(Debug)]
pub struct BatchIterator<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    task: TaskId,
}

pub fn batch_iterator<'a>(data: &'a Dataset, batch_size: usize, task: TaskId, rng: &mut Rng) -> Result<BatchIterator<'a>> {
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Input("batch size must be positive".into()));
    }
    Ok(BatchIterator {
        data,
        order: rng.permutation(data.len()),
        batch_size,
        pos: 0,
        task,
    })
}

impl BatchIterator<'_> {
    pub fn batches_left(&self) -> usize {
        (self.order.len() - self.pos).div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let d = self.data.gather(&self.order[self.pos..end]).expect("indices come from a permutation");
        self.pos = end;
        Some(Batch {
            x: d.x,
            y: d.y,
            task: self.task,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageLayout {
    /// `[h·w·c]` vectors for dense inputs.
    #[default]
    Flat,
    /// `[h × w × c]` for convolutions.
    Image,
}

fn default_true() -> bool {
    true
}

fn default_max_words() -> usize {
    MAX_WORDS
}

fn default_seq_len() -> usize {
    SEQUENCE_LEN
}

/// Where a task's data lives and how it is preprocessed. Paths are relative
/// to the data root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
    /// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte` under `dir`.
    Idx {
        dir: PathBuf,
        #[serde(default)]
        classes: Option<Vec<usize>>,
        #[serde(default)]
        max_train: Option<usize>,
        #[serde(default)]
        max_test: Option<usize>,
        #[serde(default)]
        resize: Option<[usize; 2]>,
        #[serde(default)]
        layout: ImageLayout,
        #[serde(default = "default_true")]
        scale: bool,
    },
    /// `train.csv` and `test.csv` with the housing header; features and
    /// targets min-max scaled on the training split.
    CsvRegression { dir: PathBuf },
    /// `train/{neg,pos}` and `test/{neg,pos}` text directories.
    TextSentiment {
        dir: PathBuf,
        #[serde(default = "default_max_words")]
        max_words: usize,
        #[serde(default = "default_seq_len")]
        seq_len: usize,
        #[serde(default)]
        max_train: Option<usize>,
        #[serde(default)]
        max_test: Option<usize>,
    },
}

/// Fitted preprocessing state, saved next to a trained model so that test
/// data is transformed exactly as during training.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Preprocessing {
    #[serde(default)]
    pub vocab: Option<Vocab>,
    #[serde(default)]
    pub feature_scaler: Option<MinMaxScaler>,
    #[serde(default)]
    pub target_scaler: Option<MinMaxScaler>,
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
    pub preprocessing: Preprocessing,
}

impl DatasetSpec {
    /// Number of classes for classification sources.
    pub fn classes(&self) -> Option<usize> {
        match self {
            DatasetSpec::Idx { classes, .. } => Some(classes.as_ref().map_or(10, Vec::len)),
            DatasetSpec::CsvRegression { .. } => None,
            DatasetSpec::TextSentiment { .. } => Some(2),
        }
    }

    /// Per-sample input extents after preprocessing.
    pub fn input_dims(&self) -> Vec<usize> {
        match self {
            DatasetSpec::Idx { resize, layout, .. } => {
                let [h, w] = resize.unwrap_or([28, 28]);
                match layout {
                    ImageLayout::Flat => vec![h * w],
                    ImageLayout::Image => vec![h, w, 1],
                }
            }
            DatasetSpec::CsvRegression { .. } => vec![BOSTON_HEADER.len() - 1],
            DatasetSpec::TextSentiment { seq_len, .. } => vec![*seq_len],
        }
    }

    /// Load both splits under `root`. Fitted statistics come from `fitted`
    /// when given, otherwise from the training split.
    pub fn load(&self, root: &Path, seed: u64, fitted: Option<&Preprocessing>) -> Result<TaskData> {
        let mut rng = Rng::new(seed);
        match self {
            DatasetSpec::Idx {
                dir,
                classes,
                max_train,
                max_test,
                resize,
                layout,
                scale,
            } => {
                let d = root.join(dir);
                let split = |img: &str, lab: &str, max: &Option<usize>, rng: &mut Rng| -> Result<Dataset> {
                    let (x, y) = load_idx(&d.join(img), &d.join(lab))?;
                    let mut ds = Dataset::new(x, y)?;
                    if let Some(c) = classes {
                        ds = ds.select_classes(c)?;
                    }
                    if let Some(m) = max {
                        ds = ds.sample(*m, rng)?;
                    }
                    let n = ds.len();
                    let (h, w) = (ds.x.dims()[1], ds.x.dims()[2]);
                    let mut x = ds.x.reshape(vec![n, h, w, 1])?;
                    if let Some([oh, ow]) = resize {
                        x = resample_area(&x, *oh, *ow)?;
                    }
                    if *scale {
                        x = scale_pixels(&x);
                    }
                    let (h, w) = (x.dims()[1], x.dims()[2]);
                    let x = match layout {
                        ImageLayout::Flat => x.reshape(vec![n, h * w])?,
                        ImageLayout::Image => x,
                    };
                    Dataset::new(x, ds.y)
                };
                let train = split("train-images-idx3-ubyte", "train-labels-idx1-ubyte", max_train, &mut rng)?;
                let test = split("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", max_test, &mut rng)?;
                Ok(TaskData {
                    train,
                    test,
                    preprocessing: Preprocessing::default(),
                })
            }
            DatasetSpec::CsvRegression { dir } => {
                let d = root.join(dir);
                let (xtr, ytr) = load_regression_csv(&d.join("train.csv"), &BOSTON_HEADER)?;
                let (xte, yte) = load_regression_csv(&d.join("test.csv"), &BOSTON_HEADER)?;
                let (fx, fy) = match fitted {
                    Some(Preprocessing {
                        feature_scaler: Some(fx),
                        target_scaler: Some(fy),
                        ..
                    }) => (fx.clone(), fy.clone()),
                    _ => (MinMaxScaler::fit(&xtr)?, MinMaxScaler::fit(&ytr)?),
                };
                Ok(TaskData {
                    train: Dataset::new(fx.transform(&xtr)?, fy.transform(&ytr)?)?,
                    test: Dataset::new(fx.transform(&xte)?, fy.transform(&yte)?)?,
                    preprocessing: Preprocessing {
                        vocab: None,
                        feature_scaler: Some(fx),
                        target_scaler: Some(fy),
                    },
                })
            }
            DatasetSpec::TextSentiment {
                dir,
                max_words,
                seq_len,
                max_train,
                max_test,
            } => {
                let d = root.join(dir);
                let (tr_text, tr_lab) = load_sentiment_dir(&d.join("train"))?;
                let (te_text, te_lab) = load_sentiment_dir(&d.join("test"))?;
                let vocab = match fitted.and_then(|p| p.vocab.as_ref()) {
                    Some(v) => v.clone(),
                    None => Vocab::build(tr_text.iter().map(String::as_str), *max_words),
                };
                let mk = |texts: &[String], labels: Vec<f32>, max: &Option<usize>, rng: &mut Rng| -> Result<Dataset> {
                    let ds = Dataset::new(tokenize_pad_len(texts, &vocab, *seq_len)?, Tensor::vector(labels)?)?;
                    match max {
                        Some(m) => ds.sample(*m, rng),
                        None => Ok(ds),
                    }
                };
                let train = mk(&tr_text, tr_lab, max_train, &mut rng)?;
                let test = mk(&te_text, te_lab, max_test, &mut rng)?;
                Ok(TaskData {
                    train,
                    test,
                    preprocessing: Preprocessing {
                        vocab: Some(vocab),
                        ..Preprocessing::default()
                    },
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset {
        Dataset::new(
            Tensor::new(vec![n, 2], (0..2 * n).map(|i| i as f32).collect()).unwrap(),
            Tensor::vector((0..n).map(|i| (i % 3) as f32).collect()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let d = toy(10);
        let sizes: Vec<usize> = batch_iterator(&d, 4, TaskId(0), &mut Rng::new(1)).unwrap().map(|b| b.x.dims()[0]).collect();
        assert_eq!(sizes, [4, 4, 2]);
        let a: Vec<Batch> = batch_iterator(&d, 4, TaskId(0), &mut Rng::new(5)).unwrap().collect();
        let b: Vec<Batch> = batch_iterator(&d, 4, TaskId(0), &mut Rng::new(5)).unwrap().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_zero_batch_rejected() {
        let d = toy(3);
        assert!(batch_iterator(&d, 0, TaskId(0), &mut Rng::new(1)).is_err());
    }

    #[test]
    fn class_selection_relabels() {
        let d = toy(6).select_classes(&[2, 0]).unwrap();
        assert_eq!(d.y.data(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(d.x.data()[..2], [0.0, 1.0]);
    }

    #[test]
    fn validation_split_partitions() {
        let d = toy(20);
        let (tr, va) = d.split_validation(0.1, &mut Rng::new(3)).unwrap();
        assert_eq!((tr.len(), va.len()), (18, 2));
    }

    #[test]
    fn batch_validation() {
        let b = Batch {
            x: Tensor::zeros(vec![2, 3]).unwrap(),
            y: Tensor::vector(vec![0.0, 4.0]).unwrap(),
            task: TaskId(0),
        };
        assert!(b.validate(LossKind::CategoricalCrossEntropy, 5).is_ok());
        assert!(b.validate(LossKind::CategoricalCrossEntropy, 4).is_err());
        assert!(b.validate(LossKind::MeanSquaredError, 1).is_ok());
    }

    proptest! {
        #[test]
        fn batches_cover_dataset_once(n in 1usize..60, bs in 1usize..16, seed in any::<u64>()) {
            let d = toy(n);
            let mut seen: Vec<f32> = batch_iterator(&d, bs, TaskId(0), &mut Rng::new(seed)).unwrap()
                .flat_map(|b| b.x.data().iter().step_by(2).copied().collect::<Vec<_>>())
                .collect();
            seen.sort_by(f32::total_cmp);
            let want: Vec<f32> = (0..n).map(|i| (2 * i) as f32).collect();
            prop_assert_eq!(seen, want);
        }
    }
}
