//! Layers, activations and losses with hand-written backward passes.

mod loss;
mod network;
mod ops;

pub use loss::{loss_and_grad, loss_value, softmax_rows};
pub use network::{GradientBundle, Layer, Network, ParamGrad, Trace};
pub use ops::{
    apply_activation, conv2d_forward, dense_forward, embedding_forward, maxpool_forward,
    MaxPoolOutput,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Only valid on the final layer, where it is fused into cross-entropy.
    Softmax,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Takes logits; softmax is applied inside the loss.
    CategoricalCrossEntropy,
    MeanSquaredError,
    /// Takes logits; the sigmoid is applied inside the loss.
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    /// Zero padding that preserves height and width (stride 1). For even
    /// filter sizes the extra row/column goes to the bottom/right.
    Same,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        size: [usize; 2],
        #[serde(default)]
        padding: Padding,
    },
    /// 2×2 max pooling, stride 2; an odd trailing row/column is dropped.
    MaxPool2,
    Flatten,
    /// Token lookup. Token id 0 is padding.
    Embedding {
        vocab: usize,
        dim: usize,
        #[serde(default)]
        freeze_padding: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Identity
}

impl LayerSpec {
    pub fn new(kind: LayerKind, activation: Activation) -> Self {
        Self { kind, activation }
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        Self::new(LayerKind::Dense { units }, activation)
    }

    pub fn conv2d(filters: usize, size: [usize; 2], padding: Padding, activation: Activation) -> Self {
        Self::new(
            LayerKind::Conv2d {
                filters,
                size,
                padding,
            },
            activation,
        )
    }

    pub fn maxpool() -> Self {
        Self::new(LayerKind::MaxPool2, Activation::Identity)
    }

    pub fn flatten() -> Self {
        Self::new(LayerKind::Flatten, Activation::Identity)
    }

    pub fn embedding(vocab: usize, dim: usize) -> Self {
        Self::new(
            LayerKind::Embedding {
                vocab,
                dim,
                freeze_padding: false,
            },
            Activation::Identity,
        )
    }

    /// Whether the layer owns a kernel that task masks apply to.
    pub fn is_maskable(&self) -> bool {
        matches!(self.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
    }

    pub fn has_params(&self) -> bool {
        !matches!(self.kind, LayerKind::MaxPool2 | LayerKind::Flatten)
    }

    /// Per-sample output extents for per-sample input extents.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: &str| {
            Error::Shape(format!(
                "{:?} layer cannot take per-sample input {input:?} (expected {expected})",
                self.kind
            ))
        };
        match &self.kind {
            LayerKind::Dense { units } => match input {
                [_] => Ok(vec![*units]),
                _ => Err(mismatch("a flat vector")),
            },
            LayerKind::Conv2d {
                filters,
                size,
                padding,
            } => match input {
                &[h, w, _] => match padding {
                    Padding::Same => Ok(vec![h, w, *filters]),
                    Padding::Valid => {
                        if h < size[0] || w < size[1] {
                            return Err(mismatch("spatial extent at least the filter size"));
                        }
                        Ok(vec![h - size[0] + 1, w - size[1] + 1, *filters])
                    }
                },
                _ => Err(mismatch("height x width x channels")),
            },
            LayerKind::MaxPool2 => match input {
                &[h, w, c] if h >= 2 && w >= 2 => Ok(vec![h / 2, w / 2, c]),
                _ => Err(mismatch("height, width >= 2")),
            },
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Embedding { dim, .. } => match input {
                &[len] => Ok(vec![len, *dim]),
                _ => Err(mismatch("a token sequence")),
            },
        }
    }

    /// Kernel and bias extents for per-sample input extents, or `None` for
    /// parameter-free layers. Embeddings have a table but no bias.
    pub fn param_dims(&self, input: &[usize]) -> Result<Option<(Vec<usize>, Option<Vec<usize>>)>> {
        self.output_dims(input)?;
        Ok(match &self.kind {
            LayerKind::Dense { units } => Some((vec![input[0], *units], Some(vec![*units]))),
            LayerKind::Conv2d { filters, size, .. } => Some((
                vec![size[0], size[1], input[2], *filters],
                Some(vec![*filters]),
            )),
            LayerKind::Embedding { vocab, dim, .. } => Some((vec![*vocab, *dim], None)),
            LayerKind::MaxPool2 | LayerKind::Flatten => None,
        })
    }
}
